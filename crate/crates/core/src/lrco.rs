//! The learned robust optimizer: a minimizer policy proposes candidate
//! decisions and a maximizer ensemble scores their worst case.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maximizer::{train_maximizer, MaximizerEnsemble, MaximizerTrainConfig, MaximizerTrainReport, Query, DEFAULT_HIDDEN, DEFAULT_LAMBDAS};
use crate::minimizer::{train_minimizer, MinimizerPolicy, MinimizerTrainReport, NominalCost, TrainConfig, WorstCaseOracle};
use crate::problem::{sample_binary, ContextSample, CostFunction, Decision, DecisionSpace, UncertaintySet};
use crate::scalar::Real;

pub const MODEL_SCHEMA: &str = "lrco-model v1";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T> {
    pub decision: Decision,
    /// Scored cost of the chosen decision.
    pub cost: T,
    /// Distinct candidates scored.
    pub evaluated: usize,
}

/// Deduplicates `candidates`, scores them with `oracle` and returns the
/// cheapest; ties go to the lexicographically smaller decision.
pub fn select_min<T, F, O>(x: &[T], cost: &F, mut candidates: Vec<Decision>, oracle: &O) -> Result<Inference<T>>
where
    T: Real,
    F: CostFunction<T>,
    O: WorstCaseOracle<T, F> + ?Sized,
{
    if candidates.is_empty() {
        return Err(Error::Config("no candidates to select from".into()));
    }
    candidates.sort_unstable();
    candidates.dedup();
    let queries: Vec<Query<'_, T, F>> = candidates.iter().map(|d| (x, cost, d)).collect();
    let scores = oracle.evaluate(&queries)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(Inference {
        cost: scores[best],
        evaluated: candidates.len(),
        decision: candidates.swap_remove(best),
    })
}

/// LCO inference: best nominal cost among `k` sampled candidates.
pub fn lco_infer<T, F, R>(policy: &MinimizerPolicy<T>, x: &[T], cost: &F, k: usize, rng: &mut R) -> Result<Inference<T>>
where
    T: Real,
    F: CostFunction<T>,
    R: Rng + ?Sized,
{
    select_min(x, cost, policy.sample(x, k, rng)?, &NominalCost)
}

/// LCO training: the minimizer loop supervised by the nominal cost.
pub fn lco_train<T: Real, F: CostFunction<T>>(contexts: &[ContextSample<T, F>], cfg: &TrainConfig) -> Result<(MinimizerPolicy<T>, MinimizerTrainReport)> {
    let dim = contexts
        .first()
        .ok_or_else(|| Error::Config("LCO training needs contexts".into()))?
        .x
        .len();
    let mut policy = MinimizerPolicy::new(dim, cfg.hidden, &mut stream_rng(cfg.seed, 1))?;
    let report = train_minimizer(&mut policy, contexts, &NominalCost, cfg)?;
    Ok((policy, report))
}

#[derive(Clone, Debug)]
pub struct LrcoModel<T> {
    pub policy: MinimizerPolicy<T>,
    pub ensemble: MaximizerEnsemble<T>,
    /// Candidates sampled per inference.
    pub candidates: usize,
}

impl<T: Real> LrcoModel<T> {
    pub fn new(policy: MinimizerPolicy<T>, ensemble: MaximizerEnsemble<T>, candidates: usize) -> Result<Self> {
        if policy.dim() != ensemble.dim() {
            return Err(Error::dim("policy vs ensemble", ensemble.dim(), policy.dim()));
        }
        if candidates == 0 {
            return Err(Error::Config("candidate count must be at least 1".into()));
        }
        Ok(Self {
            policy,
            ensemble,
            candidates,
        })
    }

    pub fn uncertainty(&self) -> &UncertaintySet<T> {
        self.ensemble.set()
    }

    /// Samples `self.candidates` decisions and returns the one with the
    /// smallest ensemble worst-case cost.
    pub fn infer<F: CostFunction<T>, R: Rng + ?Sized>(&self, x: &[T], cost: &F, rng: &mut R) -> Result<Inference<T>> {
        let candidates = self.policy.sample(x, self.candidates, rng)?;
        self.select(x, cost, candidates)
    }

    pub fn select<F: CostFunction<T>>(&self, x: &[T], cost: &F, candidates: Vec<Decision>) -> Result<Inference<T>> {
        select_min(x, cost, candidates, &self.ensemble)
    }

    /// Writes `model.txt`, `policy.txt` and `ensemble/` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.policy.save(&dir.join("policy.txt"))?;
        self.ensemble.save(&dir.join("ensemble"))?;
        let path = dir.join("model.txt");
        let text = format!("# {MODEL_SCHEMA}\ncandidates={}\n", self.candidates);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let src = path.display().to_string();
        let mut lines = text.lines();
        if lines.next() != Some(&format!("# {MODEL_SCHEMA}")) {
            return Err(Error::parse(&src, 1, format!("expected '# {MODEL_SCHEMA}'")));
        }
        let candidates = lines
            .next()
            .and_then(|l| l.strip_prefix("candidates="))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(&src, 2, "expected candidates=<count>"))?;
        let policy = MinimizerPolicy::load(&dir.join("policy.txt"))?;
        let ensemble = MaximizerEnsemble::load(&dir.join("ensemble"))?;
        Self::new(policy, ensemble, candidates)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrcoConfig {
    pub ensemble_hidden: usize,
    /// One penalty weight per ensemble member.
    pub lambdas: Vec<f64>,
    pub maximizer: MaximizerTrainConfig,
    pub minimizer: TrainConfig,
    /// Extra rounds of ensemble retraining plus minimizer training after the
    /// first minimizer phase.
    pub max_iterate: usize,
    /// Decisions drawn per round for ensemble training.
    pub decisions_per_iteration: usize,
    /// Contexts used for ensemble training.
    pub context_subsample: usize,
    /// Stop when validation worst-case utility improves by less than this.
    pub convergence_tol: f64,
    pub validation_contexts: usize,
    pub validation_candidates: usize,
    pub seed: u64,
}

impl Default for LrcoConfig {
    fn default() -> Self {
        Self {
            ensemble_hidden: DEFAULT_HIDDEN,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            maximizer: MaximizerTrainConfig::default(),
            minimizer: TrainConfig::default(),
            max_iterate: 3,
            decisions_per_iteration: 512,
            context_subsample: 2048,
            convergence_tol: 1e-3,
            validation_contexts: 256,
            validation_candidates: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub maximizer: Vec<MaximizerTrainReport>,
    pub minimizer: MinimizerTrainReport,
    /// Per-group mean of the policy's probabilities over training contexts.
    pub marginal: Vec<f64>,
    pub mean_entropy: f64,
    /// Mean of `−G*` over the validation subset, if any.
    pub validation_utility: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationLog>,
    /// Iteration at which the validation improvement fell below tolerance.
    pub converged_at: Option<usize>,
}

/// `(1/|D|) Σ_x p(a_i = 1 | x)` per group.
pub fn marginal_distribution<T: Real, F>(policy: &MinimizerPolicy<T>, contexts: &[ContextSample<T, F>]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; policy.dim()];
    for c in contexts {
        for (a, p) in acc.iter_mut().zip(policy.decision_distribution(&c.x)?) {
            *a += p.as_f64();
        }
    }
    let n = contexts.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Mean binary entropy in bits.
pub fn mean_entropy(p_one: &[f64]) -> f64 {
    let h = |p: f64| {
        if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
        }
    };
    p_one.iter().map(|&p| h(p)).sum::<f64>() / p_one.len().max(1) as f64
}

fn train_ensemble<T: Real, F: CostFunction<T>>(
    ensemble: &mut MaximizerEnsemble<T>,
    contexts: &[ContextSample<T, F>],
    decisions: &[Decision],
    cfg: &LrcoConfig,
    round: usize,
) -> Result<Vec<MaximizerTrainReport>> {
    ensemble
        .members_mut()
        .iter_mut()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = stream_rng(cfg.seed, 1000 + (round as u64) * 64 + i as u64);
            train_maximizer(m, contexts, decisions, &cfg.maximizer, &mut rng)
        })
        .collect()
}

fn validation_utility<T: Real, F: CostFunction<T>>(model: &LrcoModel<T>, val: &[ContextSample<T, F>], cfg: &LrcoConfig) -> Result<Option<f64>> {
    let n = val.len().min(cfg.validation_contexts);
    if n == 0 {
        return Ok(None);
    }
    let mut rng = stream_rng(cfg.seed, 7);
    let mut total = 0.0;
    for c in &val[..n] {
        let cands = model.policy.sample(&c.x, cfg.validation_candidates, &mut rng)?;
        total -= model.select(&c.x, &c.cost, cands)?.cost.as_f64();
    }
    Ok(Some(total / n as f64))
}

/// Pretrains the ensemble on uniform decisions, trains the minimizer against
/// it, then for up to `max_iterate` rounds resamples ensemble training
/// decisions from the policy's marginal, retrains the ensemble and the
/// minimizer.
pub fn iterative_train<T: Real, F: CostFunction<T> + Clone>(
    train: &[ContextSample<T, F>],
    val: &[ContextSample<T, F>],
    set: UncertaintySet<T>,
    cfg: &LrcoConfig,
) -> Result<(LrcoModel<T>, TrainingLog)> {
    let dim = train
        .first()
        .ok_or_else(|| Error::Config("LRCO training needs contexts".into()))?
        .x
        .len();
    cfg.minimizer.validate()?;
    if cfg.decisions_per_iteration == 0 || cfg.context_subsample == 0 {
        return Err(Error::Config("decision and context sample sizes must be positive".into()));
    }
    let mut rng = stream_rng(cfg.seed, 2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.context_subsample);
    order.sort_unstable();
    let subsample: Vec<ContextSample<T, F>> = order.iter().map(|&i| train[i].clone()).collect();

    let space = DecisionSpace::binary(dim);
    let uniform: Vec<Decision> = (0..cfg.decisions_per_iteration)
        .map(|_| space.sample_uniform(&mut rng))
        .collect();
    let mut ensemble = MaximizerEnsemble::random(dim, cfg.ensemble_hidden, set, &cfg.lambdas, cfg.seed)?;
    let pretrain = train_ensemble(&mut ensemble, &subsample, &uniform, cfg, 0)?;

    let mut policy = MinimizerPolicy::new(dim, cfg.minimizer.hidden, &mut stream_rng(cfg.seed, 3))?;
    let mut log = TrainingLog::default();
    let mut maximizer_reports = pretrain;
    for iteration in 0..=cfg.max_iterate {
        if iteration > 0 {
            let marginal = &log.iterations.last().expect("previous iteration").marginal;
            let p: Vec<T> = marginal.iter().map(|&v| T::lit(v)).collect();
            let decisions: Vec<Decision> = (0..cfg.decisions_per_iteration)
                .map(|_| sample_binary(&p, &mut rng))
                .collect();
            maximizer_reports = train_ensemble(&mut ensemble, &subsample, &decisions, cfg, iteration)?;
        }
        let min_cfg = TrainConfig {
            seed: cfg.minimizer.seed.wrapping_add(iteration as u64),
            ..cfg.minimizer.clone()
        };
        let report = train_minimizer(&mut policy, train, &ensemble, &min_cfg)?;
        let marginal = marginal_distribution(&policy, train)?;
        let model = LrcoModel::new(policy, ensemble, cfg.minimizer.candidates)?;
        let validation = validation_utility(&model, val, cfg)?;
        (policy, ensemble) = (model.policy, model.ensemble);
        log::info!(
            "iteration {iteration}: final cost {:.4}, entropy {:.3}, validation {:?}",
            report.epoch_cost.last().copied().unwrap_or(f64::NAN),
            mean_entropy(&marginal),
            validation
        );
        let previous = log.iterations.last().and_then(|l| l.validation_utility);
        log.iterations.push(IterationLog {
            iteration,
            maximizer: std::mem::take(&mut maximizer_reports),
            minimizer: report,
            mean_entropy: mean_entropy(&marginal),
            marginal,
            validation_utility: validation,
        });
        if let (Some(prev), Some(now)) = (previous, validation) {
            if now - prev < cfg.convergence_tol {
                log.converged_at = Some(iteration);
                break;
            }
        }
    }
    Ok((LrcoModel::new(policy, ensemble, cfg.minimizer.candidates)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LrSchedule;

    /// Cost is `table[mask of a]`, independent of the context.
    #[derive(Clone)]
    struct Table(Vec<f64>);

    impl CostFunction<f64> for Table {
        fn context_dim(&self) -> usize {
            0
        }

        fn cost(&self, _x: &[f64], a: &Decision) -> f64 {
            self.0[a.to_mask() as usize]
        }

        fn grad_context(&self, x: &[f64], _a: &Decision) -> Vec<f64> {
            vec![0.0; x.len()]
        }
    }

    fn tiny_model(seed: u64) -> LrcoModel<f64> {
        let set = UncertaintySet::l2(0.2).unwrap();
        let ens = MaximizerEnsemble::random(2, 4, set, &[1.0, 10.0], seed).unwrap();
        let policy = MinimizerPolicy::new(2, 4, &mut stream_rng(seed, 9)).unwrap();
        LrcoModel::new(policy, ens, 8).unwrap()
    }

    #[test]
    fn selection_picks_cheapest_with_lexicographic_ties() {
        let cost = Table(vec![0.5, 0.1, 0.1, 0.9]);
        let cands = vec![
            Decision::from_mask(3, 2),
            Decision::from_mask(2, 2),
            Decision::from_mask(1, 2),
            Decision::from_mask(2, 2),
        ];
        let inf = select_min(&[0.0, 0.0], &cost, cands, &NominalCost).unwrap();
        assert_eq!(inf.decision, Decision::from_mask(1, 2));
        assert_eq!(inf.cost, 0.1);
        assert_eq!(inf.evaluated, 3);
    }

    #[test]
    fn single_candidate_is_returned() {
        let model = tiny_model(1);
        let cost = Table(vec![0.5, 0.1, 0.1, 0.9]);
        let d = Decision::from_mask(2, 2);
        let inf = model.select(&[0.3, 0.3], &cost, vec![d.clone()]).unwrap();
        assert_eq!(inf.decision, d);
        assert_eq!(inf.cost, model.ensemble.worst_case(&[0.3, 0.3], &d, &cost).unwrap().0);
    }

    #[test]
    fn more_nested_candidates_never_worse() {
        let model = tiny_model(2);
        let cost = Table(vec![0.5, 0.2, 0.3, 0.1]);
        let x = [0.4, 0.6];
        let all = model.policy.sample(&x, 64, &mut stream_rng(3, 0)).unwrap();
        let mut prev = f64::INFINITY;
        for k in [1, 4, 16, 64] {
            let g = model.select(&x, &cost, all[..k].to_vec()).unwrap().cost;
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn marginal_is_mean_of_probabilities() {
        let model = tiny_model(4);
        let ctx: Vec<_> = (0..5)
            .map(|i| ContextSample {
                x: vec![i as f64 * 0.2, 1.0 - i as f64 * 0.1],
                cost: Table(vec![0.0; 4]),
            })
            .collect();
        let m = marginal_distribution(&model.policy, &ctx).unwrap();
        for k in 0..2 {
            let direct = ctx
                .iter()
                .map(|c| model.policy.decision_distribution(&c.x).unwrap()[k])
                .sum::<f64>()
                / 5.0;
            assert!((m[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(mean_entropy(&[0.5, 0.5]), 1.0);
        assert_eq!(mean_entropy(&[0.0, 1.0]), 0.0);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model(5);
        model.save(dir.path()).unwrap();
        let back = LrcoModel::<f64>::load(dir.path()).unwrap();
        let cost = Table(vec![0.5, 0.2, 0.3, 0.1]);
        let cands = model.policy.sample(&[0.1, 0.2], 8, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(
            back.select(&[0.1, 0.2], &cost, cands.clone()).unwrap(),
            model.select(&[0.1, 0.2], &cost, cands).unwrap()
        );
        assert_eq!(back.candidates, 8);
    }

    fn small_cfg(max_iterate: usize) -> LrcoConfig {
        LrcoConfig {
            ensemble_hidden: 8,
            lambdas: vec![1.0, 10.0],
            maximizer: MaximizerTrainConfig {
                epochs: 2,
                steps_per_epoch: 5,
                batch_size: 8,
                schedule: LrSchedule::default(),
                grad_check: false,
            },
            minimizer: TrainConfig {
                epochs: 30,
                batch_size: 8,
                baseline_samples: 4,
                candidates: 8,
                hidden: 8,
                ..Default::default()
            },
            max_iterate,
            decisions_per_iteration: 16,
            context_subsample: 16,
            validation_contexts: 4,
            validation_candidates: 4,
            convergence_tol: -1.0,
            ..Default::default()
        }
    }

    fn contexts() -> Vec<ContextSample<f64, Table>> {
        (0..10)
            .map(|i| ContextSample {
                x: vec![0.1 * i as f64, 0.5],
                cost: Table(vec![0.4, 0.3, 0.2, 0.0]),
            })
            .collect()
    }

    #[test]
    fn iteration_count_and_determinism() {
        let set = UncertaintySet::l2(0.1).unwrap();
        let ctx = contexts();
        let (m0, log0) = iterative_train(&ctx, &ctx, set, &small_cfg(0)).unwrap();
        assert_eq!(log0.iterations.len(), 1);
        assert_eq!(log0.iterations[0].minimizer.epoch_cost.len(), 30);
        let (_, log2) = iterative_train(&ctx, &ctx, set, &small_cfg(2)).unwrap();
        assert_eq!(log2.iterations.len(), 3);
        let (m0b, _) = iterative_train(&ctx, &ctx, set, &small_cfg(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m0.save(&dir.path().join("a")).unwrap();
        m0b.save(&dir.path().join("b")).unwrap();
        for f in ["policy.txt", "ensemble/member_0.txt", "ensemble/member_1.txt", "model.txt"] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
    }
}
