//! Policy network over binary decision groups, trained with a
//! baseline-corrected score-function gradient against a worst-case oracle.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maximizer::{MaximizerEnsemble, Query};
use crate::nn::{adam_step, checkpoint, clip_global_norm, Activation, AdamState, Gradients, LrSchedule, Mlp, DEFAULT_CLIP_NORM};
use crate::problem::{bernoulli_groups, sample_binary, ContextSample, CostFunction, Decision, DecisionSpace, GroupProbs};
use crate::scalar::Real;

pub const DEFAULT_POLICY_HIDDEN: usize = 256;
/// Lower than the maximizer rate; at 1e-3 the policy turns deterministic
/// within a few dozen updates and best-of-K sampling stops helping.
pub const DEFAULT_POLICY_LR: f64 = 1e-4;

/// `x → p(a_i = 1 | x)` for every group, one sigmoid output per group.
#[derive(Clone, Debug)]
pub struct MinimizerPolicy<T> {
    net: Mlp<T>,
}

impl<T: Real> MinimizerPolicy<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Self::from_net(Mlp::build(&[dim, hidden, hidden, dim], Activation::Relu, Activation::Sigmoid, rng)?)
    }

    pub fn from_net(net: Mlp<T>) -> Result<Self> {
        let head = net.layers().last().expect("nonempty").activation();
        if head != Activation::Sigmoid {
            return Err(Error::Config(format!("policy head must be sigmoid, got {}", head.name())));
        }
        if net.input_dim() != net.output_dim() {
            return Err(Error::dim("policy output", net.input_dim(), net.output_dim()));
        }
        Ok(Self { net })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    /// Per-group probability of choosing 1.
    pub fn decision_distribution(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::dim("policy context", self.dim(), x.len()));
        }
        self.net.predict_one(x)
    }

    /// Row `r` holds the probabilities for context row `r`.
    pub fn distribution_batch(&self, xs: ArrayView2<T>) -> Result<Array2<T>> {
        self.net.predict(xs)
    }

    pub fn group_probs(&self, x: &[T]) -> Result<GroupProbs<T>> {
        Ok(bernoulli_groups(&self.decision_distribution(x)?))
    }

    /// `k` independent draws from the factorized distribution.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[T], k: usize, rng: &mut R) -> Result<Vec<Decision>> {
        let p = self.decision_distribution(x)?;
        Ok((0..k).map(|_| sample_binary(&p, rng)).collect())
    }

    /// Decision taking every group's more likely value (ties to 0).
    pub fn mode(&self, x: &[T]) -> Result<Decision> {
        let p = self.decision_distribution(x)?;
        Ok(Decision::new(p.iter().map(|&v| u32::from(v > T::lit(0.5))).collect()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.net, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_net(checkpoint::load(path)?)
    }
}

/// Scores decisions for policy training.
pub trait WorstCaseOracle<T: Real, F>: Sync {
    /// Cost `G` of each query.
    fn evaluate(&self, queries: &[Query<'_, T, F>]) -> Result<Vec<T>>;
}

impl<T: Real, F: CostFunction<T>> WorstCaseOracle<T, F> for MaximizerEnsemble<T> {
    fn evaluate(&self, queries: &[Query<'_, T, F>]) -> Result<Vec<T>> {
        Ok(self.worst_case_batch(queries)?.into_iter().map(|(g, _)| g).collect())
    }
}

/// `G = f(x, a)` with no context error: the supervision used by LCO.
#[derive(Clone, Copy, Debug, Default)]
pub struct NominalCost;

impl<T: Real, F: CostFunction<T>> WorstCaseOracle<T, F> for NominalCost {
    fn evaluate(&self, queries: &[Query<'_, T, F>]) -> Result<Vec<T>> {
        Ok(queries.iter().map(|(x, cost, a)| cost.cost(x, a)).collect())
    }
}

/// Which gradient the advantage multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientForm {
    /// `∇ log P(a|x)`, the unbiased score-function estimator.
    LogProbability,
    /// `∇ P(a|x)`, kept for comparison.
    Probability,
}

impl GradientForm {
    pub fn name(self) -> &'static str {
        match self {
            GradientForm::LogProbability => "log_probability",
            GradientForm::Probability => "probability",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [GradientForm::LogProbability, GradientForm::Probability]
            .into_iter()
            .find(|g| g.name() == name)
    }
}

/// Where the decisions behind the baseline `V(x)` come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineSource {
    /// Uniform over the decision space.
    Uniform,
    /// Independent draws from the current policy at `x`.
    Policy,
    /// `1 + |S|` policy draws, each scored against the mean of the others.
    LeaveOneOut,
}

impl BaselineSource {
    pub fn name(self) -> &'static str {
        match self {
            BaselineSource::Uniform => "uniform",
            BaselineSource::Policy => "policy",
            BaselineSource::LeaveOneOut => "leave_one_out",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [BaselineSource::Uniform, BaselineSource::Policy, BaselineSource::LeaveOneOut]
            .into_iter()
            .find(|b| b.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of batched updates.
    pub epochs: usize,
    pub batch_size: usize,
    /// Random decisions per context for the baseline `V(x)`.
    pub baseline_samples: usize,
    pub baseline: BaselineSource,
    /// Candidates sampled at inference.
    pub candidates: usize,
    pub hidden: usize,
    pub schedule: LrSchedule,
    pub clip_norm: f64,
    pub gradient: GradientForm,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            baseline_samples: 16,
            baseline: BaselineSource::LeaveOneOut,
            candidates: 1000,
            hidden: DEFAULT_POLICY_HIDDEN,
            schedule: LrSchedule {
                initial: DEFAULT_POLICY_LR,
                ..LrSchedule::default()
            },
            clip_norm: DEFAULT_CLIP_NORM,
            gradient: GradientForm::LogProbability,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("baseline_samples", self.baseline_samples),
            ("candidates", self.candidates),
            ("hidden", self.hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "epochs={}", self.epochs).unwrap();
        writeln!(s, "batch_size={}", self.batch_size).unwrap();
        writeln!(s, "baseline_samples={}", self.baseline_samples).unwrap();
        writeln!(s, "baseline={}", self.baseline.name()).unwrap();
        writeln!(s, "candidates={}", self.candidates).unwrap();
        writeln!(s, "hidden={}", self.hidden).unwrap();
        writeln!(s, "lr={}", self.schedule.initial).unwrap();
        writeln!(s, "lr_decay={}", self.schedule.factor).unwrap();
        writeln!(s, "lr_every={}", self.schedule.every).unwrap();
        writeln!(s, "clip_norm={}", self.clip_norm).unwrap();
        writeln!(s, "gradient={}", self.gradient.name()).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    /// Mean cost of the sampled decisions.
    pub mean_cost: f64,
    /// Mean baseline `V(x)`.
    pub mean_baseline: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One batch of the policy gradient: per context, sample `a`, score it and
/// `|S|` uniform decisions with the oracle, and accumulate
/// `(G − V(x))·∇ log P(a|x)` (or `∇P`). The batch mean is clipped to
/// `cfg.clip_norm`; descending along it lowers the expected cost.
pub fn policy_gradient_batch<T, F, O, R>(
    policy: &MinimizerPolicy<T>,
    contexts: &[&ContextSample<T, F>],
    oracle: &O,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Gradients<T>, BatchStats)>
where
    T: Real,
    F: CostFunction<T>,
    O: WorstCaseOracle<T, F> + ?Sized,
    R: Rng + ?Sized,
{
    if contexts.is_empty() {
        return Err(Error::Config("empty policy batch".into()));
    }
    let dim = policy.dim();
    let b = contexts.len();
    let mut xs = Array2::zeros((b, dim));
    for (r, c) in contexts.iter().enumerate() {
        if c.x.len() != dim {
            return Err(Error::dim("policy context", dim, c.x.len()));
        }
        xs.row_mut(r).iter_mut().zip(&c.x).for_each(|(d, &s)| *d = s);
    }
    let (probs, tape) = policy.net.forward(xs.view())?;
    let space = DecisionSpace::binary(dim);
    let s = cfg.baseline_samples;
    let mut decisions = Vec::with_capacity(b * (1 + s));
    for r in 0..b {
        let p: Vec<T> = probs.row(r).to_vec();
        decisions.push(sample_binary(&p, rng));
        for _ in 0..s {
            decisions.push(match cfg.baseline {
                BaselineSource::Uniform => space.sample_uniform(rng),
                BaselineSource::Policy | BaselineSource::LeaveOneOut => sample_binary(&p, rng),
            });
        }
    }
    let queries: Vec<Query<'_, T, F>> = decisions
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let c = contexts[i / (1 + s)];
            (c.x.as_slice(), &c.cost, d)
        })
        .collect();
    let costs = oracle.evaluate(&queries)?;
    if costs.len() != queries.len() {
        return Err(Error::dim("oracle output", queries.len(), costs.len()));
    }
    let mut dz = Array2::zeros((b, dim));
    let mut stats = BatchStats::default();
    let scored = match cfg.baseline {
        BaselineSource::LeaveOneOut => 1 + s,
        _ => 1,
    };
    let scale = T::lit((b * scored) as f64);
    for r in 0..b {
        let base = r * (1 + s);
        let group = &costs[base..base + 1 + s];
        if let Some(bad) = group.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("oracle cost {bad}")));
        }
        let total = group.iter().copied().sum::<T>();
        stats.mean_cost += costs[base].as_f64() / b as f64;
        stats.mean_baseline += ((total - costs[base]) / T::lit(s as f64)).as_f64() / b as f64;
        for i in 0..scored {
            let g = group[i];
            let v = (total - g) / T::lit(s as f64);
            let a = &decisions[base + i];
            let weight = match cfg.gradient {
                GradientForm::LogProbability => g - v,
                GradientForm::Probability => {
                    let mut prob = T::one();
                    for (k, &bit) in a.values().iter().enumerate() {
                        let p = probs[[r, k]];
                        prob *= if bit != 0 { p } else { T::one() - p };
                    }
                    (g - v) * prob
                }
            };
            for (k, &bit) in a.values().iter().enumerate() {
                let target = if bit != 0 { T::one() } else { T::zero() };
                dz[[r, k]] += weight * (target - probs[[r, k]]) / scale;
            }
        }
    }
    let mut grads = policy.net.backward_preactivation(&tape, dz.view())?;
    stats.grad_norm = clip_global_norm(&mut grads, T::lit(cfg.clip_norm)).as_f64();
    Ok((grads, stats))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinimizerTrainReport {
    /// Mean sampled worst-case cost of each epoch.
    pub epoch_cost: Vec<f64>,
    pub epoch_baseline: Vec<f64>,
    /// Set when training stopped on a rising cost trend.
    pub diverged: bool,
}

/// Epochs per smoothing window of the divergence monitor.
const SMOOTH_WINDOW: usize = 10;
/// Consecutive rising windows that count as divergence.
const DIVERGENCE_WINDOWS: usize = 10;

/// Runs `cfg.epochs` batched Adam updates, each on `cfg.batch_size`
/// contexts drawn with replacement. If the windowed mean cost rises for
/// `DIVERGENCE_WINDOWS` windows in a row, training stops with a warning and
/// the weights from the best window are restored.
pub fn train_minimizer<T, F, O>(
    policy: &mut MinimizerPolicy<T>,
    contexts: &[ContextSample<T, F>],
    oracle: &O,
    cfg: &TrainConfig,
) -> Result<MinimizerTrainReport>
where
    T: Real,
    F: CostFunction<T>,
    O: WorstCaseOracle<T, F> + ?Sized,
{
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::Config("minimizer training needs contexts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&policy.net);
    let mut report = MinimizerTrainReport::default();
    let mut best: Option<(f64, Mlp<T>)> = None;
    let mut prev_window = f64::INFINITY;
    let mut rising = 0;
    for epoch in 0..cfg.epochs {
        let batch: Vec<&ContextSample<T, F>> = (0..cfg.batch_size)
            .map(|_| &contexts[rng.random_range(0..contexts.len())])
            .collect();
        let (grads, stats) = policy_gradient_batch(policy, &batch, oracle, cfg, &mut rng)?;
        adam_step(&mut policy.net, &grads, &mut adam, T::lit(cfg.schedule.at(epoch)))?;
        report.epoch_cost.push(stats.mean_cost);
        report.epoch_baseline.push(stats.mean_baseline);
        if (epoch + 1) % SMOOTH_WINDOW == 0 {
            let window = report.epoch_cost[epoch + 1 - SMOOTH_WINDOW..].iter().sum::<f64>() / SMOOTH_WINDOW as f64;
            if best.as_ref().is_none_or(|(b, _)| window < *b) {
                best = Some((window, policy.net.clone()));
            }
            rising = if window > prev_window { rising + 1 } else { 0 };
            prev_window = window;
            if rising >= DIVERGENCE_WINDOWS {
                log::warn!("minimizer cost rising for {rising} windows at epoch {epoch}; restoring best weights");
                policy.net = best.take().expect("set on first window").1;
                report.diverged = true;
                break;
            }
        }
    }
    Ok(report)
}
