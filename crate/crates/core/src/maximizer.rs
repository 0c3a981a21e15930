//! Learned inner maximization: networks mapping `(x, a)` to a context error
//! `δ ∈ Δ` that makes the decision look as bad as possible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{adam_step, checkpoint, finite_difference_check, Activation, AdamState, GradCheck, Gradients, LrSchedule, Mlp};
use crate::problem::{ContextSample, CostFunction, Decision, UncertaintySet};
use crate::scalar::Real;

pub const ENSEMBLE_SCHEMA: &str = "lrco-ensemble v1";
pub const DEFAULT_HIDDEN: usize = 400;
pub const DEFAULT_LAMBDAS: [f64; 4] = [1.0, 1.0, 10.0, 10.0];

/// One `(context, cost, decision)` triple to score.
pub type Query<'a, T, F> = (&'a [T], &'a F, &'a Decision);

/// Network input rows `[x ; a]`.
fn encode<T: Real, F>(queries: &[Query<'_, T, F>], dim: usize) -> Result<Array2<T>> {
    let mut input = Array2::zeros((queries.len(), 2 * dim));
    for (r, (x, _, a)) in queries.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::dim("maximizer context", dim, x.len()));
        }
        if a.len() != dim {
            return Err(Error::dim("maximizer decision", dim, a.len()));
        }
        let mut row = input.row_mut(r);
        for k in 0..dim {
            row[k] = x[k];
            row[dim + k] = T::lit(f64::from(a.values()[k]));
        }
    }
    Ok(input)
}

/// `ε·tanh` head whose entries are zeroed wherever the decision is zero.
#[derive(Clone, Debug)]
pub struct MaximizerNet<T> {
    net: Mlp<T>,
    set: UncertaintySet<T>,
    lambda: T,
}

impl<T: Real> MaximizerNet<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, set: UncertaintySet<T>, lambda: T, rng: &mut R) -> Result<Self> {
        let net = Mlp::build(&[2 * dim, hidden, hidden, dim], Activation::Relu, Activation::Tanh, rng)?;
        Self::from_parts(net, set, lambda)
    }

    pub fn from_parts(net: Mlp<T>, set: UncertaintySet<T>, lambda: T) -> Result<Self> {
        if net.input_dim() != 2 * net.output_dim() {
            return Err(Error::dim("maximizer input", 2 * net.output_dim(), net.input_dim()));
        }
        let head = net.layers().last().expect("nonempty").activation();
        if head != Activation::Tanh {
            return Err(Error::Config(format!("maximizer head must be tanh, got {}", head.name())));
        }
        if !(lambda >= T::zero()) {
            return Err(Error::Config(format!("penalty weight must be >= 0, got {lambda}")));
        }
        Ok(Self { net, set, lambda })
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

    pub fn set(&self) -> &UncertaintySet<T> {
        &self.set
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Masked, scaled network output before projection.
    fn raw_from_output(&self, out: &Array2<T>, queries: &[Query<'_, T, impl Sized>]) -> Vec<Vec<T>> {
        let eps = self.set.epsilon();
        queries
            .iter()
            .zip(out.rows())
            .map(|((_, _, a), row)| {
                row.iter()
                    .zip(a.values())
                    .map(|(&o, &v)| if v != 0 { eps * o } else { T::zero() })
                    .collect()
            })
            .collect()
    }

    /// Projected proposals for a batch of queries.
    pub fn propose_batch<F>(&self, queries: &[Query<'_, T, F>]) -> Result<Vec<Vec<T>>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.net.predict(encode(queries, self.dim())?.view())?;
        let mut deltas = self.raw_from_output(&out, queries);
        for d in &mut deltas {
            self.set.project_in_place(d);
        }
        Ok(deltas)
    }

    pub fn propose_delta(&self, x: &[T], a: &Decision) -> Result<Vec<T>> {
        let q: [Query<'_, T, ()>; 1] = [(x, &(), a)];
        Ok(self.propose_batch(&q)?.remove(0))
    }
}

fn shifted<T: Real>(x: &[T], delta: &[T]) -> Vec<T> {
    x.iter().zip(delta).map(|(&a, &b)| a + b).collect()
}

/// Mean penalized loss `−f(x+δ, a) + λ[|δ|_p − ε]^+` over a batch, using the
/// unprojected masked proposal, and its parameter gradient.
pub fn maximizer_loss<T: Real, F: CostFunction<T>>(
    net: &Mlp<T>,
    set: &UncertaintySet<T>,
    lambda: T,
    batch: &[Query<'_, T, F>],
) -> Result<(T, T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty maximizer batch".into()));
    }
    let dim = net.output_dim();
    let (out, tape) = net.forward(encode(batch, dim)?.view())?;
    let eps = set.epsilon();
    let b = T::lit(batch.len() as f64);
    let mut loss = T::zero();
    let mut penalty = T::zero();
    let mut dy = Array2::zeros(out.dim());
    for (r, (x, cost, a)) in batch.iter().enumerate() {
        let delta: Vec<T> = out
            .row(r)
            .iter()
            .zip(a.values())
            .map(|(&o, &v)| if v != 0 { eps * o } else { T::zero() })
            .collect();
        let moved = shifted(x, &delta);
        let pen = set.penalty(&delta, lambda);
        loss += -cost.cost(&moved, a) + pen;
        penalty += pen;
        let g_cost = cost.grad_context(&moved, a);
        let g_pen = set.penalty_grad(&delta, lambda);
        for k in 0..dim {
            if a.values()[k] != 0 {
                dy[[r, k]] = eps * (g_pen[k] - g_cost[k]) / b;
            }
        }
    }
    let grads = net.backward(&tape, dy.view())?;
    Ok((loss / b, penalty / b, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaximizerTrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Run a finite-difference spot check of the loss gradient before training.
    pub grad_check: bool,
}

impl Default for MaximizerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            steps_per_epoch: 50,
            batch_size: 64,
            schedule: LrSchedule::default(),
            grad_check: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaximizerTrainReport {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean penalty term per epoch.
    pub epoch_penalty: Vec<f64>,
    /// Maximum relative error of the start-of-run gradient check.
    pub grad_check_error: Option<f64>,
}

/// Minimizes the penalized loss with Adam on minibatches drawn uniformly
/// from `contexts × decisions`.
pub fn train_maximizer<T, F, R>(
    member: &mut MaximizerNet<T>,
    contexts: &[ContextSample<T, F>],
    decisions: &[Decision],
    cfg: &MaximizerTrainConfig,
    rng: &mut R,
) -> Result<MaximizerTrainReport>
where
    T: Real,
    F: CostFunction<T>,
    R: Rng + ?Sized,
{
    if contexts.is_empty() || decisions.is_empty() {
        return Err(Error::Config("maximizer training needs contexts and decisions".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut report = MaximizerTrainReport::default();
    let draw = |rng: &mut R, n: usize| -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| (rng.random_range(0..contexts.len()), rng.random_range(0..decisions.len())))
            .collect()
    };
    let as_queries = |idx: &[(usize, usize)]| -> Vec<Query<'_, T, F>> {
        idx.iter()
            .map(|&(c, d)| (contexts[c].x.as_slice(), &contexts[c].cost, &decisions[d]))
            .collect()
    };
    if cfg.grad_check {
        let idx = draw(rng, 4);
        let batch = as_queries(&idx);
        let (_, _, grads) = maximizer_loss(&member.net, &member.set, member.lambda, &batch)?;
        let err = finite_difference_check(
            &member.net,
            &grads,
            |n| {
                maximizer_loss(n, &member.set, member.lambda, &batch)
                    .map(|r| r.0)
                    .unwrap_or_else(|_| T::nan())
            },
            GradCheck {
                step: 1e-6,
                max_per_tensor: Some(3),
            },
        );
        if err > 1e-4 {
            log::warn!("maximizer loss gradient check: relative error {err:.3e}");
        }
        report.grad_check_error = Some(err);
    }
    let mut adam = AdamState::new(&member.net);
    for epoch in 0..cfg.epochs {
        let lr = T::lit(cfg.schedule.at(epoch));
        let mut total = 0.0;
        let mut pen_total = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let idx = draw(rng, cfg.batch_size);
            let batch = as_queries(&idx);
            let (loss, pen, grads) = maximizer_loss(&member.net, &member.set, member.lambda, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "maximizer loss {loss} at epoch {epoch} step {step} (lambda {}, epsilon {})",
                    member.lambda,
                    member.set.epsilon()
                )));
            }
            adam_step(&mut member.net, &grads, &mut adam, lr)?;
            total += loss.as_f64();
            pen_total += pen.as_f64();
        }
        let steps = cfg.steps_per_epoch.max(1) as f64;
        report.epoch_loss.push(total / steps);
        report.epoch_penalty.push(pen_total / steps);
    }
    Ok(report)
}

/// Worst case over members: each proposes `δ_i`, the largest
/// `f(x + δ_i, a)` wins, ties to the lowest member index.
#[derive(Clone, Debug)]
pub struct MaximizerEnsemble<T> {
    members: Vec<MaximizerNet<T>>,
}

impl<T: Real> MaximizerEnsemble<T> {
    pub fn new(members: Vec<MaximizerNet<T>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
        for m in &members[1..] {
            if m.dim() != first.dim() {
                return Err(Error::dim("ensemble member", first.dim(), m.dim()));
            }
            if m.set != first.set {
                return Err(Error::Config("ensemble members must share the uncertainty set".into()));
            }
        }
        Ok(Self { members })
    }

    /// Members with the given penalty weights, member `i` initialized from
    /// stream `i` of `seed`.
    pub fn random(dim: usize, hidden: usize, set: UncertaintySet<T>, lambdas: &[f64], seed: u64) -> Result<Self> {
        let members = lambdas
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                MaximizerNet::new(dim, hidden, set, T::lit(l), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[MaximizerNet<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [MaximizerNet<T>] {
        &mut self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn set(&self) -> &UncertaintySet<T> {
        &self.members[0].set
    }

    /// Ensemble restricted to the listed members.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let members = indices
            .iter()
            .map(|&i| {
                self.members
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no ensemble member {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    /// Worst-case cost `G` and the winning `δ` for every query.
    pub fn worst_case_batch<F: CostFunction<T>>(&self, queries: &[Query<'_, T, F>]) -> Result<Vec<(T, Vec<T>)>> {
        let mut best: Vec<Option<(T, Vec<T>)>> = vec![None; queries.len()];
        for member in &self.members {
            let deltas = member.propose_batch(queries)?;
            for ((slot, (x, cost, a)), delta) in best.iter_mut().zip(queries).zip(deltas) {
                let g = cost.cost(&shifted(x, &delta), a);
                if slot.as_ref().is_none_or(|(b, _)| g > *b) {
                    *slot = Some((g, delta));
                }
            }
        }
        Ok(best.into_iter().map(|s| s.expect("ensemble nonempty")).collect())
    }

    pub fn worst_case<F: CostFunction<T>>(&self, x: &[T], a: &Decision, cost: &F) -> Result<(T, Vec<T>)> {
        Ok(self.worst_case_batch(&[(x, cost, a)])?.remove(0))
    }

    /// Writes `ensemble.txt` and one checkpoint per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let set = self.set();
        let mut manifest = format!("# {ENSEMBLE_SCHEMA}\np={} epsilon={}\n", set.p(), set.epsilon());
        for (i, m) in self.members.iter().enumerate() {
            let file = format!("member_{i}.txt");
            checkpoint::save(&m.net, &dir.join(&file))?;
            writeln!(manifest, "member file={file} lambda={}", m.lambda).unwrap();
        }
        let path = dir.join("ensemble.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("ensemble.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let src = path.display().to_string();
        let mut lines = text.lines();
        if lines.next() != Some(&format!("# {ENSEMBLE_SCHEMA}")) {
            return Err(Error::parse(&src, 1, format!("expected '# {ENSEMBLE_SCHEMA}'")));
        }
        let fields = |line: &str, lineno: usize| -> Result<Vec<(String, String)>> {
            line.split_whitespace()
                .filter(|f| *f != "member")
                .map(|f| {
                    f.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| Error::parse(&src, lineno, format!("bad field '{f}'")))
                })
                .collect()
        };
        let get = |fs: &[(String, String)], key: &str, lineno: usize| -> Result<String> {
            fs.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::parse(&src, lineno, format!("missing {key}")))
        };
        let num = |v: String, lineno: usize| -> Result<T> {
            v.parse::<T>()
                .map_err(|_| Error::parse(&src, lineno, format!("bad number '{v}'")))
        };
        let set_fields = fields(lines.next().unwrap_or_default(), 2)?;
        let set = UncertaintySet::new(num(get(&set_fields, "p", 2)?, 2)?, num(get(&set_fields, "epsilon", 2)?, 2)?)?;
        let mut members = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let lineno = i + 3;
            let f = fields(line, lineno)?;
            let file = get(&f, "file", lineno)?;
            let lambda = num(get(&f, "lambda", lineno)?, lineno)?;
            let net = checkpoint::load(&dir.join(&file))?;
            members.push(MaximizerNet::from_parts(net, set, lambda)?);
        }
        Self::new(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x, a) = Σ x_i a_i`.
    struct Linear;

    impl CostFunction<f64> for Linear {
        fn context_dim(&self) -> usize {
            0
        }

        fn cost(&self, x: &[f64], a: &Decision) -> f64 {
            x.iter().zip(a.values()).map(|(x, &v)| x * f64::from(v)).sum()
        }

        fn grad_context(&self, _x: &[f64], a: &Decision) -> Vec<f64> {
            a.values().iter().map(|&v| f64::from(v)).collect()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_decision_gives_zero_delta() {
        let set = UncertaintySet::l2(0.5).unwrap();
        let m = MaximizerNet::new(3, 8, set, 1.0, &mut rng(0)).unwrap();
        let d: Vec<f64> = m.propose_delta(&[0.2, 0.4, 0.9], &Decision::zeros(3)).unwrap();
        assert!(d.iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn zeroed_head_gives_zero_delta() {
        let set = UncertaintySet::l2(0.5).unwrap();
        let mut m = MaximizerNet::new(3, 8, set, 1.0, &mut rng(0)).unwrap();
        m.net_mut().zero_output_layer();
        let d = m.propose_delta(&[0.2, 0.4, 0.9], &Decision::new(vec![1, 1, 1])).unwrap();
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn proposals_stay_in_ball() {
        let set = UncertaintySet::l2(0.3).unwrap();
        let m = MaximizerNet::new(4, 16, set, 1.0, &mut rng(1)).unwrap();
        let mut r = rng(2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
            let a = Decision::from_mask(r.random_range(0..16), 4);
            let d = m.propose_delta(&x, &a).unwrap();
            assert!(set.norm(&d) <= 0.3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn single_member_ensemble_equals_member() {
        let set = UncertaintySet::l2(0.3).unwrap();
        let ens = MaximizerEnsemble::<f64>::random(3, 8, set, &[1.0], 4).unwrap();
        let x = [0.1, 0.5, 0.7];
        let a = Decision::new(vec![1, 0, 1]);
        let (g, d) = ens.worst_case(&x, &a, &Linear).unwrap();
        let own = ens.members()[0].propose_delta(&x, &a).unwrap();
        assert_eq!(d, own);
        assert_eq!(g, Linear.cost(&shifted(&x, &own), &a));
    }

    #[test]
    fn ensemble_takes_max_and_grows_with_members() {
        let set = UncertaintySet::l2(0.3).unwrap();
        let ens = MaximizerEnsemble::<f64>::random(3, 8, set, &DEFAULT_LAMBDAS, 9).unwrap();
        let x = [0.1, 0.5, 0.7];
        let a = Decision::new(vec![1, 1, 1]);
        let (g, _) = ens.worst_case(&x, &a, &Linear).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for n in 1..=4 {
            let sub = ens.subset(&(0..n).collect::<Vec<_>>()).unwrap();
            let (gs, _) = sub.worst_case(&x, &a, &Linear).unwrap();
            assert!(gs >= prev);
            prev = gs;
            let d = ens.members()[n - 1].propose_delta(&x, &a).unwrap();
            assert!(g >= Linear.cost(&shifted(&x, &d), &a));
        }
        assert_eq!(prev, g);
    }

    #[test]
    fn learns_boundary_of_one_dimensional_linear_toy() {
        let set = UncertaintySet::l2(0.5).unwrap();
        let mut m = MaximizerNet::new(1, 16, set, 1.0, &mut rng(3)).unwrap();
        let mut r = rng(4);
        let contexts: Vec<_> = (0..64)
            .map(|_| ContextSample {
                x: vec![r.random_range(-1.0..1.0)],
                cost: Linear,
            })
            .collect();
        let cfg = MaximizerTrainConfig {
            epochs: 10,
            steps_per_epoch: 30,
            batch_size: 16,
            schedule: LrSchedule::constant(1e-2),
            grad_check: true,
        };
        let report = train_maximizer(&mut m, &contexts, &[Decision::new(vec![1])], &cfg, &mut r).unwrap();
        assert!(report.grad_check_error.unwrap() < 1e-4);
        let d = m.propose_delta(&[0.3], &Decision::new(vec![1])).unwrap();
        assert!(d[0] > 0.45, "{d:?}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let set = UncertaintySet::l2(0.2).unwrap();
        // λ large enough and tanh head wide enough that the penalty is active.
        let m = MaximizerNet::new(3, 6, set, 3.0, &mut rng(5)).unwrap();
        let xs = [[0.1, 0.4, 0.2], [0.9, 0.3, 0.5]];
        let a = [Decision::new(vec![1, 1, 0]), Decision::new(vec![1, 1, 1])];
        let batch: Vec<Query<'_, f64, Linear>> = vec![(&xs[0], &Linear, &a[0]), (&xs[1], &Linear, &a[1])];
        let (_, _, g) = maximizer_loss(m.net(), &set, 3.0, &batch).unwrap();
        let err = finite_difference_check(
            m.net(),
            &g,
            |n| maximizer_loss(n, &set, 3.0, &batch).unwrap().0,
            GradCheck::default(),
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = UncertaintySet::l2(0.7).unwrap();
        let ens = MaximizerEnsemble::<f64>::random(2, 4, set, &[1.0, 10.0], 1).unwrap();
        ens.save(dir.path()).unwrap();
        let back = MaximizerEnsemble::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.members().len(), 2);
        assert_eq!(back.set(), ens.set());
        assert_eq!(back.members()[1].lambda(), 10.0);
        let x = [0.3, 0.6];
        let a = Decision::new(vec![1, 1]);
        assert_eq!(
            back.worst_case(&x, &a, &Linear).unwrap(),
            ens.worst_case(&x, &a, &Linear).unwrap()
        );
    }

    #[test]
    fn mismatched_members_rejected() {
        let s1 = UncertaintySet::l2(0.7).unwrap();
        let s2 = UncertaintySet::l2(0.8).unwrap();
        let a = MaximizerNet::<f64>::new(2, 4, s1, 1.0, &mut rng(0)).unwrap();
        let b = MaximizerNet::<f64>::new(2, 4, s2, 1.0, &mut rng(0)).unwrap();
        let c = MaximizerNet::<f64>::new(3, 4, s1, 1.0, &mut rng(0)).unwrap();
        assert!(MaximizerEnsemble::new(vec![a.clone(), b]).is_err());
        assert!(MaximizerEnsemble::new(vec![a, c]).is_err());
        assert!(MaximizerEnsemble::<f64>::new(vec![]).is_err());
    }
}
