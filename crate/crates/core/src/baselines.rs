//! Comparison policies and ground-truth solvers: random, greedy, exhaustive
//! oracles on predicted or true contexts, a multi-start projected-gradient
//! inner solver, and a brute-force robust oracle for small spaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{CostFunction, Decision, DecisionSpace, UncertaintySet, ENUMERATION_CAP};
use crate::scalar::Real;
use crate::vec::{utility, OffloadShape, UtilityTable, VecCost};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Random,
    Greedy,
    Lco,
    WeakOracle,
    Oracle,
    Lrco,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::Greedy,
        PolicyKind::Lco,
        PolicyKind::WeakOracle,
        PolicyKind::Oracle,
        PolicyKind::Lrco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Lco => "lco",
            PolicyKind::WeakOracle => "weak_oracle",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Lrco => "lrco",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

pub fn random_decision<R: Rng + ?Sized>(space: &DecisionSpace, rng: &mut R) -> Decision {
    space.sample_uniform(rng)
}

/// Starts from all zeros. While some service has no cloud, every single flip
/// leaves the product at zero, so each empty service is first seeded with
/// its cloud of largest `x - eta`. Then the single 0→1 entry with the largest
/// strictly positive utility gain is flipped until none is left; ties go to
/// the lowest index. Falls back to all zeros if the result has negative
/// utility.
pub fn greedy_decision(shape: &OffloadShape, x_pred: &[f64], eta: &[f64]) -> Decision {
    let n = shape.dim();
    let mut values = vec![0u32; n];
    for j in 0..shape.services {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..shape.clouds {
            let k = shape.index(j, i);
            let score = x_pred[k] - eta[k];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        if let Some((k, _)) = best {
            values[k] = 1;
        }
    }
    let mut current = utility(shape, x_pred, &Decision::new(values.clone()), eta);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n {
            if values[k] != 0 {
                continue;
            }
            values[k] = 1;
            let u = utility(shape, x_pred, &Decision::new(values.clone()), eta);
            values[k] = 0;
            let gain = u - current;
            if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        match best {
            Some((k, gain)) => {
                values[k] = 1;
                current += gain;
            }
            None if current < 0.0 => return Decision::new(vec![0; n]),
            None => return Decision::new(values),
        }
    }
}

/// Exhaustive argmax of `utility(x, ·, eta)` over every binary decision.
/// Ties resolve to the lexicographically smallest decision.
pub fn exhaustive_best(shape: &OffloadShape, x: &[f64], eta: &[f64]) -> Result<(Decision, f64)> {
    let n = shape.dim();
    if x.len() != n {
        return Err(Error::dim("context", n, x.len()));
    }
    if eta.len() != n {
        return Err(Error::dim("replication prices", n, eta.len()));
    }
    DecisionSpace::binary(n).check_capacity(ENUMERATION_CAP)?;
    let table = UtilityTable::new(*shape, x, eta)?;
    let mut best = (0u64, f64::NEG_INFINITY);
    for mask in 0..(1u64 << n) {
        let u = table.utility(mask);
        if u > best.1 {
            best = (mask, u);
        }
    }
    Ok((Decision::from_mask(best.0, n), best.1))
}

/// Exhaustive search on the predicted context.
pub fn weak_oracle(shape: &OffloadShape, x_pred: &[f64], eta: &[f64]) -> Result<Decision> {
    exhaustive_best(shape, x_pred, eta).map(|r| r.0)
}

/// Exhaustive search on the true context.
pub fn oracle(shape: &OffloadShape, x_true: &[f64], eta: &[f64]) -> Result<Decision> {
    exhaustive_best(shape, x_true, eta).map(|r| r.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgaConfig {
    pub starts: usize,
    pub steps: usize,
    /// Initial step length as a fraction of ε.
    pub step_fraction: f64,
}

impl Default for PgaConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            steps: 200,
            step_fraction: 0.05,
        }
    }
}

/// Nearest point to `v` in `{|δ|_p ≤ ε} ∩ [lo, hi]` (exact for p = 2),
/// found by bisecting the shrink factor `t` in `clamp(t·v, lo, hi)`.
/// Requires `lo ≤ 0 ≤ hi`.
fn project_ball_box<T: Real>(set: &UncertaintySet<T>, v: &[T], lo: &[T], hi: &[T]) -> Vec<T> {
    let clamp_scaled = |t: T| -> Vec<T> {
        v.iter()
            .zip(lo.iter().zip(hi))
            .map(|(&x, (&l, &h))| (x * t).max(l).min(h))
            .collect()
    };
    let full = clamp_scaled(T::one());
    if set.norm(&full) <= set.epsilon() {
        return full;
    }
    let (mut a, mut b) = (T::zero(), T::one());
    for _ in 0..80 {
        let mid = (a + b) * T::lit(0.5);
        if set.norm(&clamp_scaled(mid)) <= set.epsilon() {
            a = mid;
        } else {
            b = mid;
        }
    }
    clamp_scaled(a)
}

/// Multi-start projected gradient ascent on `f(x + δ, a)` over the masked
/// ball, optionally intersected with a box keeping `x + δ` in `bounds`.
///
/// Each start runs `steps` normalized ascent steps; a step that does not
/// increase the cost is rejected and the step length halved. Start 0 is
/// `δ = 0`, the rest are uniform on the masked sphere. Returns the largest
/// cost found and its `δ`.
pub fn pga_max_cost<T, F, R>(
    x: &[T],
    a: &Decision,
    cost: &F,
    set: &UncertaintySet<T>,
    bounds: Option<(T, T)>,
    cfg: &PgaConfig,
    rng: &mut R,
) -> (T, Vec<T>)
where
    T: Real,
    F: CostFunction<T> + ?Sized,
    R: Rng + ?Sized,
{
    let n = x.len();
    let active: Vec<bool> = a.values().iter().map(|&v| v != 0).collect();
    let big = T::max_value();
    let (lo, hi): (Vec<T>, Vec<T>) = (0..n)
        .map(|k| {
            if !active[k] {
                return (T::zero(), T::zero());
            }
            match bounds {
                Some((b0, b1)) => ((b0 - x[k]).min(T::zero()), (b1 - x[k]).max(T::zero())),
                None => (-big, big),
            }
        })
        .unzip();
    let eval = |d: &[T]| -> T {
        let moved: Vec<T> = x.iter().zip(d).map(|(&p, &q)| p + q).collect();
        cost.cost(&moved, a)
    };
    let zero = vec![T::zero(); n];
    let mut best = (eval(&zero), zero.clone());
    if !active.iter().any(|&b| b) || set.epsilon() == T::zero() {
        return best;
    }
    let eps = set.epsilon();
    for s in 0..cfg.starts.max(1) {
        let mut delta = if s == 0 {
            zero.clone()
        } else {
            let g: Vec<T> = active
                .iter()
                .map(|&on| if on { T::lit(rng.sample::<f64, _>(StandardNormal)) } else { T::zero() })
                .collect();
            let norm = set.norm(&g);
            let on_sphere: Vec<T> = if norm > T::zero() {
                g.iter().map(|&v| v * eps / norm).collect()
            } else {
                g
            };
            project_ball_box(set, &on_sphere, &lo, &hi)
        };
        let mut value = eval(&delta);
        let mut step = eps * T::lit(cfg.step_fraction);
        for _ in 0..cfg.steps {
            let moved: Vec<T> = x.iter().zip(&delta).map(|(&p, &q)| p + q).collect();
            let grad: Vec<T> = cost
                .grad_context(&moved, a)
                .into_iter()
                .zip(&active)
                .map(|(g, &on)| if on { g } else { T::zero() })
                .collect();
            let gnorm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
            if !(gnorm > T::zero()) {
                break;
            }
            let cand: Vec<T> = delta.iter().zip(&grad).map(|(&d, &g)| d + step * g / gnorm).collect();
            let cand = project_ball_box(set, &cand, &lo, &hi);
            let v = eval(&cand);
            if v > value {
                value = v;
                delta = cand;
            } else {
                step = step * T::lit(0.5);
                if step < eps * T::lit(1e-9) {
                    break;
                }
            }
        }
        if value > best.0 {
            best = (value, delta);
        }
    }
    best
}

/// Worst-case utility `min_{δ∈Δ} U(x + δ, a)` by [`pga_max_cost`].
pub fn pga_worst_case<R: Rng + ?Sized>(
    shape: &OffloadShape,
    x: &[f64],
    a: &Decision,
    eta: &[f64],
    set: &UncertaintySet<f64>,
    cfg: &PgaConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let cost = VecCost::new(*shape, eta.to_vec())?;
    if x.len() != shape.dim() {
        return Err(Error::dim("context", shape.dim(), x.len()));
    }
    if a.len() != shape.dim() {
        return Err(Error::dim("decision", shape.dim(), a.len()));
    }
    let (c, d) = pga_max_cost(x, a, &cost, set, Some((0.0, 1.0)), cfg, rng);
    Ok((-c, d))
}

/// Largest space [`robust_oracle_small`] will search.
pub const ROBUST_ORACLE_CAP: u128 = 4096;

/// Decision with the best projected-gradient worst-case utility. Every
/// decision's inner solve uses a generator seeded from `seed`, so the result
/// does not depend on enumeration order.
pub fn robust_oracle_small(
    shape: &OffloadShape,
    x: &[f64],
    eta: &[f64],
    set: &UncertaintySet<f64>,
    cfg: &PgaConfig,
    seed: u64,
) -> Result<(Decision, f64)> {
    let space = DecisionSpace::binary(shape.dim());
    space.check_capacity(ROBUST_ORACLE_CAP)?;
    let mut best: Option<(Decision, f64)> = None;
    for a in space.enumerate()? {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, _) = pga_worst_case(shape, x, &a, eta, set, cfg, &mut rng)?;
        if best.as_ref().is_none_or(|(_, b)| u > *b) {
            best = Some((a, u));
        }
    }
    Ok(best.expect("space nonempty"))
}
