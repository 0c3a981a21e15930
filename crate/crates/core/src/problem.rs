//! Vocabulary of the robust problem `min_a max_{δ∈Δ} f(x + δ, a)`: the
//! L_p uncertainty ball, factorized discrete decision spaces, and the cost
//! function interface shared by learners, baselines and oracles.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest decision space [`DecisionSpace::enumerate`] will walk.
pub const ENUMERATION_CAP: u128 = 1 << 24;

/// `Δ = { δ : |δ|_p ≤ ε }`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintySet<T> {
    p: T,
    epsilon: T,
}

impl<T: Real> UncertaintySet<T> {
    pub fn new(p: T, epsilon: T) -> Result<Self> {
        if !(p >= T::one()) {
            return Err(Error::Config(format!("norm order must be >= 1, got {p}")));
        }
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::Config(format!("budget must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { p, epsilon })
    }

    pub fn l2(epsilon: T) -> Result<Self> {
        Self::new(T::lit(2.0), epsilon)
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn norm(&self, delta: &[T]) -> T {
        p_norm(delta, self.p)
    }

    /// Slack that absorbs the last-ulp rounding of a rescale, so projecting
    /// twice is the same as projecting once.
    fn inside_bound(&self) -> T {
        self.epsilon * (T::one() + T::epsilon() * T::lit(8.0))
    }

    pub fn contains(&self, delta: &[T]) -> bool {
        self.norm(delta) <= self.inside_bound()
    }

    /// Returns `δ` unchanged inside the ball, otherwise `δ·ε/|δ|_p`.
    pub fn project(&self, delta: &[T]) -> Vec<T> {
        let mut out = delta.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, delta: &mut [T]) {
        let n = self.norm(delta);
        if n <= self.inside_bound() {
            return;
        }
        let scale = self.epsilon / n;
        delta.iter_mut().for_each(|v| *v = *v * scale);
    }

    /// `λ·max(|δ|_p − ε, 0)`.
    pub fn penalty(&self, delta: &[T], lambda: T) -> T {
        lambda * (self.norm(delta) - self.epsilon).max(T::zero())
    }

    /// Gradient of [`Self::penalty`] with respect to `δ`; zero inside the ball.
    pub fn penalty_grad(&self, delta: &[T], lambda: T) -> Vec<T> {
        let n = self.norm(delta);
        if n <= self.epsilon || n == T::zero() {
            return vec![T::zero(); delta.len()];
        }
        let pm1 = self.p - T::one();
        let denom = n.powf(pm1);
        delta
            .iter()
            .map(|&d| lambda * d.signum() * d.abs().powf(pm1) / denom)
            .collect()
    }
}

pub fn p_norm<T: Real>(v: &[T], p: T) -> T {
    if p == T::one() {
        v.iter().map(|x| x.abs()).sum()
    } else if p == T::lit(2.0) {
        v.iter().map(|&x| x * x).sum::<T>().sqrt()
    } else if p.is_infinite() {
        v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<T>().powf(T::one() / p)
    }
}

/// One value per decision group.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decision {
    values: Vec<u32>,
}

impl Decision {
    pub fn new(values: Vec<u32>) -> Self {
        Self { values }
    }

    pub fn zeros(groups: usize) -> Self {
        Self { values: vec![0; groups] }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Binary decision from a mask whose most significant of `groups` bits
    /// is group 0, so numeric mask order equals lexicographic order.
    pub fn from_mask(mask: u64, groups: usize) -> Self {
        debug_assert!(groups <= 64);
        Self {
            values: (0..groups).map(|i| ((mask >> (groups - 1 - i)) & 1) as u32).collect(),
        }
    }

    /// Inverse of [`Decision::from_mask`]; nonzero values count as 1.
    pub fn to_mask(&self) -> u64 {
        self.values.iter().fold(0u64, |m, &v| (m << 1) | u64::from(v != 0))
    }

    /// Values as reals, e.g. the 0/1 indicator vector of a binary decision.
    pub fn as_reals<T: Real>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::lit(f64::from(v))).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Independent decision groups with `group_sizes[i]` feasible values each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionSpace {
    group_sizes: Vec<u32>,
}

impl DecisionSpace {
    pub fn new(group_sizes: Vec<u32>) -> Result<Self> {
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid group sizes {group_sizes:?}")));
        }
        Ok(Self { group_sizes })
    }

    pub fn binary(groups: usize) -> Self {
        Self {
            group_sizes: vec![2; groups],
        }
    }

    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn group_sizes(&self) -> &[u32] {
        &self.group_sizes
    }

    pub fn is_binary(&self) -> bool {
        self.group_sizes.iter().all(|&s| s == 2)
    }

    /// Π group_sizes, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.group_sizes
            .iter()
            .fold(1u128, |acc, &s| acc.saturating_mul(u128::from(s)))
    }

    pub fn contains(&self, d: &Decision) -> bool {
        d.len() == self.group_count() && d.values.iter().zip(&self.group_sizes).all(|(v, s)| v < s)
    }

    pub fn check_capacity(&self, cap: u128) -> Result<()> {
        let size = self.size();
        if size > cap {
            return Err(Error::Capacity { size, cap });
        }
        Ok(())
    }

    /// Every decision exactly once, in lexicographic order of group values.
    pub fn enumerate(&self) -> Result<DecisionIter<'_>> {
        self.check_capacity(ENUMERATION_CAP)?;
        Ok(DecisionIter {
            sizes: &self.group_sizes,
            next: Some(Decision::zeros(self.group_count())),
        })
    }

    /// Uniformly random decision, each group independent.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Decision {
        Decision {
            values: self.group_sizes.iter().map(|&s| rng.random_range(0..s)).collect(),
        }
    }
}

pub struct DecisionIter<'a> {
    sizes: &'a [u32],
    next: Option<Decision>,
}

impl Iterator for DecisionIter<'_> {
    type Item = Decision;

    fn next(&mut self) -> Option<Decision> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carry = true;
        for (v, &s) in succ.values.iter_mut().zip(self.sizes).rev() {
            *v += 1;
            if *v < s {
                carry = false;
                break;
            }
            *v = 0;
        }
        if !carry {
            self.next = Some(succ);
        }
        Some(current)
    }
}

/// Per-group categorical distributions; `probs[i][v] = p(a_i = v | x)`.
pub type GroupProbs<T> = Vec<Vec<T>>;

/// Expands per-group Bernoulli probabilities `p(a_i = 1)` into two-way
/// distributions.
pub fn bernoulli_groups<T: Real>(p_one: &[T]) -> GroupProbs<T> {
    p_one.iter().map(|&p| vec![T::one() - p, p]).collect()
}

pub fn validate_group_probs<T: Real>(probs: &[Vec<T>]) -> Result<()> {
    let tol = T::lit(1e-9);
    for (i, g) in probs.iter().enumerate() {
        let sum: T = g.iter().copied().sum();
        if g.is_empty() || g.iter().any(|&p| !(p >= T::zero())) || (sum - T::one()).abs() > tol {
            return Err(Error::Domain(format!("group {i} is not a probability distribution")));
        }
    }
    Ok(())
}

/// `Π_i p(a_i | x)`.
pub fn factorized_probability<T: Real>(probs: &[Vec<T>], d: &Decision) -> Result<T> {
    if probs.len() != d.len() {
        return Err(Error::dim("decision groups", probs.len(), d.len()));
    }
    let mut acc = T::one();
    for (g, &v) in probs.iter().zip(d.values()) {
        let p = *g
            .get(v as usize)
            .ok_or_else(|| Error::Domain(format!("value {v} outside group of size {}", g.len())))?;
        acc = acc * p;
    }
    Ok(acc)
}

/// `Σ_i log p(a_i | x)`.
pub fn log_probability<T: Real>(probs: &[Vec<T>], d: &Decision) -> Result<T> {
    if probs.len() != d.len() {
        return Err(Error::dim("decision groups", probs.len(), d.len()));
    }
    d.values()
        .iter()
        .zip(probs)
        .map(|(&v, g)| {
            g.get(v as usize)
                .map(|p| p.ln())
                .ok_or_else(|| Error::Domain(format!("value {v} outside group")))
        })
        .sum()
}

/// Draws each group independently from its distribution.
pub fn sample_decision<T: Real, R: Rng + ?Sized>(probs: &[Vec<T>], rng: &mut R) -> Decision {
    let values = probs
        .iter()
        .map(|g| {
            let u = T::lit(rng.random::<f64>());
            let mut cum = T::zero();
            for (v, &p) in g.iter().enumerate() {
                cum = cum + p;
                if u < cum {
                    return v as u32;
                }
            }
            // Rounding left u above the total mass; take the last value with
            // positive probability.
            g.iter().rposition(|&p| p > T::zero()).unwrap_or(0) as u32
        })
        .collect();
    Decision { values }
}

/// Bernoulli fast path: group `i` is 1 with probability `p_one[i]`.
pub fn sample_binary<T: Real, R: Rng + ?Sized>(p_one: &[T], rng: &mut R) -> Decision {
    Decision {
        values: p_one
            .iter()
            .map(|&p| u32::from(T::lit(rng.random::<f64>()) < p))
            .collect(),
    }
}

/// Optional cardinality-style post-filter: keeps the `b` most probable
/// candidates, ties resolved toward the lexicographically smaller decision.
pub fn top_by_probability<T: Real>(candidates: Vec<Decision>, probs: &[Vec<T>], b: usize) -> Result<Vec<Decision>> {
    let mut scored = candidates
        .into_iter()
        .map(|d| factorized_probability(probs, &d).map(|p| (p, d)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(pa, da), (pb, db)| pb.partial_cmp(pa).unwrap_or(Ordering::Equal).then_with(|| da.cmp(db)));
    scored.truncate(b);
    Ok(scored.into_iter().map(|(_, d)| d).collect())
}

/// Cost `f(x, a)` to be minimized over decisions, with its gradient in the
/// context.
pub trait CostFunction<T: Real>: Sync {
    fn context_dim(&self) -> usize;

    fn cost(&self, x: &[T], a: &Decision) -> T;

    fn grad_context(&self, x: &[T], a: &Decision) -> Vec<T>;
}

/// A context paired with the cost function of the instance it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSample<T, F> {
    pub x: Vec<T>,
    pub cost: F,
}
