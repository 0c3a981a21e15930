//! At-Least-One replica success model and its utility.
//!
//! Contexts and decisions are flattened service-major: entry `j*C + i` is
//! service `j` on cloud `i`.

use crate::error::{Error, Result};
use crate::problem::{CostFunction, Decision};
use crate::scalar::Real;

/// `m` micro services, each replicable onto any of `c` vehicular clouds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OffloadShape {
    pub services: usize,
    pub clouds: usize,
}

impl OffloadShape {
    pub fn new(services: usize, clouds: usize) -> Result<Self> {
        if services == 0 || clouds == 0 {
            return Err(Error::Config(format!("need at least one service and cloud, got {services}x{clouds}")));
        }
        Ok(Self { services, clouds })
    }

    pub fn dim(&self) -> usize {
        self.services * self.clouds
    }

    pub fn index(&self, service: usize, cloud: usize) -> usize {
        service * self.clouds + cloud
    }

    fn check<T>(&self, x: &[T], a: &Decision) {
        assert_eq!(x.len(), self.dim(), "context length");
        assert_eq!(a.len(), self.dim(), "decision length");
    }
}

fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

fn service_failure<T: Real>(shape: &OffloadShape, x: &[T], a: &Decision, j: usize) -> T {
    let mut fail = T::one();
    for i in 0..shape.clouds {
        let k = shape.index(j, i);
        if a.values()[k] != 0 {
            fail *= T::one() - clamp01(x[k]);
        }
    }
    fail
}

/// `Π_j [1 − Π_i (1 − x_ij a_ij)]` with `x` clamped to `[0, 1]`.
pub fn success_probability<T: Real>(shape: &OffloadShape, x: &[T], a: &Decision) -> T {
    shape.check(x, a);
    (0..shape.services).fold(T::one(), |acc, j| acc * (T::one() - service_failure(shape, x, a, j)))
}

/// Success probability minus the replication cost `Σ η_ij a_ij`.
pub fn utility<T: Real>(shape: &OffloadShape, x: &[T], a: &Decision, eta: &[T]) -> T {
    assert_eq!(eta.len(), shape.dim(), "eta length");
    let cost = a
        .values()
        .iter()
        .zip(eta)
        .filter(|(v, _)| **v != 0)
        .fold(T::zero(), |acc, (_, e)| acc + *e);
    success_probability(shape, x, a) - cost
}

/// `∂U/∂x_ij = a_ij Π_{i'≠i}(1 − x_i'j a_i'j) Π_{j'≠j} s_j'`, zero where the
/// clamp is active.
pub fn utility_gradient_in_x<T: Real>(shape: &OffloadShape, x: &[T], a: &Decision) -> Vec<T> {
    shape.check(x, a);
    let service_success: Vec<T> = (0..shape.services)
        .map(|j| T::one() - service_failure(shape, x, a, j))
        .collect();
    let mut grad = vec![T::zero(); shape.dim()];
    for j in 0..shape.services {
        let others = (0..shape.services)
            .filter(|&jj| jj != j)
            .fold(T::one(), |acc, jj| acc * service_success[jj]);
        for i in 0..shape.clouds {
            let k = shape.index(j, i);
            if a.values()[k] == 0 || x[k] < T::zero() || x[k] > T::one() {
                continue;
            }
            let mut rest = T::one();
            for ii in (0..shape.clouds).filter(|&ii| ii != i) {
                let kk = shape.index(j, ii);
                if a.values()[kk] != 0 {
                    rest *= T::one() - clamp01(x[kk]);
                }
            }
            grad[k] = rest * others;
        }
    }
    grad
}

/// Cost `−U(x, a)` for fixed replication prices.
#[derive(Clone, Debug)]
pub struct VecCost<T> {
    shape: OffloadShape,
    eta: Vec<T>,
}

impl<T: Real> VecCost<T> {
    pub fn new(shape: OffloadShape, eta: Vec<T>) -> Result<Self> {
        if eta.len() != shape.dim() {
            return Err(Error::dim("replication prices", shape.dim(), eta.len()));
        }
        Ok(Self { shape, eta })
    }

    pub fn shape(&self) -> OffloadShape {
        self.shape
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }
}

impl<T: Real> CostFunction<T> for VecCost<T> {
    fn context_dim(&self) -> usize {
        self.shape.dim()
    }

    fn cost(&self, x: &[T], a: &Decision) -> T {
        -utility(&self.shape, x, a, &self.eta)
    }

    fn grad_context(&self, x: &[T], a: &Decision) -> Vec<T> {
        utility_gradient_in_x(&self.shape, x, a).into_iter().map(|g| -g).collect()
    }
}

/// Per-service lookup tables that evaluate `U` for a packed decision mask in
/// `O(M)`. Mask bits follow [`Decision::from_mask`]: flat index 0 is the most
/// significant bit.
#[derive(Clone, Debug)]
pub struct UtilityTable {
    shape: OffloadShape,
    success: Vec<Vec<f64>>,
    price: Vec<Vec<f64>>,
}

impl UtilityTable {
    pub fn new<T: Real>(shape: OffloadShape, x: &[T], eta: &[T]) -> Result<Self> {
        if x.len() != shape.dim() {
            return Err(Error::dim("context", shape.dim(), x.len()));
        }
        if eta.len() != shape.dim() {
            return Err(Error::dim("replication prices", shape.dim(), eta.len()));
        }
        if shape.dim() > 63 || shape.clouds > 20 {
            return Err(Error::Capacity {
                size: 1u128 << shape.dim().min(127),
                cap: 1u128 << 63,
            });
        }
        let c = shape.clouds;
        let mut success = Vec::with_capacity(shape.services);
        let mut price = Vec::with_capacity(shape.services);
        for j in 0..shape.services {
            let mut s = vec![0.0; 1 << c];
            let mut p = vec![0.0; 1 << c];
            for (sub, (sv, pv)) in s.iter_mut().zip(p.iter_mut()).enumerate() {
                let mut fail = 1.0;
                for i in 0..c {
                    if sub >> (c - 1 - i) & 1 == 1 {
                        let k = shape.index(j, i);
                        fail *= 1.0 - clamp01(x[k].as_f64());
                        *pv += eta[k].as_f64();
                    }
                }
                *sv = 1.0 - fail;
            }
            success.push(s);
            price.push(p);
        }
        Ok(Self { shape, success, price })
    }

    pub fn shape(&self) -> OffloadShape {
        self.shape
    }

    pub fn utility(&self, mask: u64) -> f64 {
        let c = self.shape.clouds;
        let n = self.shape.dim();
        let low = (1u64 << c) - 1;
        let mut prob = 1.0;
        let mut price = 0.0;
        for j in 0..self.shape.services {
            let sub = ((mask >> (n - (j + 1) * c)) & low) as usize;
            prob *= self.success[j][sub];
            price += self.price[j][sub];
        }
        prob - price
    }
}
