use ndarray::{Array1, Array2, Zip};

use super::network::{Gradients, LayerGrad, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Global L2 threshold applied to gradients before every Adam update.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    first_moment: Vec<LayerGrad<T>>,
    second_moment: Vec<LayerGrad<T>>,
    step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Mlp<T>) -> Self {
        let zeros: Vec<LayerGrad<T>> = net
            .layers()
            .iter()
            .map(|l| LayerGrad {
                weights: Array2::zeros((l.output_dim(), l.input_dim())),
                bias: Array1::zeros(l.output_dim()),
            })
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment_nonnegative(&self) -> bool {
        self.second_moment
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|&v| v >= T::zero()))
    }
}

/// One bias-corrected Adam update. Rejects the whole update when any
/// gradient entry is non-finite, leaving parameters and state untouched.
pub fn adam_step<T: Real>(net: &mut Mlp<T>, grads: &Gradients<T>, state: &mut AdamState<T>, lr: T) -> Result<()> {
    if !(lr > T::zero()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if grads.layers.len() != net.layers().len() || state.first_moment.len() != net.layers().len() {
        return Err(Error::dim("adam layer count", net.layers().len(), grads.layers.len()));
    }
    for (idx, (layer, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
        if g.weights.dim() != layer.weights().dim() || g.bias.len() != layer.bias().len() {
            return Err(Error::dim("adam gradient shape", layer.param_count(), g.weights.len() + g.bias.len()));
        }
        let bad = g.weights.iter().chain(g.bias.iter()).filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFinite(format!("{bad} non-finite gradient entries in layer {idx}")));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);

    for (((layer, g), m), v) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let update = |p: &mut T, &gi: &T, mi: &mut T, vi: &mut T| {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        };
        Zip::from(layer.weights_mut())
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(update);
        Zip::from(layer.bias_mut())
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}

/// Rescales parameter gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm > max_norm && norm > T::zero() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Step-decay learning rate: `initial * factor^(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            factor: 1.0,
            every: 1,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 0.9,
            every: 20,
        }
    }
}
