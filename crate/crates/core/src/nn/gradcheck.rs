use ndarray::ArrayView2;

use super::network::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Central-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Check at most this many evenly strided entries per weight/bias
    /// tensor. `None` checks every parameter.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_tensor: None,
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn strided(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => {
            let c = c.max(1);
            (0..c).map(|k| k * len / c).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` parameter gradients of `objective` against central
/// finite differences and returns the maximum relative error.
pub fn finite_difference_check<T, F>(net: &Mlp<T>, analytic: &Gradients<T>, objective: F, opts: GradCheck) -> f64
where
    T: Real,
    F: Fn(&Mlp<T>) -> T,
{
    let h = T::lit(opts.step);
    let two_h = opts.step * 2.0;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (li, g) in analytic.layers.iter().enumerate() {
        let cols = g.weights.ncols();
        for idx in strided(g.weights.len(), opts.max_per_tensor) {
            let (r, c) = (idx / cols, idx % cols);
            let orig = probe.layers()[li].weights()[[r, c]];
            probe.layers_mut()[li].weights_mut()[[r, c]] = orig + h;
            let up = objective(&probe).as_f64();
            probe.layers_mut()[li].weights_mut()[[r, c]] = orig - h;
            let down = objective(&probe).as_f64();
            probe.layers_mut()[li].weights_mut()[[r, c]] = orig;
            worst = worst.max(relative_error(g.weights[[r, c]].as_f64(), (up - down) / two_h));
        }
        for idx in strided(g.bias.len(), opts.max_per_tensor) {
            let orig = probe.layers()[li].bias()[idx];
            probe.layers_mut()[li].bias_mut()[idx] = orig + h;
            let up = objective(&probe).as_f64();
            probe.layers_mut()[li].bias_mut()[idx] = orig - h;
            let down = objective(&probe).as_f64();
            probe.layers_mut()[li].bias_mut()[idx] = orig;
            worst = worst.max(relative_error(g.bias[idx].as_f64(), (up - down) / two_h));
        }
    }
    worst
}

/// Maximum relative error between backpropagated and finite-difference
/// parameter gradients of `loss(net(input))`.
///
/// `loss` returns the scalar loss and its gradient with respect to the
/// network output.
pub fn grad_check<T, L>(net: &Mlp<T>, input: &[T], loss: L, opts: GradCheck) -> Result<f64>
where
    T: Real,
    L: Fn(&[T]) -> (T, Vec<T>),
{
    let (out, tape) = net.forward_one(input)?;
    let (_, dout) = loss(&out);
    if dout.len() != out.len() {
        return Err(Error::dim("loss gradient", out.len(), dout.len()));
    }
    let dy = ArrayView2::from_shape((1, dout.len()), &dout).expect("row view");
    let analytic = net.backward(&tape, dy)?;
    let objective = |n: &Mlp<T>| {
        let y = n.predict_one(input).expect("dimensions already validated");
        loss(&y).0
    };
    Ok(finite_difference_check(net, &analytic, objective, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(y: &[f64]) -> (f64, Vec<f64>) {
        (y.iter().map(|v| 0.5 * v * v).sum(), y.to_vec())
    }

    #[test]
    fn linear_network_quadratic_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f64> = Mlp::build(&[3, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let err = grad_check(&net, &[0.3, -0.7, 1.1], quadratic, GradCheck::default()).unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn softmax_log_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net: Mlp<f64> = Mlp::build(&[4, 8, 3], Activation::Tanh, Activation::Softmax, &mut rng).unwrap();
        let log_loss = |y: &[f64]| (-y[1].ln(), vec![0.0, -1.0 / y[1], 0.0]);
        let err = grad_check(&net, &[0.2, -0.4, 0.9, 0.05], log_loss, GradCheck::default()).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Mlp<f64> = Mlp::build(&[2, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let wrong = |y: &[f64]| (y.iter().map(|v| v * v).sum::<f64>(), y.to_vec());
        let err = grad_check(&net, &[1.0, 2.0], wrong, GradCheck::default()).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn stride_selection_is_bounded() {
        assert_eq!(strided(10, Some(3)), vec![0, 3, 6]);
        assert_eq!(strided(2, Some(5)), vec![0, 1]);
        assert_eq!(strided(4, None).len(), 4);
    }
}
