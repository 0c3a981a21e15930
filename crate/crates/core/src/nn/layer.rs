use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    /// Row-wise softmax over the layer's outputs.
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }

    /// Applies the activation in place. Rows are samples.
    pub(crate) fn apply<T: Real>(self, z: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }

    /// Maps a gradient with respect to the activation output `y` to the
    /// gradient with respect to the pre-activation.
    pub(crate) fn backprop<T: Real>(self, y: &Array2<T>, dy: ArrayView2<T>) -> Array2<T> {
        let one = T::one();
        match self {
            Activation::Identity => dy.to_owned(),
            Activation::Relu => {
                let mut dz = dy.to_owned();
                Zip::from(&mut dz).and(y).for_each(|d, &out| {
                    if out <= T::zero() {
                        *d = T::zero();
                    }
                });
                dz
            }
            Activation::Sigmoid => {
                let mut dz = dy.to_owned();
                Zip::from(&mut dz).and(y).for_each(|d, &s| *d = *d * s * (one - s));
                dz
            }
            Activation::Tanh => {
                let mut dz = dy.to_owned();
                Zip::from(&mut dz).and(y).for_each(|d, &t| *d = *d * (one - t * t));
                dz
            }
            Activation::Softmax => {
                let mut dz = dy.to_owned();
                for (mut drow, yrow) in dz.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.iter().zip(yrow.iter()).fold(T::zero(), |acc, (&g, &s)| acc + g * s);
                    Zip::from(&mut drow).and(&yrow).for_each(|g, &s| *g = s * (*g - dot));
                }
                dz
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    weights: Array2<T>,
    bias: Array1<T>,
    activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim("dense layer bias", weights.nrows(), bias.len()));
        }
        if weights.is_empty() {
            return Err(Error::Config("dense layer must have nonzero dimensions".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// He-uniform initialization for relu layers, Glorot-uniform otherwise.
    /// Biases start at zero.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            _ => (6.0 / (input + output) as f64).sqrt(),
        };
        let weights = Array2::from_shape_fn((output, input), |_| T::lit(rng.random_range(-limit..limit)));
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> ArrayView2<'_, T> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, T> {
        self.bias.view()
    }

    /// Mutable views keep the layer shape fixed.
    pub fn weights_mut(&mut self) -> ArrayViewMut2<'_, T> {
        self.weights.view_mut()
    }

    pub fn bias_mut(&mut self) -> ArrayViewMut1<'_, T> {
        self.bias.view_mut()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activation `X Wᵀ + b` for a batch with samples in rows.
    pub(crate) fn affine(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias.view().insert_axis(Axis(0));
        z
    }
}
