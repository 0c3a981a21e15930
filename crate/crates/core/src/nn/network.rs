use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layer::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Feedforward stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Activations recorded by [`Mlp::forward`]; enough to run the exact
/// reverse pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    inputs: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

impl<T> Tape<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    /// Post-activation output of the last layer.
    pub fn output(&self) -> &Array2<T> {
        self.outputs.last().expect("tape of an empty network")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
    /// Gradient with respect to the network input, one row per sample.
    pub input: Array2<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros((l.output_dim(), l.input_dim())),
                    bias: Array1::zeros(l.output_dim()),
                })
                .collect(),
            input: Array2::zeros((0, net.input_dim())),
        }
    }

    /// Accumulates parameter gradients; the input gradient is left alone.
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.layers {
            g.weights.mapv_inplace(|v| v * factor);
            g.bias.mapv_inplace(|v| v * factor);
        }
    }

    /// L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> T {
        let sq = self.layers.iter().fold(T::zero(), |acc, g| {
            acc + g.weights.iter().map(|&v| v * v).sum::<T>() + g.bias.iter().map(|&v| v * v).sum::<T>()
        });
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
    }

    /// Flattened parameter gradients in checkpoint order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weights.iter().copied());
            out.extend(g.bias.iter().copied());
        }
        out
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim("layer chaining", pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with the given layer widths, e.g. `[2, 400, 400, 1]`.
    pub fn build<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::random(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("nonempty");
        last.weights_mut().fill(T::zero());
        last.bias_mut().fill(T::zero());
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Batched forward pass (samples in rows) recording a tape.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Tape<T>)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let mut z = layer.affine(cur.view());
            layer.activation().apply(&mut z);
            inputs.push(cur);
            outputs.push(z.clone());
            cur = z;
        }
        Ok((cur, Tape { inputs, outputs }))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut cur: Option<Array2<T>> = None;
        for layer in &self.layers {
            let mut z = match &cur {
                None => layer.affine(x.view()),
                Some(c) => layer.affine(c.view()),
            };
            layer.activation().apply(&mut z);
            cur = Some(z);
        }
        Ok(cur.expect("nonempty"))
    }

    pub fn forward_one(&self, x: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (out, tape) = self.forward(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    pub fn predict_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass given the gradient of a scalar objective with respect to
    /// the network output (summed over the batch).
    pub fn backward(&self, tape: &Tape<T>, output_grad: ArrayView2<T>) -> Result<Gradients<T>> {
        self.check_tape(tape, &output_grad)?;
        let last = self.layers.len() - 1;
        let dz = self.layers[last].activation().backprop(&tape.outputs[last], output_grad);
        Ok(self.backward_from(tape, dz))
    }

    /// Reverse pass seeded with the gradient with respect to the last
    /// layer's pre-activation. Used where the objective is expressed in
    /// logits (log-sigmoid) and the output derivative would be ill-conditioned.
    pub fn backward_preactivation(&self, tape: &Tape<T>, preact_grad: ArrayView2<T>) -> Result<Gradients<T>> {
        self.check_tape(tape, &preact_grad)?;
        Ok(self.backward_from(tape, preact_grad.to_owned()))
    }

    fn check_tape(&self, tape: &Tape<T>, grad: &ArrayView2<T>) -> Result<()> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::dim("tape layers", self.layers.len(), tape.inputs.len()));
        }
        let out = tape.output();
        if grad.dim() != out.dim() {
            return Err(Error::dim("output gradient", out.len(), grad.len()));
        }
        Ok(())
    }

    fn backward_from(&self, tape: &Tape<T>, mut dz: Array2<T>) -> Gradients<T> {
        let mut grads = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[idx];
            let weights = dz.t().dot(input);
            let bias = dz.sum_axis(Axis(0));
            let dx = dz.dot(&layer.weights());
            grads.push(LayerGrad { weights, bias });
            if idx > 0 {
                dz = self.layers[idx - 1].activation().backprop(&tape.outputs[idx - 1], dx.view());
            } else {
                dz = dx;
            }
        }
        grads.reverse();
        Gradients {
            layers: grads,
            input: dz,
        }
    }
}
