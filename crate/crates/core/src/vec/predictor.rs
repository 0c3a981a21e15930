//! Success-rate predictors mapping `(distance, cpu, deadline)` to `x̂ ∈ [0, 1]`,
//! and the error budget that sizes the uncertainty set.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, ProblemInstance};
use super::simulate::Feature;
use crate::error::{Error, Result};
use crate::nn::{adam_step, checkpoint, Activation, AdamState, Mlp};

pub const PREDICTOR_SCHEMA: &str = "lrco-predictor v1";

fn inputs(f: &Feature) -> [f64; 3] {
    [f.distance, f.cpu, f.deadline]
}

/// Ordinary least squares on `(distance, cpu, deadline, 1)`, output clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPredictor {
    /// `[w_distance, w_cpu, w_deadline, bias]`.
    pub coef: [f64; 4],
}

impl LinearPredictor {
    /// Unclamped affine output.
    pub fn raw(&self, f: &Feature) -> f64 {
        let [d, c, l] = inputs(f);
        self.coef[0] * d + self.coef[1] * c + self.coef[2] * l + self.coef[3]
    }

    pub fn predict(&self, f: &Feature) -> f64 {
        self.raw(f).clamp(0.0, 1.0)
    }
}

/// Relative singular-value floor below which the design is treated as rank
/// deficient.
const RANK_TOL: f64 = 1e-10;

pub fn fit_linear(features: &[Feature], targets: &[f64]) -> Result<LinearPredictor> {
    if features.len() != targets.len() {
        return Err(Error::dim("linear fit targets", features.len(), targets.len()));
    }
    if features.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 samples, got {}", features.len())));
    }
    let n = features.len();
    let design = DMatrix::from_fn(n, 4, |r, c| if c == 3 { 1.0 } else { inputs(&features[r])[c] });
    let y = DVector::from_column_slice(targets);
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min / s_max < RANK_TOL {
        return Err(Error::Fit("rank-deficient design matrix".into()));
    }
    let w = svd
        .solve(&y, RANK_TOL * s_max)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(LinearPredictor {
        coef: [w[0], w[1], w[2], w[3]],
    })
}

/// Linear base plus a small MLP fitted to its residual on standardized inputs.
#[derive(Clone, Debug)]
pub struct ResidualPredictor {
    pub base: LinearPredictor,
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    pub net: Mlp<f64>,
}

impl ResidualPredictor {
    fn standardize(&self, f: &Feature) -> [f64; 3] {
        let v = inputs(f);
        std::array::from_fn(|k| (v[k] - self.mean[k]) / self.scale[k])
    }

    pub fn predict(&self, f: &Feature) -> f64 {
        let r = self.net.predict_one(&self.standardize(f)).expect("net input is 3-dim")[0];
        (self.base.raw(f) + r).clamp(0.0, 1.0)
    }

    pub fn predict_all(&self, features: &[Feature]) -> Vec<f64> {
        let rows: Vec<f64> = features.iter().flat_map(|f| self.standardize(f)).collect();
        let x = Array2::from_shape_vec((features.len(), 3), rows).expect("row-major 3 columns");
        let r = self.net.predict(x.view()).expect("net input is 3-dim");
        features
            .iter()
            .zip(r.column(0))
            .map(|(f, r)| (self.base.raw(f) + r).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFitConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ResidualFitConfig {
    fn default() -> Self {
        Self {
            hidden: 20,
            epochs: 20,
            lr: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Fits the residual MLP with mini-batch Adam on mean squared error.
/// Returns the predictor and the mean training loss of each epoch.
pub fn fit_residual(
    features: &[Feature],
    targets: &[f64],
    base: LinearPredictor,
    cfg: &ResidualFitConfig,
) -> Result<(ResidualPredictor, Vec<f64>)> {
    if features.len() != targets.len() {
        return Err(Error::dim("residual fit targets", features.len(), targets.len()));
    }
    if features.is_empty() || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::Config("residual fit needs samples, batch size and hidden width".into()));
    }
    let n = features.len();
    let mut mean = [0.0; 3];
    let mut scale = [0.0; 3];
    for f in features {
        let v = inputs(f);
        for k in 0..3 {
            mean[k] += v[k] / n as f64;
        }
    }
    for f in features {
        let v = inputs(f);
        for k in 0..3 {
            scale[k] += (v[k] - mean[k]).powi(2) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Mlp::build(&[3, cfg.hidden, cfg.hidden, 1], Activation::Relu, Activation::Identity, &mut rng)?;
    let mut model = ResidualPredictor { base, mean, scale, net };
    let x: Vec<[f64; 3]> = features.iter().map(|f| model.standardize(f)).collect();
    let r: Vec<f64> = features
        .iter()
        .zip(targets)
        .map(|(f, t)| t - model.base.raw(f))
        .collect();
    let mut adam = AdamState::new(&model.net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let xb = Array2::from_shape_fn((b, 3), |(i, k)| x[chunk[i]][k]);
            let (out, tape) = model.net.forward(xb.view())?;
            let mut dy = Array2::zeros((b, 1));
            for (i, &s) in chunk.iter().enumerate() {
                let e = out[[i, 0]] - r[s];
                total += e * e;
                dy[[i, 0]] = 2.0 * e / b as f64;
            }
            let grads = model.net.backward(&tape, dy.view())?;
            adam_step(&mut model.net, &grads, &mut adam, cfg.lr)?;
        }
        curve.push(total / n as f64);
    }
    Ok((model, curve))
}

#[derive(Clone, Debug)]
pub enum Predictor {
    Linear(LinearPredictor),
    Residual(ResidualPredictor),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Linear(_) => "linear",
            Predictor::Residual(_) => "residual",
        }
    }

    pub fn predict(&self, f: &Feature) -> f64 {
        match self {
            Predictor::Linear(p) => p.predict(f),
            Predictor::Residual(p) => p.predict(f),
        }
    }

    pub fn predict_all(&self, features: &[Feature]) -> Vec<f64> {
        match self {
            Predictor::Linear(p) => features.iter().map(|f| p.predict(f)).collect(),
            Predictor::Residual(p) => p.predict_all(features),
        }
    }

    /// Fills `x_pred` of every instance.
    pub fn apply(&self, dataset: &mut Dataset) {
        for inst in &mut dataset.instances {
            inst.x_pred = Some(self.predict_all(&inst.features));
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {PREDICTOR_SCHEMA} kind={}\n", self.kind());
        let base = match self {
            Predictor::Linear(p) => p,
            Predictor::Residual(p) => &p.base,
        };
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        writeln!(s, "coef={}", join(&base.coef)).unwrap();
        if let Predictor::Residual(p) = self {
            writeln!(s, "mean={}", join(&p.mean)).unwrap();
            writeln!(s, "scale={}", join(&p.scale)).unwrap();
            s.push_str(&checkpoint::to_text(&p.net));
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let kind = header
            .strip_prefix("# ")
            .and_then(|h| h.strip_prefix(PREDICTOR_SCHEMA))
            .and_then(|h| h.trim().strip_prefix("kind="))
            .ok_or_else(|| Error::parse(source, 1, format!("expected '# {PREDICTOR_SCHEMA} kind=...'")))?;
        let mut vector = |key: &str, lineno: usize, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().unwrap_or_default();
            let vals = line
                .strip_prefix(key)
                .and_then(|l| l.strip_prefix('='))
                .ok_or_else(|| Error::parse(source, lineno, format!("expected {key}=")))?
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
            if vals.len() != len {
                return Err(Error::parse(source, lineno, format!("expected {len} values for {key}")));
            }
            Ok(vals)
        };
        let c = vector("coef", 2, 4)?;
        let base = LinearPredictor {
            coef: [c[0], c[1], c[2], c[3]],
        };
        match kind {
            "linear" => Ok(Predictor::Linear(base)),
            "residual" => {
                let m = vector("mean", 3, 3)?;
                let s = vector("scale", 4, 3)?;
                let rest: Vec<&str> = lines.collect();
                let net = checkpoint::from_text(&rest.join("\n"), source)?;
                if net.input_dim() != 3 || net.output_dim() != 1 {
                    return Err(Error::parse(source, 5, "residual network must map 3 inputs to 1 output"));
                }
                Ok(Predictor::Residual(ResidualPredictor {
                    base,
                    mean: [m[0], m[1], m[2]],
                    scale: [s[0], s[1], s[2]],
                    net,
                }))
            }
            other => Err(Error::parse(source, 1, format!("unknown predictor kind '{other}'"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Flattens every feature and true rate of a set of instances.
pub fn training_pairs(instances: &[ProblemInstance]) -> (Vec<Feature>, Vec<f64>) {
    let features = instances.iter().flat_map(|i| i.features.iter().copied()).collect();
    let targets = instances.iter().flat_map(|i| i.x_true.iter().copied()).collect();
    (features, targets)
}

/// `q`-quantile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("percentile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("percentile input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Per-instance `‖x_pred − x_true‖₂`.
pub fn prediction_errors(instances: &[ProblemInstance]) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|inst| {
            let pred = inst.predicted()?;
            Ok(pred
                .iter()
                .zip(&inst.x_true)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

/// Uncertainty radius: the `q`-quantile of per-instance L2 prediction error.
pub fn error_budget(instances: &[ProblemInstance], q: f64) -> Result<f64> {
    percentile(&prediction_errors(instances)?, q)
}
