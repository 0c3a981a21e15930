//! Synthetic problem instances and their CSV representation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::simulate::{simulate_success_rate, Feature, SimulationParams};
use super::utility::OffloadShape;
use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "lrco-dataset v1";

/// Sampling ranges for instance features. Ranges are inclusive `(lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDistribution {
    pub distance: (f64, f64),
    pub cpu: (f64, f64),
    pub deadlines: Vec<f64>,
    /// Draw one deadline per instance (the task's) instead of one per pair.
    pub shared_deadline: bool,
    /// Range of the per-pair interference center in dBm.
    pub interference_center: (f64, f64),
    pub eta: (f64, f64),
}

impl Default for FeatureDistribution {
    fn default() -> Self {
        Self {
            distance: (10.0, 60.0),
            cpu: (0.1, 1.0),
            deadlines: vec![0.25, 0.5, 0.75, 1.0],
            shared_deadline: true,
            interference_center: (-22.0, -18.0),
            eta: (0.01, 0.05),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl FeatureDistribution {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("distance", self.distance),
            ("cpu", self.cpu),
            ("interference_center", self.interference_center),
            ("eta", self.eta),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bad {name} range ({lo}, {hi})")));
            }
        }
        if self.distance.0 <= 0.0 {
            return Err(Error::Config("distances must be positive".into()));
        }
        if self.cpu.1 >= super::channel::CPU_POLE {
            return Err(Error::Config(format!("cpu range must stay below {}", super::channel::CPU_POLE)));
        }
        if self.deadlines.is_empty() || self.deadlines.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config(format!("bad deadline set {:?}", self.deadlines)));
        }
        Ok(())
    }

    pub fn sample_feature<R: Rng + ?Sized>(&self, rng: &mut R) -> Feature {
        Feature {
            distance: uniform(rng, self.distance),
            cpu: uniform(rng, self.cpu),
            deadline: *self.deadlines.choose(rng).expect("validated non-empty"),
            interference: uniform(rng, self.interference_center),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub id: u64,
    pub shape: OffloadShape,
    pub features: Vec<Feature>,
    pub x_true: Vec<f64>,
    /// Predicted success rates, present once a predictor has been applied.
    pub x_pred: Option<Vec<f64>>,
    pub eta: Vec<f64>,
}

impl ProblemInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.shape.dim();
        if self.features.len() != n {
            return Err(Error::dim("instance features", n, self.features.len()));
        }
        if self.x_true.len() != n {
            return Err(Error::dim("instance x_true", n, self.x_true.len()));
        }
        if self.eta.len() != n {
            return Err(Error::dim("instance eta", n, self.eta.len()));
        }
        if let Some(p) = &self.x_pred {
            if p.len() != n {
                return Err(Error::dim("instance x_pred", n, p.len()));
            }
        }
        Ok(())
    }

    /// Predicted context; errors when no predictor has been applied.
    pub fn predicted(&self) -> Result<&[f64]> {
        self.x_pred
            .as_deref()
            .ok_or_else(|| Error::Config(format!("instance {} has no predicted context", self.id)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub shape: OffloadShape,
    pub features: FeatureDistribution,
    pub simulation: SimulationParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            shape: OffloadShape {
                services: 4,
                clouds: 5,
            },
            features: FeatureDistribution::default(),
            simulation: SimulationParams::default(),
        }
    }
}

/// Draws `count` instances. Instance `k` of a split depends only on
/// `(seed, split, k)`, so splits and prefixes are reproducible independently.
pub fn generate_instances(cfg: &DatasetConfig, split: Split, count: usize, seed: u64) -> Result<Vec<ProblemInstance>> {
    cfg.features.validate()?;
    (0..count as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(split.stream() << 48 | k);
            let n = cfg.shape.dim();
            let mut features: Vec<Feature> = (0..n).map(|_| cfg.features.sample_feature(&mut rng)).collect();
            if cfg.features.shared_deadline {
                let deadline = features[0].deadline;
                features.iter_mut().for_each(|f| f.deadline = deadline);
            }
            let x_true = features
                .iter()
                .map(|f| simulate_success_rate(f, &cfg.simulation, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let eta = (0..n).map(|_| uniform(&mut rng, cfg.features.eta)).collect();
            Ok(ProblemInstance {
                id: k,
                shape: cfg.shape,
                features,
                x_true,
                x_pred: None,
                eta,
            })
        })
        .collect()
}

/// A split of instances plus the seed that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub split: Split,
    pub instances: Vec<ProblemInstance>,
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig, split: Split, count: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            seed,
            split,
            instances: generate_instances(cfg, split, count, seed)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let shape = self.instances.first().map(|i| i.shape);
        let (m, c) = shape.map_or((0, 0), |s| (s.services, s.clouds));
        let n = m * c;
        writeln!(
            out,
            "# {DATASET_SCHEMA} seed={} split={} services={m} clouds={c}",
            self.seed,
            self.split.name()
        )
        .unwrap();
        let mut cols = vec!["id".to_string(), "services".into(), "clouds".into()];
        for k in 0..n {
            for f in ["distance", "cpu", "deadline", "interference"] {
                cols.push(format!("{f}_{k}"));
            }
        }
        for prefix in ["x_true", "x_pred", "eta"] {
            cols.extend((0..n).map(|k| format!("{prefix}_{k}")));
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        for inst in &self.instances {
            let mut fields = vec![inst.id.to_string(), m.to_string(), c.to_string()];
            for f in &inst.features {
                fields.extend([f.distance, f.cpu, f.deadline, f.interference].map(|v| v.to_string()));
            }
            fields.extend(inst.x_true.iter().map(f64::to_string));
            match &inst.x_pred {
                Some(p) => fields.extend(p.iter().map(f64::to_string)),
                None => fields.extend((0..n).map(|_| "NaN".to_string())),
            }
            fields.extend(inst.eta.iter().map(f64::to_string));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, meta) = lines.next().ok_or_else(|| Error::parse(source, 1, "empty file"))?;
        let meta = meta
            .strip_prefix("# ")
            .and_then(|m| m.strip_prefix(DATASET_SCHEMA))
            .ok_or_else(|| Error::parse(source, 1, format!("expected '# {DATASET_SCHEMA}' header")))?;
        let mut seed = None;
        let mut split = None;
        let mut m = None;
        let mut c = None;
        for kv in meta.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(source, 1, format!("bad header field '{kv}'")))?;
            let bad = |_| Error::parse(source, 1, format!("bad value for {k}"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(bad)?),
                "split" => split = Split::from_name(v),
                "services" => m = Some(v.parse::<usize>().map_err(bad)?),
                "clouds" => c = Some(v.parse::<usize>().map_err(bad)?),
                _ => {}
            }
        }
        let (Some(seed), Some(split), Some(m), Some(c)) = (seed, split, m, c) else {
            return Err(Error::parse(source, 1, "header missing seed, split, services or clouds"));
        };
        let n = m * c;
        let expected_cols = 3 + 4 * n + 3 * n;
        let (_, cols) = lines.next().ok_or_else(|| Error::parse(source, 2, "missing column header"))?;
        if cols.split(',').count() != expected_cols {
            return Err(Error::parse(source, 2, format!("expected {expected_cols} columns")));
        }
        let mut instances = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("expected {expected_cols} fields, got {}", fields.len()),
                ));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(source, lineno, format!("bad number '{}'", fields[i])))
            };
            let id = fields[0]
                .parse::<u64>()
                .map_err(|_| Error::parse(source, lineno, "bad id"))?;
            if fields[1] != m.to_string() || fields[2] != c.to_string() {
                return Err(Error::parse(source, lineno, "row shape differs from header"));
            }
            let mut features = Vec::with_capacity(n);
            for k in 0..n {
                let b = 3 + 4 * k;
                features.push(Feature {
                    distance: num(b)?,
                    cpu: num(b + 1)?,
                    deadline: num(b + 2)?,
                    interference: num(b + 3)?,
                });
            }
            let base = 3 + 4 * n;
            let x_true = (0..n).map(|k| num(base + k)).collect::<Result<Vec<_>>>()?;
            let x_pred = (0..n).map(|k| num(base + n + k)).collect::<Result<Vec<_>>>()?;
            let eta = (0..n).map(|k| num(base + 2 * n + k)).collect::<Result<Vec<_>>>()?;
            let x_pred = if x_pred.iter().all(|v| v.is_nan()) {
                None
            } else {
                Some(x_pred)
            };
            let inst = ProblemInstance {
                id,
                shape: OffloadShape::new(m, c)?,
                features,
                x_true,
                x_pred,
                eta,
            };
            inst.validate()?;
            instances.push(inst);
        }
        Ok(Self { seed, split, instances })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
