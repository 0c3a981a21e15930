//! Run configuration: a profile's defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use lrco::baselines::{PgaConfig, PolicyKind};
use lrco::lrco::LrcoConfig;
use lrco::maximizer::MaximizerTrainConfig;
use lrco::minimizer::{BaselineSource, GradientForm, TrainConfig};
use lrco::nn::LrSchedule;
use lrco::vec::{DatasetConfig, FeatureDistribution, OffloadShape, ResidualFitConfig, SimulationParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Toy,
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub predictor: PredictorSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub services: usize,
    pub clouds: usize,
    pub distance: [f64; 2],
    pub cpu: [f64; 2],
    pub deadlines: Vec<f64>,
    pub shared_deadline: bool,
    pub interference_dbm: [f64; 2],
    pub interference_spread_db: f64,
    pub eta: [f64; 2],
    pub rounds: usize,
    pub gps_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    /// `linear` or `residual`: which predictor feeds training and evaluation.
    pub kind: String,
    pub percentile: f64,
    /// Fixed budget; when absent ε is the percentile of validation errors.
    pub epsilon: Option<f64>,
    pub residual_hidden: usize,
    pub residual_epochs: usize,
    pub residual_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `all`, `lrco` or `lco`.
    pub policy: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub baseline_samples: usize,
    pub baseline: String,
    pub gradient: String,
    pub candidates: usize,
    pub hidden: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_every: usize,
    pub clip_norm: f64,
    pub ensemble_hidden: usize,
    pub lambdas: Vec<f64>,
    pub maximizer_epochs: usize,
    pub maximizer_lr: f64,
    pub maximizer_steps: usize,
    pub maximizer_batch: usize,
    pub max_iterate: usize,
    pub decisions_per_iteration: usize,
    pub context_subsample: usize,
    pub convergence_tol: f64,
    pub validation_contexts: usize,
    pub validation_candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub policies: Vec<String>,
    pub pga_starts: usize,
    pub pga_steps: usize,
    pub pga_step_fraction: f64,
    pub bench_runs: usize,
    /// Test instances timed by `bench-time` (0 = all).
    pub bench_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Test instances evaluated per setting (0 = all).
    pub instances: usize,
    pub samples: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let f = FeatureDistribution::default();
        let s = SimulationParams::default();
        Self {
            train: 3000,
            val: 800,
            test: 1200,
            services: 4,
            clouds: 5,
            distance: f.distance.into(),
            cpu: f.cpu.into(),
            deadlines: f.deadlines,
            shared_deadline: f.shared_deadline,
            interference_dbm: f.interference_center.into(),
            interference_spread_db: s.interference_spread_db,
            eta: f.eta.into(),
            rounds: s.rounds,
            gps_error: s.gps_error,
        }
    }
}

impl Default for PredictorSection {
    fn default() -> Self {
        let r = ResidualFitConfig::default();
        Self {
            kind: "linear".into(),
            percentile: 0.99,
            epsilon: None,
            residual_hidden: r.hidden,
            residual_epochs: r.epochs,
            residual_lr: r.lr,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let l = LrcoConfig::default();
        let m = &l.minimizer;
        Self {
            policy: "all".into(),
            epochs: m.epochs,
            batch_size: m.batch_size,
            baseline_samples: m.baseline_samples,
            baseline: m.baseline.name().into(),
            gradient: m.gradient.name().into(),
            candidates: m.candidates,
            hidden: m.hidden,
            lr: m.schedule.initial,
            lr_decay: m.schedule.factor,
            lr_every: m.schedule.every,
            clip_norm: m.clip_norm,
            ensemble_hidden: l.ensemble_hidden,
            lambdas: l.lambdas.clone(),
            maximizer_epochs: l.maximizer.epochs,
            maximizer_lr: l.maximizer.schedule.initial,
            maximizer_steps: l.maximizer.steps_per_epoch,
            maximizer_batch: l.maximizer.batch_size,
            max_iterate: l.max_iterate,
            decisions_per_iteration: l.decisions_per_iteration,
            context_subsample: l.context_subsample,
            convergence_tol: l.convergence_tol,
            validation_contexts: l.validation_contexts,
            validation_candidates: l.validation_candidates,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = PgaConfig::default();
        Self {
            policies: PolicyKind::ALL.iter().map(|p| p.name().to_string()).collect(),
            pga_starts: p.starts,
            pga_steps: p.steps,
            pga_step_fraction: p.step_fraction,
            bench_runs: 10,
            bench_instances: 50,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            instances: 200,
            samples: vec![10, 100, 1000],
            hidden: vec![20, 50, 200],
        }
    }
}

/// Recursively overwrites `base` with the entries of `over`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataSection::default(),
            predictor: PredictorSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        };
        match profile {
            Profile::Desk => {}
            Profile::Full => {
                cfg.data.train = 15_000;
                cfg.data.val = 4_000;
                cfg.data.test = 6_000;
                cfg.train.context_subsample = 15_000;
                cfg.sweep.instances = 0;
                cfg.eval.bench_instances = 0;
            }
            Profile::Toy => {
                cfg.data.train = 400;
                cfg.data.val = 100;
                cfg.data.test = 100;
                cfg.data.services = 2;
                cfg.data.clouds = 3;
                cfg.train.hidden = 64;
                cfg.train.ensemble_hidden = 64;
                cfg.train.maximizer_epochs = 10;
                cfg.train.max_iterate = 1;
                cfg.train.decisions_per_iteration = 64;
                cfg.train.context_subsample = 400;
                cfg.train.validation_contexts = 50;
                cfg.train.candidates = 100;
                cfg.eval.pga_starts = 4;
                cfg.eval.pga_steps = 100;
                cfg.eval.bench_runs = 3;
                cfg.eval.bench_instances = 20;
                cfg.sweep.instances = 50;
                cfg.sweep.samples = vec![1, 10, 100];
                cfg.sweep.hidden = vec![20, 50];
            }
        }
        cfg
    }

    /// Profile defaults overlaid by the TOML text `overlay`.
    pub fn from_overlay(profile: Profile, overlay: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::profile(profile))?;
        let over: toml::Table = toml::from_str(overlay).context("parsing config")?;
        merge(&mut base, over);
        let cfg: Self = base.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_overlay(profile, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset()?.features.validate()?;
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            bail!("dataset sizes must be positive");
        }
        if !matches!(self.predictor.kind.as_str(), "linear" | "residual") {
            bail!("predictor.kind must be linear or residual, got {}", self.predictor.kind);
        }
        if !(0.0..=1.0).contains(&self.predictor.percentile) {
            bail!("predictor.percentile must lie in [0, 1]");
        }
        if let Some(e) = self.predictor.epsilon {
            if !(e > 0.0) {
                bail!("predictor.epsilon must be positive");
            }
        }
        if !matches!(self.train.policy.as_str(), "all" | "lrco" | "lco") {
            bail!("train.policy must be all, lrco or lco, got {}", self.train.policy);
        }
        self.policies()?;
        self.lrco()?.minimizer.validate()?;
        if self.train.lambdas.is_empty() {
            bail!("train.lambdas needs at least one member");
        }
        Ok(())
    }

    pub fn shape(&self) -> OffloadShape {
        OffloadShape {
            services: self.data.services,
            clouds: self.data.clouds,
        }
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let d = &self.data;
        Ok(DatasetConfig {
            shape: OffloadShape::new(d.services, d.clouds)?,
            features: FeatureDistribution {
                distance: (d.distance[0], d.distance[1]),
                cpu: (d.cpu[0], d.cpu[1]),
                deadlines: d.deadlines.clone(),
                shared_deadline: d.shared_deadline,
                interference_center: (d.interference_dbm[0], d.interference_dbm[1]),
                eta: (d.eta[0], d.eta[1]),
            },
            simulation: SimulationParams {
                rounds: d.rounds,
                gps_error: d.gps_error,
                interference_spread_db: d.interference_spread_db,
                ..SimulationParams::default()
            },
        })
    }

    pub fn residual(&self) -> ResidualFitConfig {
        ResidualFitConfig {
            hidden: self.predictor.residual_hidden,
            epochs: self.predictor.residual_epochs,
            lr: self.predictor.residual_lr,
            seed: self.seed,
            ..ResidualFitConfig::default()
        }
    }

    pub fn minimizer(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            baseline_samples: t.baseline_samples,
            baseline: BaselineSource::from_name(&t.baseline).with_context(|| format!("unknown train.baseline {}", t.baseline))?,
            candidates: t.candidates,
            hidden: t.hidden,
            schedule: LrSchedule {
                initial: t.lr,
                factor: t.lr_decay,
                every: t.lr_every,
            },
            clip_norm: t.clip_norm,
            gradient: GradientForm::from_name(&t.gradient).with_context(|| format!("unknown train.gradient {}", t.gradient))?,
            seed: self.seed,
        })
    }

    pub fn lrco(&self) -> Result<LrcoConfig> {
        let t = &self.train;
        Ok(LrcoConfig {
            ensemble_hidden: t.ensemble_hidden,
            lambdas: t.lambdas.clone(),
            maximizer: MaximizerTrainConfig {
                epochs: t.maximizer_epochs,
                steps_per_epoch: t.maximizer_steps,
                batch_size: t.maximizer_batch,
                schedule: LrSchedule {
                    initial: t.maximizer_lr,
                    factor: t.lr_decay,
                    every: t.lr_every,
                },
                ..MaximizerTrainConfig::default()
            },
            minimizer: self.minimizer()?,
            max_iterate: t.max_iterate,
            decisions_per_iteration: t.decisions_per_iteration,
            context_subsample: t.context_subsample,
            convergence_tol: t.convergence_tol,
            validation_contexts: t.validation_contexts,
            validation_candidates: t.validation_candidates,
            seed: self.seed,
        })
    }

    pub fn pga(&self) -> PgaConfig {
        PgaConfig {
            starts: self.eval.pga_starts,
            steps: self.eval.pga_steps,
            step_fraction: self.eval.pga_step_fraction,
        }
    }

    pub fn policies(&self) -> Result<Vec<PolicyKind>> {
        self.eval
            .policies
            .iter()
            .map(|p| PolicyKind::from_name(p).with_context(|| format!("unknown policy {p}")))
            .collect()
    }
}
