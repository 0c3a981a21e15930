mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lrco::baselines::PolicyKind;
use lrco::eval::{bench_time, candidate_sweep, evaluate, predicted_contexts, EvalConfig, Models};
use lrco::lrco::{iterative_train, lco_train, LrcoModel, TrainingLog};
use lrco::minimizer::{train_minimizer, MinimizerPolicy, MinimizerTrainReport};
use lrco::problem::UncertaintySet;
use lrco::vec::{error_budget, file_sha256, fit_linear, fit_residual, training_pairs, Dataset, Predictor, Split};

use config::{Profile, RunConfig};

const MANIFEST_SCHEMA: &str = "lrco-run v1";

#[derive(Parser, Debug)]
#[command(name = "lrco", version, about = "Learned robust task offloading experiments")]
struct Cli {
    /// TOML file overriding the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by all subcommands.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/val/test splits, fit both predictors and report ε.
    GenData,
    /// Refit both predictors on existing splits.
    FitPredictors,
    /// Train LRCO and/or LCO.
    Train {
        #[arg(long, value_parser = ["all", "lrco", "lco"])]
        policy: Option<String>,
    },
    /// Score every configured policy on the test split.
    Eval,
    /// Time decision making per policy, normalized to Oracle.
    BenchTime,
    /// Vary one LRCO setting and report worst-case utility.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Samples,
    Hidden,
    Ensemble,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl Run {
    fn data_path(&self, split: Split) -> PathBuf {
        self.out.join("data").join(format!("{}.csv", split.name()))
    }

    fn predictor_path(&self, kind: &str) -> PathBuf {
        self.out.join("predictors").join(format!("{kind}.txt"))
    }

    fn model_dir(&self, policy: PolicyKind) -> PathBuf {
        self.out.join("models").join(policy.name())
    }

    fn load_split(&self, split: Split) -> Result<Dataset> {
        let path = self.data_path(split);
        let ds = Dataset::load(&path).with_context(|| format!("loading {} (run gen-data first)", path.display()))?;
        if ds.instances.first().is_some_and(|i| i.shape != self.cfg.shape()) {
            bail!("{} does not match the configured services/clouds", path.display());
        }
        Ok(ds)
    }

    /// A split with predictions from the configured predictor.
    fn prepared(&self, split: Split) -> Result<Dataset> {
        let mut ds = self.load_split(split)?;
        let path = self.predictor_path(&self.cfg.predictor.kind);
        let predictor = Predictor::load(&path).with_context(|| format!("loading {}", path.display()))?;
        predictor.apply(&mut ds);
        Ok(ds)
    }

    fn epsilon(&self, val: &Dataset) -> Result<f64> {
        match self.cfg.predictor.epsilon {
            Some(e) => Ok(e),
            None => Ok(error_budget(&val.instances, self.cfg.predictor.percentile)?),
        }
    }

    fn write_manifest(&self, command: &str, epsilon: Option<f64>) -> Result<()> {
        let mut s = format!("# {MANIFEST_SCHEMA}\ncommand={command}\nseed={}\n", self.cfg.seed);
        if let Some(e) = epsilon {
            writeln!(s, "epsilon={e}")?;
        }
        for split in Split::ALL {
            let path = self.data_path(split);
            if path.exists() {
                writeln!(s, "sha256_{}={}", split.name(), file_sha256(&path)?)?;
            }
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.cfg.to_toml());
        write(&self.out.join("manifest").join(format!("{command}.txt")), &s)
    }

    fn gen_data(&self) -> Result<()> {
        let dcfg = self.cfg.dataset()?;
        let sizes = [
            (Split::Train, self.cfg.data.train),
            (Split::Val, self.cfg.data.val),
            (Split::Test, self.cfg.data.test),
        ];
        for (split, n) in sizes {
            log::info!("generating {n} {} instances", split.name());
            let ds = Dataset::generate(&dcfg, split, n, self.cfg.seed)?;
            let path = self.data_path(split);
            fs::create_dir_all(path.parent().expect("has parent"))?;
            ds.save(&path)?;
        }
        self.fit_predictors()?;
        self.write_manifest("gen-data", None)
    }

    fn fit_predictors(&self) -> Result<()> {
        let train = self.load_split(Split::Train)?;
        let val = self.load_split(Split::Val)?;
        let (features, targets) = training_pairs(&train.instances);
        let linear = fit_linear(&features, &targets)?;
        let (residual, losses) = fit_residual(&features, &targets, linear.clone(), &self.cfg.residual())?;
        let q = self.cfg.predictor.percentile;
        let mut report = format!("# lrco-budget v1 percentile={q}\npredictor,epsilon\n");
        let mut budgets = Vec::new();
        for p in [Predictor::Linear(linear), Predictor::Residual(residual)] {
            let path = self.predictor_path(p.kind());
            fs::create_dir_all(path.parent().expect("has parent"))?;
            p.save(&path)?;
            let mut v = val.clone();
            p.apply(&mut v);
            let eps = error_budget(&v.instances, q)?;
            writeln!(report, "{},{eps}", p.kind())?;
            println!("epsilon {} = {eps:.4}", p.kind());
            budgets.push(eps);
        }
        if budgets[0] <= budgets[1] {
            log::warn!("linear budget {} does not exceed residual budget {}", budgets[0], budgets[1]);
        }
        write(&self.out.join("predictors").join("budget.csv"), &report)?;
        let mut curve = String::from("epoch,mse\n");
        for (i, l) in losses.iter().enumerate() {
            writeln!(curve, "{i},{l}")?;
        }
        write(&self.out.join("predictors").join("residual_curve.csv"), &curve)?;
        self.write_manifest("fit-predictors", None)
    }

    fn train(&self, policy: &str) -> Result<()> {
        let train = self.prepared(Split::Train)?;
        let val = self.prepared(Split::Val)?;
        let tr = predicted_contexts(&train.instances)?;
        let eps = self.epsilon(&val)?;
        if policy != "lrco" {
            log::info!("training LCO");
            let (lco, report) = lco_train(&tr, &self.cfg.minimizer()?)?;
            let dir = self.model_dir(PolicyKind::Lco);
            fs::create_dir_all(&dir)?;
            lco.save(&dir.join("policy.txt"))?;
            write(&dir.join("train.txt"), &self.cfg.minimizer()?.to_text())?;
            write(&self.out.join("models").join("lco_curve.csv"), &minimizer_curve(&[(0, &report)]))?;
        }
        if policy != "lco" {
            log::info!("training LRCO with epsilon {eps:.4}");
            let va = predicted_contexts(&val.instances)?;
            let (model, log) = iterative_train(&tr, &va, UncertaintySet::l2(eps)?, &self.cfg.lrco()?)?;
            model.save(&self.model_dir(PolicyKind::Lrco))?;
            write_training_log(&self.out.join("models"), &log)?;
        }
        self.write_manifest("train", Some(eps))
    }

    fn load_models(&self, policies: &[PolicyKind]) -> Result<(Option<LrcoModel<f64>>, Option<MinimizerPolicy<f64>>)> {
        let lrco = if policies.contains(&PolicyKind::Lrco) {
            let dir = self.model_dir(PolicyKind::Lrco);
            Some(LrcoModel::load(&dir).with_context(|| format!("loading {} (run train first)", dir.display()))?)
        } else {
            None
        };
        let lco = if policies.contains(&PolicyKind::Lco) {
            let path = self.model_dir(PolicyKind::Lco).join("policy.txt");
            Some(MinimizerPolicy::load(&path).with_context(|| format!("loading {} (run train first)", path.display()))?)
        } else {
            None
        };
        Ok((lrco, lco))
    }

    /// ε for evaluation, cross-checked against a trained LRCO bundle.
    fn eval_epsilon(&self, lrco: Option<&LrcoModel<f64>>) -> Result<f64> {
        let eps = self.epsilon(&self.prepared(Split::Val)?)?;
        if let Some(m) = lrco {
            let trained = m.uncertainty().epsilon();
            if (trained - eps).abs() > 1e-12 {
                log::warn!("LRCO was trained with epsilon {trained}, evaluating with {eps}");
            }
        }
        Ok(eps)
    }

    fn eval_config(&self, policies: Vec<PolicyKind>) -> EvalConfig {
        EvalConfig {
            policies,
            pga: self.cfg.pga(),
            seed: self.cfg.seed,
        }
    }

    fn eval(&self) -> Result<()> {
        let policies = self.cfg.policies()?;
        let (lrco, lco) = self.load_models(&policies)?;
        let eps = self.eval_epsilon(lrco.as_ref())?;
        let test = self.prepared(Split::Test)?;
        let models = Models {
            lrco: lrco.as_ref(),
            lco: lco.as_ref(),
            lco_candidates: self.cfg.train.candidates,
        };
        let report = evaluate(&test.instances, &models, &UncertaintySet::l2(eps)?, &self.eval_config(policies))?;
        let dir = self.out.join("eval");
        write(&dir.join("summary.csv"), &report.summary_csv())?;
        write(&dir.join("records.csv"), &report.records_csv())?;
        write(&dir.join("cdf.csv"), &report.cdf_csv())?;
        print!("{}", report.summary_csv());
        self.write_manifest("eval", Some(eps))
    }

    fn bench_time(&self) -> Result<()> {
        let policies = self.cfg.policies()?;
        let (lrco, lco) = self.load_models(&policies)?;
        let test = self.prepared(Split::Test)?;
        let n = match self.cfg.eval.bench_instances {
            0 => test.instances.len(),
            n => n.min(test.instances.len()),
        };
        let models = Models {
            lrco: lrco.as_ref(),
            lco: lco.as_ref(),
            lco_candidates: self.cfg.train.candidates,
        };
        let report = bench_time(&test.instances[..n], &models, &policies, self.cfg.eval.bench_runs, self.cfg.seed)?;
        write(&self.out.join("bench").join("timing.csv"), &report.to_csv())?;
        print!("{}", report.to_csv());
        self.write_manifest("bench-time", None)
    }

    fn sweep(&self, axis: Axis) -> Result<()> {
        let (lrco, _) = self.load_models(&[PolicyKind::Lrco])?;
        let model = lrco.expect("requested");
        let eps = self.eval_epsilon(Some(&model))?;
        let set = UncertaintySet::l2(eps)?;
        let test = self.prepared(Split::Test)?;
        let n = match self.cfg.sweep.instances {
            0 => test.instances.len(),
            n => n.min(test.instances.len()),
        };
        let instances = &test.instances[..n];
        let ecfg = self.eval_config(vec![PolicyKind::Lrco]);
        let lrco_wc = |m: &LrcoModel<f64>| -> Result<f64> {
            let models = Models {
                lrco: Some(m),
                lco: None,
                lco_candidates: 0,
            };
            let report = evaluate(instances, &models, &set, &ecfg)?;
            Ok(report.summary(PolicyKind::Lrco).expect("evaluated").worst_case)
        };
        let mut csv = format!("# lrco-sweep v1 axis={axis:?} epsilon={eps} instances={n}\n").to_lowercase();
        match axis {
            Axis::Samples => {
                csv.push_str("samples,worst_case_utility\n");
                for (k, wc) in candidate_sweep(instances, &model, &self.cfg.sweep.samples, &set, &ecfg)? {
                    writeln!(csv, "{k},{wc}")?;
                }
            }
            Axis::Ensemble => {
                csv.push_str("setting,lambda,worst_case_utility\n");
                writeln!(csv, "ensemble,,{}", lrco_wc(&model)?)?;
                for (i, member) in model.ensemble.members().iter().enumerate() {
                    let single = LrcoModel::new(model.policy.clone(), model.ensemble.subset(&[i])?, model.candidates)?;
                    writeln!(csv, "member_{i},{},{}", member.lambda(), lrco_wc(&single)?)?;
                }
            }
            Axis::Hidden => {
                let train = self.prepared(Split::Train)?;
                let tr = predicted_contexts(&train.instances)?;
                csv.push_str("hidden,worst_case_utility\n");
                for &h in &self.cfg.sweep.hidden {
                    log::info!("training a {h}-unit minimizer against the trained ensemble");
                    let tcfg = lrco::minimizer::TrainConfig {
                        hidden: h,
                        ..self.cfg.minimizer()?
                    };
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(self.cfg.seed);
                    let mut policy = MinimizerPolicy::new(model.policy.dim(), h, &mut rng)?;
                    train_minimizer(&mut policy, &tr, &model.ensemble, &tcfg)?;
                    let variant = LrcoModel::new(policy, model.ensemble.clone(), model.candidates)?;
                    writeln!(csv, "{h},{}", lrco_wc(&variant)?)?;
                }
            }
        }
        let name = format!("{axis:?}").to_lowercase();
        write(&self.out.join("sweep").join(format!("{name}.csv")), &csv)?;
        print!("{csv}");
        self.write_manifest(&format!("sweep-{name}"), Some(eps))
    }
}

fn minimizer_curve(reports: &[(usize, &MinimizerTrainReport)]) -> String {
    let mut s = String::from("iteration,epoch,mean_cost,mean_baseline\n");
    for (it, r) in reports {
        for (e, (c, b)) in r.epoch_cost.iter().zip(&r.epoch_baseline).enumerate() {
            writeln!(s, "{it},{e},{c},{b}").unwrap();
        }
    }
    s
}

fn write_training_log(dir: &Path, log: &TrainingLog) -> Result<()> {
    let reports: Vec<_> = log.iterations.iter().map(|it| (it.iteration, &it.minimizer)).collect();
    write(&dir.join("lrco_curve.csv"), &minimizer_curve(&reports))?;
    let mut max = String::from("iteration,member,epoch,loss,penalty\n");
    let mut its = String::from("iteration,mean_entropy,validation_utility,diverged\n");
    for it in &log.iterations {
        for (m, r) in it.maximizer.iter().enumerate() {
            for (e, (l, p)) in r.epoch_loss.iter().zip(&r.epoch_penalty).enumerate() {
                writeln!(max, "{},{m},{e},{l},{p}", it.iteration)?;
            }
        }
        let v = it.validation_utility.map_or(String::new(), |v| v.to_string());
        writeln!(its, "{},{},{v},{}", it.iteration, it.mean_entropy, it.minimizer.diverged)?;
    }
    write(&dir.join("lrco_maximizer_curve.csv"), &max)?;
    write(&dir.join("lrco_iterations.csv"), &its)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let run = Run { cfg, out: cli.out };
    match cli.command {
        Command::GenData => run.gen_data(),
        Command::FitPredictors => run.fit_predictors(),
        Command::Train { policy } => {
            let policy = policy.unwrap_or_else(|| run.cfg.train.policy.clone());
            run.train(&policy)
        }
        Command::Eval => run.eval(),
        Command::BenchTime => run.bench_time(),
        Command::Sweep { axis } => run.sweep(axis),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
