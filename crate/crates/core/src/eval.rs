//! Evaluation harness: runs every policy on a test set and scores the chosen
//! decisions by predicted, true and worst-case utility.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{greedy_decision, oracle, pga_worst_case, random_decision, weak_oracle, PgaConfig, PolicyKind};
use crate::error::{Error, Result};
use crate::lrco::{lco_infer, LrcoModel};
use crate::minimizer::MinimizerPolicy;
use crate::problem::{ContextSample, Decision, DecisionSpace, UncertaintySet};
use crate::vec::{percentile, utility, ProblemInstance, VecCost};

pub const REPORT_SCHEMA: &str = "lrco-eval v1";

/// Training samples built from the predicted context of each instance.
pub fn predicted_contexts(instances: &[ProblemInstance]) -> Result<Vec<ContextSample<f64, VecCost<f64>>>> {
    instances
        .iter()
        .map(|inst| {
            Ok(ContextSample {
                x: inst.predicted()?.to_vec(),
                cost: VecCost::new(inst.shape, inst.eta.clone())?,
            })
        })
        .collect()
}

/// Trained models available to the harness.
#[derive(Clone, Copy, Debug, Default)]
pub struct Models<'a> {
    pub lrco: Option<&'a LrcoModel<f64>>,
    pub lco: Option<&'a MinimizerPolicy<f64>>,
    /// Candidates LCO samples per decision.
    pub lco_candidates: usize,
}

fn instance_rng(seed: u64, policy: PolicyKind, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((policy as u64 + 1) << 48 | id);
    rng
}

/// Decision of `policy` on one instance.
pub fn decide(policy: PolicyKind, inst: &ProblemInstance, models: &Models<'_>, seed: u64) -> Result<Decision> {
    let x = inst.predicted()?;
    let mut rng = instance_rng(seed, policy, inst.id);
    let missing = |what: &str| Error::Config(format!("policy {} needs a trained {what} model", policy.name()));
    Ok(match policy {
        PolicyKind::Random => random_decision(&DecisionSpace::binary(inst.shape.dim()), &mut rng),
        PolicyKind::Greedy => greedy_decision(&inst.shape, x, &inst.eta),
        PolicyKind::WeakOracle => weak_oracle(&inst.shape, x, &inst.eta)?,
        PolicyKind::Oracle => oracle(&inst.shape, &inst.x_true, &inst.eta)?,
        PolicyKind::Lco => {
            let policy = models.lco.ok_or_else(|| missing("LCO"))?;
            let cost = VecCost::new(inst.shape, inst.eta.clone())?;
            lco_infer(policy, x, &cost, models.lco_candidates.max(1), &mut rng)?.decision
        }
        PolicyKind::Lrco => {
            let model = models.lrco.ok_or_else(|| missing("LRCO"))?;
            let cost = VecCost::new(inst.shape, inst.eta.clone())?;
            model.infer(x, &cost, &mut rng)?.decision
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub policy: PolicyKind,
    pub instance: u64,
    pub decision: Decision,
    pub predicted: f64,
    pub true_utility: f64,
    pub worst_case: f64,
    /// Whether `x_true` lies inside the uncertainty ball around `x_pred`.
    pub truth_in_ball: bool,
}

/// Predicted, true and worst-case utility of a fixed decision.
pub fn score(
    policy: PolicyKind,
    inst: &ProblemInstance,
    decision: Decision,
    set: &UncertaintySet<f64>,
    pga: &PgaConfig,
    seed: u64,
) -> Result<Record> {
    let x = inst.predicted()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(inst.id);
    let (worst_case, _) = pga_worst_case(&inst.shape, x, &decision, &inst.eta, set, pga, &mut rng)?;
    let gap: Vec<f64> = x.iter().zip(&inst.x_true).map(|(p, t)| t - p).collect();
    Ok(Record {
        policy,
        instance: inst.id,
        predicted: utility(&inst.shape, x, &decision, &inst.eta),
        true_utility: utility(&inst.shape, &inst.x_true, &decision, &inst.eta),
        worst_case,
        truth_in_ball: set.contains(&gap),
        decision,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub count: usize,
    pub predicted: f64,
    pub true_utility: f64,
    pub worst_case: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub epsilon: f64,
    pub records: Vec<Record>,
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<PolicySummary> {
        let mut acc: BTreeMap<PolicyKind, (usize, f64, f64, f64)> = BTreeMap::new();
        for r in &self.records {
            let e = acc.entry(r.policy).or_default();
            e.0 += 1;
            e.1 += r.predicted;
            e.2 += r.true_utility;
            e.3 += r.worst_case;
        }
        acc.into_iter()
            .map(|(policy, (n, p, t, w))| PolicySummary {
                policy,
                count: n,
                predicted: p / n as f64,
                true_utility: t / n as f64,
                worst_case: w / n as f64,
            })
            .collect()
    }

    pub fn summary(&self, policy: PolicyKind) -> Option<PolicySummary> {
        self.summaries().into_iter().find(|s| s.policy == policy)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("# {REPORT_SCHEMA} table=summary epsilon={}\n", self.epsilon);
        s.push_str("policy,count,predicted_utility,true_utility,worst_case_utility\n");
        for p in self.summaries() {
            writeln!(s, "{},{},{},{},{}", p.policy.name(), p.count, p.predicted, p.true_utility, p.worst_case).unwrap();
        }
        s
    }

    pub fn records_csv(&self) -> String {
        let mut s = format!("# {REPORT_SCHEMA} table=records epsilon={}\n", self.epsilon);
        s.push_str("policy,instance,decision,predicted_utility,true_utility,worst_case_utility,truth_in_ball\n");
        for r in &self.records {
            let bits: String = r.decision.values().iter().map(|v| v.to_string()).collect();
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.policy.name(),
                r.instance,
                bits,
                r.predicted,
                r.true_utility,
                r.worst_case,
                u8::from(r.truth_in_ball)
            )
            .unwrap();
        }
        s
    }

    /// One column per policy and metric, each sorted ascending, for CDF plots.
    pub fn cdf_csv(&self) -> String {
        let summaries = self.summaries();
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for p in &summaries {
            let rows: Vec<&Record> = self.records.iter().filter(|r| r.policy == p.policy).collect();
            for (metric, get) in [
                ("predicted", (|r: &Record| r.predicted) as fn(&Record) -> f64),
                ("true", |r: &Record| r.true_utility),
                ("worst_case", |r: &Record| r.worst_case),
            ] {
                let mut v: Vec<f64> = rows.iter().map(|r| get(r)).collect();
                v.sort_by(f64::total_cmp);
                columns.push((format!("{}_{metric}", p.policy.name()), v));
            }
        }
        let mut s = format!("# {REPORT_SCHEMA} table=cdf epsilon={}\n", self.epsilon);
        s.push_str("rank");
        for (name, _) in &columns {
            write!(s, ",{name}").unwrap();
        }
        s.push('\n');
        let rows = columns.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        for i in 0..rows {
            write!(s, "{i}").unwrap();
            for (_, v) in &columns {
                match v.get(i) {
                    Some(x) => write!(s, ",{x}").unwrap(),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub policies: Vec<PolicyKind>,
    pub pga: PgaConfig,
    pub seed: u64,
}

/// Decides and scores every policy on every instance.
pub fn evaluate(instances: &[ProblemInstance], models: &Models<'_>, set: &UncertaintySet<f64>, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(instances.len() * cfg.policies.len());
    for &policy in &cfg.policies {
        let batch = instances
            .par_iter()
            .map(|inst| {
                let d = decide(policy, inst, models, cfg.seed)?;
                score(policy, inst, d, set, &cfg.pga, cfg.seed)
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(batch);
    }
    Ok(EvalReport {
        epsilon: set.epsilon(),
        records,
    })
}

/// Worst-case utility of LRCO decisions restricted to the first `k` of a
/// fixed candidate list, for each `k`.
pub fn candidate_sweep(
    instances: &[ProblemInstance],
    model: &LrcoModel<f64>,
    ks: &[usize],
    set: &UncertaintySet<f64>,
    cfg: &EvalConfig,
) -> Result<Vec<(usize, f64)>> {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max == 0 {
        return Err(Error::Config("candidate sweep needs a positive count".into()));
    }
    let per_instance = instances
        .par_iter()
        .map(|inst| {
            let x = inst.predicted()?;
            let cost = VecCost::new(inst.shape, inst.eta.clone())?;
            let mut rng = instance_rng(cfg.seed, PolicyKind::Lrco, inst.id);
            let all = model.policy.sample(x, k_max, &mut rng)?;
            ks.iter()
                .map(|&k| {
                    let d = model.select(x, &cost, all[..k].to_vec())?.decision;
                    Ok(score(PolicyKind::Lrco, inst, d, set, &cfg.pga, cfg.seed)?.worst_case)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = instances.len().max(1) as f64;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, per_instance.iter().map(|v| v[j]).sum::<f64>() / n))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingSummary {
    pub policy: PolicyKind,
    /// Wall seconds of each timed pass over the instance set.
    pub runs: Vec<f64>,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub summaries: Vec<TimingSummary>,
}

impl TimingReport {
    pub fn get(&self, policy: PolicyKind) -> Option<&TimingSummary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }

    /// Mean time of `policy` divided by the mean time of Oracle.
    pub fn normalized(&self, policy: PolicyKind) -> Option<f64> {
        Some(self.get(policy)?.mean / self.get(PolicyKind::Oracle)?.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {REPORT_SCHEMA} table=timing\n");
        s.push_str("policy,runs,mean_seconds,q1_seconds,median_seconds,q3_seconds,normalized_mean\n");
        for t in &self.summaries {
            let norm = self.normalized(t.policy).map_or(String::new(), |v| v.to_string());
            writeln!(s, "{},{},{},{},{},{},{norm}", t.policy.name(), t.runs.len(), t.mean, t.q1, t.median, t.q3).unwrap();
        }
        s
    }
}

/// Times `runs` sequential decision passes per policy after one untimed
/// warm-up pass.
pub fn bench_time(instances: &[ProblemInstance], models: &Models<'_>, policies: &[PolicyKind], runs: usize, seed: u64) -> Result<TimingReport> {
    if runs == 0 {
        return Err(Error::Config("timing needs at least one run".into()));
    }
    let mut summaries = Vec::new();
    for &policy in policies {
        let pass = || -> Result<f64> {
            let start = Instant::now();
            for inst in instances {
                std::hint::black_box(decide(policy, inst, models, seed)?);
            }
            Ok(start.elapsed().as_secs_f64())
        };
        pass()?;
        let times = (0..runs).map(|_| pass()).collect::<Result<Vec<_>>>()?;
        summaries.push(TimingSummary {
            policy,
            mean: times.iter().sum::<f64>() / runs as f64,
            q1: percentile(&times, 0.25)?,
            median: percentile(&times, 0.5)?,
            q3: percentile(&times, 0.75)?,
            runs: times,
        });
    }
    Ok(TimingReport { summaries })
}
