mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;

use common::{record, won_rally};
use ttpredict::evaluation::{compute_metrics, confusion_matrix, roc_auc, train_val_test_split};
use ttpredict::features::{
    balance, build_samples, compute_raw_features, rank_diff, FeatureConfig, FeatureMode, FeatureSet,
};
use ttpredict::harness::synth::{bayes_accuracy, synth_generate, SynthConfig};
use ttpredict::harness::{
    ablation_on, evaluate_matches, prematch_on, run_experiment, DataSource, EvalReport,
    ExperimentConfig,
};
use ttpredict::match_data::{MatchRecord, Side, Stroke};
use ttpredict::models::forest::{self, ForestParams};
use ttpredict::models::logreg::{self, Penalty};
use ttpredict::models::mlp::{self, MlpModel, MlpParams};
use ttpredict::models::svm::{self, KernelKind, SvmParams};
use ttpredict::models::Predictor;
use ttpredict::util::{rng_from_seed, Rng};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn sign(rng: &mut Rng) -> i8 {
    if rng.random_bool(0.5) {
        1
    } else {
        -1
    }
}

fn pairwise_auc(y: &[i8], s: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == -1 {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn metric_oracles() -> Outcome {
    let mut rng = rng_from_seed(1);
    let mut worst_auc: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=50);
        let mut y: Vec<i8> = (0..n).map(|_| sign(&mut rng)).collect();
        y[0] = 1;
        y[1] = -1;
        let p: Vec<i8> = (0..n).map(|_| sign(&mut rng)).collect();
        // Coarse scores so ties occur.
        let s: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..10u8)) / 10.0)
            .collect();

        let count = |t: i8, q: i8| {
            y.iter()
                .zip(&p)
                .filter(|&(&a, &b)| a == t && b == q)
                .count()
        };
        let (tp, tn, fp, fn_) = (count(1, 1), count(-1, -1), count(-1, 1), count(1, -1));
        let cm = confusion_matrix(&y, &p).map_err(|e| e.to_string())?;
        ensure!(
            (cm.tp, cm.tn, cm.fp, cm.fn_) == (tp, tn, fp, fn_),
            "case {case}: confusion {cm:?}"
        );

        let m = compute_metrics(&cm).map_err(|e| e.to_string())?;
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ensure!(m.accuracy == div(tp + tn, n), "case {case}: accuracy");
        ensure!(m.precision == precision, "case {case}: precision");
        ensure!(m.recall == recall, "case {case}: recall");
        ensure!(m.f1 == f1, "case {case}: f1");

        let auc = roc_auc(&y, &s).map_err(|e| e.to_string())?.auc;
        let gap = (auc - pairwise_auc(&y, &s)).abs();
        worst_auc = worst_auc.max(gap);
        ensure!(gap < 1e-12, "case {case}: auc gap {gap:e}");
    }
    Ok(format!("200 instances, max auc gap {worst_auc:.1e}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_problem(rng: &mut Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<i8>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut y: Vec<i8> = (0..n).map(|_| sign(rng)).collect();
    y[0] = 1;
    y[1] = -1;
    (x, y)
}

fn gradient_checks() -> Outcome {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let (n, d) = (rng.random_range(5..30), rng.random_range(1..6));
        let (x, y) = random_problem(&mut rng, n, d);
        let penalty = if seed % 2 == 0 {
            Penalty::L2
        } else {
            Penalty::L1
        };
        let c = rng.random_range(0.1..10.0);
        // Away from zero so the L1 term is differentiable.
        let theta: Vec<f64> = (0..=d)
            .map(|_| rng.random_range(0.1..1.5) * f64::from(sign(&mut rng)))
            .collect();
        let (_, grad) = logreg::loss_and_gradient(&x, &y, &theta, penalty, c);
        for j in 0..theta.len() {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (logreg::loss_and_gradient(&x, &y, &up, penalty, c).0
                - logreg::loss_and_gradient(&x, &y, &down, penalty, c).0)
                / (2.0 * h);
            let e = rel_err(grad[j], fd);
            worst = worst.max(e);
            ensure!(
                e < 1e-4,
                "logreg seed {seed} coordinate {j}: {} vs {fd}",
                grad[j]
            );
        }

        let hidden: Vec<usize> = (0..rng.random_range(1..=2))
            .map(|_| rng.random_range(2..6))
            .collect();
        let p = MlpParams {
            hidden_layer_sizes: hidden,
            ..Default::default()
        };
        let mut model = MlpModel::init(d, &p, seed);
        for l in &mut model.layers {
            l.biases
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let (_, grads) = model.loss_and_gradient(&x, &y);
        let analytic = mlp::flatten(&grads);
        let theta = model.flat_params();
        for j in 0..theta.len() {
            let mut probe = model.clone();
            let mut t = theta.clone();
            t[j] += h;
            probe.set_flat_params(&t);
            let up = probe.loss(&x, &y);
            t[j] -= 2.0 * h;
            probe.set_flat_params(&t);
            let down = probe.loss(&x, &y);
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(analytic[j], fd);
            worst = worst.max(e);
            ensure!(
                e < 1e-4,
                "mlp seed {seed} parameter {j}: {} vs {fd}",
                analytic[j]
            );
        }
    }
    Ok(format!(
        "20 logreg + 20 mlp instances, max relative error {worst:.1e}"
    ))
}

fn svm_optimality() -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_eq: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(2000 + seed);
        let (n, d) = (rng.random_range(4..=40), rng.random_range(1..5));
        let (x, y) = random_problem(&mut rng, n, d);
        let kernel = match seed % 3 {
            0 => KernelKind::Linear,
            1 => KernelKind::Rbf,
            _ => KernelKind::Polynomial,
        };
        let p = SvmParams {
            kernel,
            c: rng.random_range(0.1..10.0),
            ..Default::default()
        };
        let (_, sol) = svm::fit_detailed(&x, &y, &p, seed).map_err(|e| e.to_string())?;
        let a = &sol.alphas;
        ensure!(
            a.iter().all(|&v| (0.0..=p.c).contains(&v)),
            "seed {seed}: box constraint"
        );
        let eq = a
            .iter()
            .zip(&y)
            .map(|(v, &t)| v * f64::from(t))
            .sum::<f64>()
            .abs();
        worst_eq = worst_eq.max(eq);
        ensure!(eq < 1e-8, "seed {seed}: sum of alpha*y = {eq:e}");

        // Per-sample KKT conditions on the margins y_i f(x_i).
        for i in 0..n {
            let f: f64 = (0..n)
                .map(|j| a[j] * f64::from(y[j]) * sol.kernel.eval(&x[j], &x[i]))
                .sum::<f64>()
                + sol.bias;
            let margin = f64::from(y[i]) * f;
            let violation = if a[i] <= 1e-12 * p.c {
                (1.0 - margin).max(0.0)
            } else if a[i] >= p.c * (1.0 - 1e-12) {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst_kkt = worst_kkt.max(violation);
        }
        ensure!(worst_kkt < 1e-3, "seed {seed}: kkt violation {worst_kkt:e}");
    }

    let x = vec![
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
    ];
    let y = vec![-1, -1, 1, 1];
    let p = SvmParams {
        kernel: KernelKind::Rbf,
        gamma: Some(1.0),
        c: 100.0,
        ..Default::default()
    };
    let m = svm::fit(&x, &y, &p, 0).map_err(|e| e.to_string())?;
    for (xi, yi) in x.iter().zip(&y) {
        ensure!(
            m.predict_label(xi).map_err(|e| e.to_string())? == *yi,
            "xor point {xi:?} misclassified"
        );
    }
    Ok(format!(
        "max kkt violation {worst_kkt:.1e}, max |sum alpha*y| {worst_eq:.1e}, xor 4/4"
    ))
}

fn forest_properties() -> Outcome {
    let d = 5;
    let mut wins = 0;
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(3000 + seed);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<i8> = x.iter().map(|r| if r[0] > 0.0 { 1 } else { -1 }).collect();
        let m = forest::fit(&x, &y, &ForestParams::default(), seed).map_err(|e| e.to_string())?;
        let imp = m.feature_importances();
        ensure!(
            imp.iter().all(|&v| v >= 0.0),
            "seed {seed}: negative importance"
        );
        let total: f64 = imp.iter().sum();
        ensure!(
            (total - 1.0).abs() < 1e-9,
            "seed {seed}: importances sum to {total}"
        );
        let top = (0..d)
            .max_by(|&a, &b| imp[a].total_cmp(&imp[b]))
            .unwrap_or(0);
        if top == 0 {
            wins += 1;
        }
    }
    ensure!(wins == 10, "feature 0 ranked first in {wins}/10 seeds");
    Ok("feature 0 ranked first in 10/10 seeds".into())
}

fn protocol_fidelity() -> Outcome {
    let cfg = SynthConfig {
        n_matches: 100,
        ..Default::default()
    };
    let matches = synth_generate(&cfg).map_err(|e| e.to_string())?;
    let set = build_samples(
        &matches,
        FeatureMode::PerMatch,
        FeatureSet::Full,
        &FeatureConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let samples = &set.samples;
    ensure!(
        samples.len() == 200,
        "expected 200 samples, got {}",
        samples.len()
    );

    let seed = 17;
    let plans = train_val_test_split(samples, 5, seed).map_err(|e| e.to_string())?;
    ensure!(plans.len() == 5, "expected 5 iterations");
    let ids = |idx: &[usize]| -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for &i in idx {
            *m.entry(samples[i].match_id.clone()).or_insert(0) += 1;
        }
        m
    };
    let test = ids(&plans[0].test_idx);
    let mut val_union = BTreeSet::new();
    for (it, p) in plans.iter().enumerate() {
        let (tr, va, te) = (ids(&p.train_idx), ids(&p.val_idx), ids(&p.test_idx));
        ensure!(
            (tr.len(), va.len(), te.len()) == (72, 18, 10),
            "iteration {it}: {}:{}:{}",
            tr.len(),
            va.len(),
            te.len()
        );
        ensure!(
            tr.values()
                .chain(va.values())
                .chain(te.values())
                .all(|&c| c == 2),
            "iteration {it}: a match is split across partitions"
        );
        ensure!(te == test, "iteration {it}: test set moved");
        ensure!(
            tr.keys()
                .all(|k| !va.contains_key(k) && !te.contains_key(k))
                && va.keys().all(|k| !te.contains_key(k)),
            "iteration {it}: partitions overlap"
        );
        for k in va.keys() {
            ensure!(
                val_union.insert(k.clone()),
                "iteration {it}: {k} validated twice"
            );
        }
    }
    ensure!(
        val_union.len() == 90,
        "validation folds cover {} of 90 pool matches",
        val_union.len()
    );

    let again = train_val_test_split(samples, 5, seed).map_err(|e| e.to_string())?;
    let bytes = |p: &[ttpredict::evaluation::SplitPlan]| serde_json::to_vec(p).unwrap_or_default();
    ensure!(bytes(&plans) == bytes(&again), "split rerun differs");

    let exp = ExperimentConfig {
        input: DataSource::Synth(cfg),
        seed,
        ..Default::default()
    };
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    for d in &dirs {
        run_experiment(&exp, d.path()).map_err(|e| e.to_string())?;
    }
    for name in ["results.csv", "confusion.csv", "roc.csv", "importances.csv"] {
        let read = |i: usize| std::fs::read(dirs[i].path().join(name)).map_err(|e| e.to_string());
        ensure!(read(0)? == read(1)?, "{name} differs between reruns");
    }
    Ok("72:18:10 in 5/5 iterations, folds partition the pool, reruns byte-identical".into())
}

struct Anchor {
    matches: Vec<MatchRecord>,
    bayes: f64,
    bayes_se: f64,
    prematch: EvalReport,
}

fn test_se(acc: f64, n: usize) -> f64 {
    (acc * (1.0 - acc) / n as f64).sqrt()
}

fn build_anchor() -> Result<Anchor, String> {
    let synth = SynthConfig::default();
    let b = bayes_accuracy(&synth, 10_000).map_err(|e| e.to_string())?;
    let matches = synth_generate(&synth).map_err(|e| e.to_string())?;
    let prematch =
        prematch_on(&ExperimentConfig::default(), &matches).map_err(|e| e.to_string())?;
    Ok(Anchor {
        matches,
        bayes: b.accuracy,
        bayes_se: b.std_error,
        prematch,
    })
}

fn oracle_anchor(a: &Anchor) -> Outcome {
    ensure!(
        (a.bayes - 0.75).abs() <= 0.01,
        "bayes accuracy {:.4} outside 0.75 ± 0.01",
        a.bayes
    );
    ensure!(a.matches.len() == 400, "expected 400 matches");
    let n = a.prematch.test_matches;
    let mut parts = vec![format!("bayes {:.4} ± {:.4}", a.bayes, a.bayes_se)];
    let mut failures = Vec::new();
    for r in &a.prematch.rows {
        let acc = r.test.accuracy;
        let upper = a.bayes + 2.0 * (test_se(acc, n).powi(2) + a.bayes_se.powi(2)).sqrt();
        parts.push(format!("{} {:.3} in [0.60, {:.3}]", r.model, acc, upper));
        if !(0.60..=upper).contains(&acc) {
            failures.push(r.model.clone());
        }
    }
    let detail = parts.join(", ");
    ensure!(
        failures.is_empty(),
        "{detail}; out of band: {}",
        failures.join(" ")
    );
    Ok(detail)
}

fn mean_val_accuracy(r: &EvalReport) -> f64 {
    r.rows.iter().map(|m| m.cv.mean.accuracy).sum::<f64>() / r.rows.len() as f64
}

fn ablation_direction() -> Outcome {
    let mut wins = 0;
    let mut live_wins = 0;
    let mut parts = Vec::new();
    for seed in 0..10u64 {
        // Players differ in skill only, so outside the target match their
        // rank is the carrier of the signal.
        let synth = SynthConfig {
            serve_adv_spread: 0.0,
            stroke_bias_spread: 0.0,
            rally_len_bias_spread: 0.0,
            seed,
            ..Default::default()
        };
        let matches = synth_generate(&synth).map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig {
            input: DataSource::Synth(synth),
            seed,
            feature_mode: FeatureMode::AggregateExcludingTarget,
            ..Default::default()
        };
        let rep = ablation_on(&cfg, &matches).map_err(|e| e.to_string())?;
        let (full, without) = (
            mean_val_accuracy(&rep.full),
            mean_val_accuracy(&rep.without_derived),
        );
        if full >= without {
            wins += 1;
        }
        parts.push(format!("{full:.3}/{without:.3}"));

        let live = ablation_on(
            &ExperimentConfig {
                feature_mode: FeatureMode::PerMatch,
                ..cfg
            },
            &matches,
        )
        .map_err(|e| e.to_string())?;
        if mean_val_accuracy(&live.full) >= mean_val_accuracy(&live.without_derived) {
            live_wins += 1;
        }
    }
    let detail = format!(
        "full >= without in {wins}/10 seeds ({}); per-match mode {live_wins}/10",
        parts.join(" ")
    );
    ensure!(wins >= 8, "{detail}");
    Ok(detail)
}

fn prematch_robustness(a: &Anchor) -> Outcome {
    // Drops match exactly the matches with a player seen nowhere else.
    let mut augmented = a.matches.clone();
    let mut extra = a.matches[0].clone();
    extra.match_id = "newcomer".into();
    extra.player_b_id = "fresh-player".into();
    augmented.push(extra);
    let set = build_samples(
        &augmented,
        FeatureMode::AggregateExcludingTarget,
        FeatureSet::Full,
        &FeatureConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut appearances: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &augmented {
        *appearances.entry(&m.player_a_id).or_default() += 1;
        *appearances.entry(&m.player_b_id).or_default() += 1;
    }
    let expected: BTreeSet<&str> = augmented
        .iter()
        .filter(|m| {
            appearances[m.player_a_id.as_str()] < 2 || appearances[m.player_b_id.as_str()] < 2
        })
        .map(|m| m.match_id.as_str())
        .collect();
    let dropped: BTreeSet<&str> = set.dropped.iter().map(|d| d.0.as_str()).collect();
    ensure!(
        dropped == expected,
        "dropped {dropped:?}, expected {expected:?}"
    );

    let live =
        evaluate_matches(&ExperimentConfig::default(), &a.matches).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for (l, p) in live.rows.iter().zip(&a.prematch.rows) {
        let drop = l.test.accuracy - p.test.accuracy;
        parts.push(format!(
            "{} {:.3}->{:.3}",
            l.model, l.test.accuracy, p.test.accuracy
        ));
        if drop >= 0.15 {
            failures.push(l.model.clone());
        }
    }
    let detail = format!("{} dropped; {}", dropped.len(), parts.join(", "));
    ensure!(
        failures.is_empty(),
        "{detail}; degraded by >= 0.15: {}",
        failures.join(" ")
    );
    Ok(detail)
}

fn feature_fixtures() -> Outcome {
    ensure!(
        rank_diff(2, 7) == -5.0,
        "rank_diff(2,7) = {}",
        rank_diff(2, 7)
    );
    ensure!(
        rank_diff(150, 155) == 0.0,
        "rank_diff(150,155) = {}",
        rank_diff(150, 155)
    );
    ensure!(
        balance(0.1, -0.2, 0.3) == 0.2,
        "balance = {}",
        balance(0.1, -0.2, 0.3)
    );

    // 47 long and 21 short wins for A over four games, 40 wins for B.
    let mut rallies = Vec::new();
    let mut long_left = 47;
    for set in 1..=4u32 {
        for i in 0..17 {
            let long = long_left > 0 && (i < 12 || set == 4);
            if long {
                long_left -= 1;
            }
            let server = if i % 2 == 0 { Side::A } else { Side::B };
            rallies.push(won_rally(
                set,
                server,
                Side::A,
                long,
                Some(Stroke::Forehand),
            ));
        }
        for i in 0..10 {
            let server = if i % 2 == 0 { Side::B } else { Side::A };
            rallies.push(won_rally(
                set,
                server,
                Side::B,
                i % 2 == 0,
                Some(Stroke::Backhand),
            ));
        }
    }
    let f = compute_raw_features(&record("fig", rallies, Side::A), Side::A)
        .map_err(|e| e.to_string())?;
    ensure!(
        f.lrp == 47.0 / 68.0 && f.srp == 21.0 / 68.0,
        "lrp {} srp {}",
        f.lrp,
        f.srp
    );
    Ok("rank_diff, balance and 47/68, 21/68 exact".into())
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    report_with_setup(id, name, budget, Duration::ZERO, f)
}

fn report_with_setup(
    id: usize,
    name: &str,
    budget: Duration,
    setup: Duration,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed() + setup;
    let (ok, detail) = match outcome {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {}s budget", budget.as_secs())),
        Err(d) => (false, d),
    };
    println!(
        "[{}] {id}. {name}: {detail} ({:.2}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "metric oracles", secs(5), metric_oracles);
    ok &= report(2, "gradient checks", secs(10), gradient_checks);
    ok &= report(3, "svm optimality", secs(30), svm_optimality);
    ok &= report(4, "forest properties", secs(30), forest_properties);
    ok &= report(5, "protocol fidelity", secs(300), protocol_fidelity);

    let start = Instant::now();
    let anchor = build_anchor();
    let shared = start.elapsed();
    match &anchor {
        Ok(a) => {
            ok &= report_with_setup(6, "oracle anchor", secs(300), shared, || oracle_anchor(a));
        }
        Err(e) => {
            println!("[FAIL] 6. oracle anchor: {e}");
            ok = false;
        }
    }
    ok &= report(7, "ablation direction", secs(300), ablation_direction);
    match &anchor {
        Ok(a) => {
            ok &= report_with_setup(8, "prematch robustness", secs(300), shared, || {
                prematch_robustness(a)
            });
        }
        Err(e) => {
            println!("[FAIL] 8. prematch robustness: {e}");
            ok = false;
        }
    }
    ok &= report(9, "feature fixtures", secs(1), feature_fixtures);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
