//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use upliftforge::cate::{tau_from_outputs, RiskPolicy};
use upliftforge::eval::{
    average_precision, policy_value_curve, report_files, roc_auc, uplift_bins, welch_t, PredictionRow, PredictionTable,
    UpliftOutcome,
};
use upliftforge::model::{init_model, train_epoch, ModelOptimizer, ModelSample, ModelSpec, MultiHeadNet, Normalization, TrainConfig};
use upliftforge::nn::{finite_diff_gradcheck, LossKind};
use upliftforge::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use upliftforge::sim::{calibrate_intercepts, simulate_cohort, SimConfig};
use upliftforge::Arm;

/// Pearson correlation between pooled τ̂ and the true CATE measured on the
/// seed-0 default run; the criterion accepts anything within 0.05 below it.
const CATE_RECOVERY_REFERENCE_POOLED: f64 = 0.558;
const CATE_RECOVERY_REFERENCE: [(Arm, f64); 4] = [(Arm::NE, 0.265), (Arm::LE, 0.504), (Arm::ME, 0.520), (Arm::HE, 0.661)];
const CATE_RECOVERY_MARGIN: f64 = 0.05;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(name: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let within = elapsed <= budget;
    Outcome {
        name,
        passed: ok && within,
        detail: if within { detail } else { format!("{detail}; over budget {budget:?}") },
        elapsed,
    }
}

fn gradient_correctness() -> (bool, String) {
    let cohort = simulate_cohort(&SimConfig::default()).expect("default cohort");
    let rows: Vec<&[f64]> = cohort.records.iter().map(|r| r.features.as_slice()).collect();
    let norm = Normalization::fit(cohort.schema.len(), &rows).expect("normalisation");
    let mut worst = 0.0f64;
    let (mut checked, mut kinks) = (0, 0);
    for seed in 0..20u64 {
        let mut model = init_model(&ModelSpec::default(), &cohort.schema, seed).expect("init");
        model.set_normalization(norm.clone()).expect("stats");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = cohort.records.choose(&mut rng).expect("non-empty");
        let mut target = ModelSample::new(model, record).expect("sample");
        let report = finite_diff_gradcheck(&mut target, 1e-3).expect("gradcheck");
        worst = worst.max(report.max_relative_error);
        checked += report.checked - report.unread;
        kinks += report.skipped_at_kinks;
    }
    (
        worst < 1e-4,
        format!("max relative error {worst:.3e} over 20 seeds at ε=1e-3, {checked} parameters checked, {kinks} skipped at kinks"),
    )
}

fn heads_snapshot(m: &MultiHeadNet) -> BTreeMap<Arm, Vec<Vec<f32>>> {
    m.arms()
        .iter()
        .map(|a| {
            let h = m.head(*a).expect("head");
            (*a, h.layers().iter().flat_map(|l| [l.weights().to_vec(), l.bias().to_vec()]).collect())
        })
        .collect()
}

fn masking() -> (bool, String) {
    let mut sim = SimConfig::default();
    sim.arm_sizes.values_mut().for_each(|n| *n = 60);
    let cohort = simulate_cohort(&sim).expect("cohort");
    let cfg = TrainConfig::default();
    let mut model = init_model(&cfg.model_spec(Arm::ALL.to_vec()), &cohort.schema, 7).expect("init");
    let samples = model.prepare(&cohort.records).expect("prepare");
    let mut optim = ModelOptimizer::new(&model, cfg.adamw());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut dropout = ChaCha8Rng::seed_from_u64(12);
    let mut violations = 0;
    for _ in 0..100 {
        let arm = *Arm::ALL.choose(&mut rng).expect("arm");
        let head = model.head_index(arm).expect("head index");
        let pool: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].head == head).collect();
        let size = rng.random_range(1..=16);
        let batch: Vec<usize> = (0..size).map(|_| *pool.choose(&mut rng).expect("pool")).collect();
        let before = heads_snapshot(&model);
        let steps: Vec<u64> = (0..5).map(|i| optim.head_steps(i)).collect();
        train_epoch(&mut model, &samples, &[batch], &mut optim, &mut dropout).expect("step");
        let after = heads_snapshot(&model);
        for (i, a) in model.arms().iter().enumerate() {
            if *a != arm && (before[a] != after[a] || optim.head_steps(i) != steps[i]) {
                violations += 1;
            }
        }
    }
    (violations == 0, format!("{violations} untouched-head changes across 100 single-arm batches"))
}

mod oracle {
    //! Brute-force reference implementations, deliberately written without
    //! sorting tricks or library distributions.

    use super::*;

    pub fn ap(labels: &[bool], scores: &[f64]) -> f64 {
        let pos = labels.iter().filter(|l| **l).count() as f64;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut total = 0.0;
        for t in thresholds {
            let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = selected.iter().filter(|&&i| labels[i]).count() as f64;
            let recall = tp / pos;
            total += (recall - prev_recall) * tp / selected.len() as f64;
            prev_recall = recall;
        }
        total
    }

    pub fn auc(labels: &[bool], scores: &[f64]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    fn ln_gamma(x: f64) -> f64 {
        // Lanczos approximation, g = 7
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    /// Two-sided Student-t tail by composite Simpson integration of the density.
    pub fn t_two_sided(t: f64, df: f64) -> f64 {
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
        let f = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let a = t.abs();
        let n = 20_000;
        let h = a / n as f64;
        let mut s = f(0.0) + f(a);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        (1.0 - 2.0 * s * h / 3.0).max(0.0)
    }

    pub fn welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0), n)
        };
        let (ma, va, na) = stats(a);
        let (mb, vb, nb) = stats(b);
        let (qa, qb) = (va / na, vb / nb);
        let t = (ma - mb) / (qa + qb).sqrt();
        let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (t, df, t_two_sided(t, df))
    }

    /// Per-bin differences by counting each row's rank directly.
    pub fn bin_differences(rows: &[(f64, u64, bool, f64)], k: usize) -> Vec<Option<f64>> {
        let n = rows.len();
        let mut sums = vec![(0.0, 0usize, 0.0, 0usize); k];
        for r in rows {
            let rank = rows
                .iter()
                .filter(|o| o.0 < r.0 || (o.0 == r.0 && o.1 < r.1))
                .count();
            let b = rank * k / n;
            if r.2 {
                sums[b].0 += r.3;
                sums[b].1 += 1;
            } else {
                sums[b].2 += r.3;
                sums[b].3 += 1;
            }
        }
        sums.iter()
            .map(|&(st, nt, sp, np)| (nt > 0 && np > 0).then(|| st / nt as f64 - sp / np as f64))
            .collect()
    }

    /// Followed / not-followed / random means with recommendations found by
    /// scanning arms in risk order and keeping strictly better values.
    pub fn policy(table: &PredictionTable, lambda: f64) -> (Option<f64>, Option<f64>, f64) {
        let class = |a: Arm| match a {
            Arm::Placebo => 0.0,
            Arm::NE | Arm::LE => 1.0,
            Arm::ME => 2.0,
            Arm::HE => 3.0,
        };
        let count = |v: f64| (v.exp() - 1.0).max(0.0);
        let (mut f, mut nf, mut all) = (vec![], vec![], vec![]);
        for r in table.rows() {
            let base = count(r.yhat[&Arm::Placebo]);
            let mut best = (Arm::Placebo, 0.0);
            for a in [Arm::NE, Arm::LE, Arm::ME, Arm::HE] {
                if let Some(v) = r.yhat.get(&a) {
                    let adj = count(*v) - base + class(a) * lambda;
                    if adj < best.1 - 1e-9 {
                        best = (a, adj);
                    }
                }
            }
            let y = r.y as f64 + class(r.arm) * lambda;
            all.push(y);
            if best.0 == r.arm {
                f.push(y);
            } else {
                nf.push(y);
            }
        }
        let m = |v: &Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        (m(&f), m(&nf), m(&all).expect("non-empty"))
    }
}

fn random_table(rng: &mut ChaCha8Rng) -> PredictionTable {
    let n = rng.random_range(6..=20);
    let arms = vec![Arm::Placebo, Arm::LE, Arm::HE];
    // coarse grids force ties in scores and outcomes
    let rows = (0..n as u64)
        .map(|id| {
            let arm = if id < 2 { Arm::Placebo } else if id < 4 { Arm::LE } else { *arms.choose(rng).expect("arm") };
            let yhat: BTreeMap<Arm, f64> = arms.iter().map(|a| (*a, rng.random_range(0..8) as f64 * 0.25)).collect();
            PredictionRow {
                id: id * 7 + 3,
                arm,
                y: rng.random_range(0..7),
                outer_fold: None,
                spread: arms.iter().map(|a| (*a, 0.0)).collect(),
                yhat,
            }
        })
        .collect();
    PredictionTable::new(arms, LossKind::LogCountMSE, rows).expect("valid table")
}

fn metric_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    let mut welch_cases = 0;
    for case in 0..1000 {
        let table = random_table(&mut rng);
        let labels: Vec<bool> = table.rows().iter().map(|r| r.meda()).collect();
        let scores: Vec<f64> = table.rows().iter().map(|r| -r.factual()).collect();
        if labels.iter().any(|l| *l) {
            let (a, b) = (average_precision(&labels, &scores).expect("ap"), oracle::ap(&labels, &scores));
            if (a - b).abs() > 1e-12 {
                mismatches.push(format!("case {case} AP {a} vs {b}"));
            }
        }
        if labels.iter().any(|l| *l) && labels.iter().any(|l| !*l) {
            let (a, b) = (roc_auc(&labels, &scores).expect("auc"), oracle::auc(&labels, &scores));
            if (a - b).abs() > 1e-12 {
                mismatches.push(format!("case {case} AUC {a} vs {b}"));
            }
        }
        let k = *[3usize, 5, 10].choose(&mut rng).expect("k");
        let arm = *[Arm::LE, Arm::HE].choose(&mut rng).expect("arm");
        let pop: Vec<(f64, u64, bool, f64)> = table
            .rows()
            .iter()
            .filter(|r| r.arm == arm || r.arm == Arm::Placebo)
            .map(|r| {
                let tau = tau_from_outputs(&r.yhat, LossKind::LogCountMSE).expect("tau")[&arm];
                (tau, r.id, r.arm == arm, r.y as f64)
            })
            .collect();
        if !pop.is_empty() {
            let report = uplift_bins(&table, arm, k, UpliftOutcome::Count).expect("uplift");
            let got: Vec<Option<f64>> = report.bins.iter().map(|b| b.difference).collect();
            let want = oracle::bin_differences(&pop, k);
            let same = got.len() == want.len()
                && got.iter().zip(&want).all(|(a, b)| match (a, b) {
                    (Some(x), Some(y)) => (x - y).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                });
            if !same {
                mismatches.push(format!("case {case} uplift {arm} k={k}: {got:?} vs {want:?}"));
            }
        }
        let (ga, gb): (Vec<f64>, Vec<f64>) = {
            let a: Vec<f64> = table.rows().iter().filter(|r| r.arm == Arm::Placebo).map(|r| r.y as f64).collect();
            let b: Vec<f64> = table.rows().iter().filter(|r| r.arm != Arm::Placebo).map(|r| r.y as f64).collect();
            (a, b)
        };
        let varied = |v: &[f64]| v.iter().any(|x| *x != v[0]);
        if ga.len() >= 2 && gb.len() >= 2 && (varied(&ga) || varied(&gb)) {
            welch_cases += 1;
            let got = welch_t(&ga, &gb).expect("welch");
            let (t, df, p) = oracle::welch(&ga, &gb);
            if (got.t - t).abs() > 1e-9 * t.abs().max(1.0) || (got.df - df).abs() > 1e-9 * df || (got.p - p).abs() > 1e-6 {
                mismatches.push(format!("case {case} Welch ({}, {}, {}) vs ({t}, {df}, {p})", got.t, got.df, got.p));
            }
        }
        let lambda = rng.random_range(0..13) as f64 * 0.25;
        let curve = policy_value_curve(&table, &RiskPolicy::new(0.0).expect("policy"), &[lambda]).expect("policy");
        let (f, nf, r) = oracle::policy(&table, lambda);
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        if !close(curve[0].followed, f) || !close(curve[0].not_followed, nf) || (curve[0].random - r).abs() > 1e-12 {
            mismatches.push(format!("case {case} policy λ={lambda}: {:?} vs ({f:?}, {nf:?}, {r})", curve[0]));
        }
    }
    let detail = match mismatches.first() {
        None => format!("1000 tables agree on AP, ROC-AUC, uplift bins, policy value and {welch_cases} Welch tests"),
        Some(m) => format!("{} mismatches, first: {m}", mismatches.len()),
    };
    (mismatches.is_empty(), detail)
}

fn calibration() -> (bool, String) {
    let cfg = SimConfig::default();
    let targets = cfg.meda_targets.clone().expect("default targets");
    let (calibrated, report) = calibrate_intercepts(&cfg).expect("calibration");
    let mut ok = report.probe_size == 50_000;
    let mut parts = Vec::new();
    // an independent 50 000-patient cohort drawn from the calibrated simulator
    let mut fresh = calibrated;
    fresh.meda_targets = None;
    fresh.seed = 99;
    fresh.arm_sizes.values_mut().for_each(|n| *n = 10_000);
    let cohort = simulate_cohort(&fresh).expect("fresh cohort");
    for (arm, target) in &targets {
        let probe = report.arms[arm].probe_fraction;
        let rows: Vec<_> = cohort.records.iter().filter(|r| r.arm == *arm).collect();
        let observed = rows.iter().filter(|r| r.y < 3).count() as f64 / rows.len() as f64;
        ok &= (probe - target).abs() <= 0.02 && (observed - target).abs() <= 0.02;
        parts.push(format!("{arm} {:.1}%/{:.1}% (target {:.1}%)", probe * 100.0, observed * 100.0, target * 100.0));
    }
    (ok, format!("probe/fresh: {}", parts.join(", ")))
}

fn meda_average_precision(out: &PipelineOutput) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (arm, m) in &out.report.arms {
        let (Some(ap), Some(base)) = (m.ap, m.meda_fraction) else {
            ok = false;
            parts.push(format!("{arm} undefined"));
            continue;
        };
        if *arm != Arm::HE {
            ok &= ap >= base + 0.05;
        }
        parts.push(format!("{arm} {ap:.3} vs {base:.3}"));
    }
    (ok, format!("AP vs random baseline: {}", parts.join(", ")))
}

fn log_count_mse(out: &PipelineOutput) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (arm, m) in &out.report.arms {
        let Some(r) = m.regression else {
            ok &= *arm == Arm::HE;
            continue;
        };
        if *arm != Arm::HE {
            ok &= r.mse < r.baseline_mse;
        }
        parts.push(format!("{arm} {:.3} vs {:.3}", r.mse, r.baseline_mse));
    }
    (ok, format!("log-count MSE vs mean baseline: {}", parts.join(", ")))
}

fn uplift_tertiles(out: &PipelineOutput) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for arm in [Arm::LE, Arm::ME, Arm::HE] {
        let r = out
            .report
            .uplift
            .iter()
            .find(|u| u.arm == arm && u.k == 3 && u.outcome == UpliftOutcome::Count)
            .expect("tertile report");
        match (r.bins[0].difference, r.bins[2].difference, r.top_vs_bottom) {
            (Some(top), Some(bottom), Some(t)) => {
                ok &= top < bottom && t.p < 0.01;
                parts.push(format!("{arm} top {top:.2} bottom {bottom:.2} p={:.1e}", t.p));
            }
            _ => {
                ok = false;
                parts.push(format!("{arm} unusable tertiles"));
            }
        }
    }
    (ok, parts.join(", "))
}

fn cate_recovery(out: &PipelineOutput) -> (bool, String) {
    let Some(rec) = &out.report.cate_recovery else {
        return (false, "no oracle correlation".into());
    };
    let Some(pooled) = rec.pooled else {
        return (false, "pooled correlation undefined".into());
    };
    let mut ok = pooled >= CATE_RECOVERY_REFERENCE_POOLED - CATE_RECOVERY_MARGIN;
    let mut parts = vec![format!("pooled r={pooled:.3} (ref {CATE_RECOVERY_REFERENCE_POOLED})")];
    for (arm, reference) in CATE_RECOVERY_REFERENCE {
        let r = rec.per_arm.get(&arm).copied().flatten().unwrap_or(f64::NAN);
        ok &= r >= reference - CATE_RECOVERY_MARGIN;
        parts.push(format!("{arm} {r:.3} (ref {reference})"));
    }
    (ok, parts.join(", "))
}

fn policy_value(out: &PipelineOutput) -> (bool, String) {
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for p in &out.report.policy_curve {
        match (p.followed, p.not_followed) {
            (Some(f), Some(n)) => {
                ok &= f <= n;
                worst = worst.max(f - n);
            }
            _ => ok = false,
        }
    }
    (
        ok,
        format!(
            "{} λ values, max(followed − not followed) = {worst:.3}",
            out.report.policy_curve.len()
        ),
    )
}

fn artifacts(out: &PipelineOutput) -> Vec<(String, String)> {
    let mut files = report_files(&out.report, &out.training.table).expect("report files");
    files.push(("pooled_predictions.csv".into(), out.training.table.to_csv()));
    files
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        timed("gradient correctness", secs(5), gradient_correctness),
        timed("masking", secs(5), masking),
        timed("metric oracles", secs(30), metric_oracles),
        timed("simulator calibration", secs(60), calibration),
    ];

    let start = Instant::now();
    let first = run_pipeline(&PipelineConfig::default()).expect("pipeline run");
    let pipeline_time = start.elapsed();
    let budget = secs(600);
    let mut t1 = timed("MEDA average precision", budget, || meda_average_precision(&first));
    t1.elapsed = pipeline_time;
    if pipeline_time > budget {
        t1.passed = false;
        t1.detail += &format!("; end-to-end {pipeline_time:?} over budget");
    } else {
        t1.detail += &format!("; end-to-end {:.1}s", pipeline_time.as_secs_f64());
    }
    results.push(t1);
    results.push(timed("log-count MSE", budget, || log_count_mse(&first)));
    results.push(timed("uplift tertiles", budget, || uplift_tertiles(&first)));
    results.push(timed("CATE recovery", budget, || cate_recovery(&first)));
    results.push(timed("policy value curve", budget, || policy_value(&first)));
    results.push(timed("determinism", budget, || {
        let second = run_pipeline(&PipelineConfig::default()).expect("second pipeline run");
        let (a, b) = (artifacts(&first), artifacts(&second));
        let differing: Vec<&str> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.as_str())
            .collect();
        (
            a.len() == b.len() && differing.is_empty(),
            format!("{} artifacts compared, differing: {differing:?}", a.len()),
        )
    }));

    let mut failed = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<34} [{:>7.2}s] {}", r.name, r.elapsed.as_secs_f64(), r.detail);
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
