//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so the report is always printed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use rankcal::calibrators::{check_monotone, gamma_shift, ParametricFamily, ParametricParams, ScoreRange};
use rankcal::dataset::{split_train_validation, InteractionDataset, SplitConfig};
use rankcal::fitting::{
    empirical_risk, fit, uerm_bias_closed_form, CalibrationData, FitOptions, LossKind, LossSpec,
};
use rankcal::metrics::{ece, group_by_user, mce, ndcg_recall, nll, reliability};
use rankcal::pipeline::{run_pipeline, DataSource, PipelineConfig, ScoreSource};
use rankcal::propensity::{clip, estimate_popularity, PropensityTable};
use rankcal::ranker::{score_all, train_bpr, TrainConfig};
use rankcal::synthetic::{exact_expected_risk, generate_world, sample_world, SyntheticConfig, SyntheticWorld};

use common::{brute_bins, brute_ece, brute_mce, brute_nll, grid, oracle_risk, strictly_increasing, two_gaussians};

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "UERM expectation with true propensities equals ideal risk", c1_unbiasedness),
        (2, "UERM bias under estimated propensities matches closed form", c2_bias_identity),
        (3, "sampled UERM risk within 3 SE of its exact expectation", c3_sampling_consistency),
        (4, "fitted parametric calibrators are strictly increasing", c4_monotonicity),
        (5, "Gaussian calibration recovers the quadratic coefficient", c5_family_recovery),
        (6, "noise-free world: Platt recovers the identity posterior", c6_noise_free),
        (7, "UERM fits beat naive fits on biased data", c7_debiasing),
        (8, "metrics match brute-force reimplementation", c8_metric_bruteforce),
        (9, "calibration leaves NDCG/Recall unchanged", c9_ranking_invariance),
        (10, "Platt matches the exponential-exponential posterior", c10_exponential_reduction),
        (11, "pipeline output is byte-deterministic", c11_pipeline_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn random_world(rng: &mut ChaCha8Rng) -> SyntheticWorld {
    let cfg = SyntheticConfig {
        num_users: rng.random_range(5..30),
        num_items: rng.random_range(5..25),
        mean_rho: rng.random_range(0.05..0.5),
        score_noise_sd: rng.random_range(0.0..2.0),
        popularity_skew: rng.random_range(0.0..1.5),
        omega_floor: rng.random_range(0.01..0.3),
        test_items_per_user: 0,
        ..SyntheticConfig::default()
    };
    generate_world(&cfg, rng.next_u64()).unwrap()
}

/// Random parameters satisfying the family's constraints on the world's score range.
fn random_feasible(rng: &mut ChaCha8Rng, scores: &[f64]) -> ParametricParams {
    let range = ScoreRange::of(scores).unwrap();
    let family = [
        ParametricFamily::Platt,
        ParametricFamily::Gaussian,
        ParametricFamily::Gamma,
        ParametricFamily::Beta,
    ][rng.random_range(0..4)];
    loop {
        let (a, b, c) = (rng.random_range(-0.5..0.5), rng.random_range(-1.0..3.0), rng.random_range(-3.0..3.0));
        let p = match family {
            ParametricFamily::Platt => ParametricParams::platt(b, c),
            ParametricFamily::Gaussian => ParametricParams::gaussian(a * 0.1, b, c),
            ParametricFamily::Gamma => {
                let (shift, delta) = gamma_shift(range);
                ParametricParams::gamma(a, b, c, shift, delta)
            }
            ParametricFamily::Beta => ParametricParams::beta(a.abs() * 4.0, b.abs(), c),
        };
        if check_monotone(&p, range.min, range.max) {
            return p;
        }
    }
}

fn c1_unbiasedness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let world = random_world(&mut rng);
        let params = random_feasible(&mut rng, &world.scores);
        let uerm = exact_expected_risk(&params, &world, Some(&world.omega), LossKind::Uerm).unwrap();
        let ideal = oracle_risk(&params, &world.scores, &world.rho);
        worst = worst.max((uerm - ideal).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!("max |E[uerm] - ideal| = {worst:.2e} (< 1e-10) over 100 instances in {:.2}s (< 10s)", elapsed.as_secs_f64()),
    )
}

fn c2_bias_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut largest_bias: f64 = 0.0;
    for _ in 0..100 {
        let world = random_world(&mut rng);
        let params = random_feasible(&mut rng, &world.scores);
        let omega_hat: Vec<f64> = world
            .omega
            .iter()
            .map(|w| (w * rng.random_range(0.5..1.5)).clamp(0.01, 1.0))
            .collect();
        let uerm = exact_expected_risk(&params, &world, Some(&omega_hat), LossKind::Uerm).unwrap();
        let ideal = oracle_risk(&params, &world.scores, &world.rho);
        let ni = world.num_items as usize;
        let hat_pairs: Vec<f64> = (0..world.num_pairs()).map(|k| omega_hat[k % ni]).collect();
        let closed =
            uerm_bias_closed_form(&params, &world.scores, &world.rho, &world.omega_per_pair(), &hat_pairs).unwrap();
        worst = worst.max(((uerm - ideal) - closed).abs());
        largest_bias = largest_bias.max(closed.abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "max |(E[uerm] - ideal) - closed form| = {worst:.2e} (< 1e-10), bias magnitudes up to {largest_bias:.3}, {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn c3_sampling_consistency() -> Outcome {
    let cfg = SyntheticConfig {
        num_users: 500,
        num_items: 200,
        test_items_per_user: 0,
        ..SyntheticConfig::default()
    };
    let world = generate_world(&cfg, 303).unwrap();
    let n = world.num_pairs();
    let params = ParametricParams::gaussian(0.01, 0.9, -0.5);
    let range = ScoreRange::of(&world.scores).unwrap();
    assert!(check_monotone(&params, range.min, range.max));

    // Estimated propensities from one independent sample's click popularity.
    let pilot = sample_world(&world, 0).unwrap();
    let omega_hat = clip(&estimate_popularity(&pilot.train, 0.5).unwrap(), 0.1).unwrap();
    let hat = omega_hat.values().to_vec();
    let exact = exact_expected_risk(&params, &world, Some(&hat), LossKind::Uerm).unwrap();

    // Per-pair loss is softplus(z) - (Y / w_hat) z, so Var = w rho (1 - w rho) z^2 / w_hat^2.
    let bound = ((1.0 - 1e-7) / 1e-7f64).ln();
    let ni = world.num_items as usize;
    let mut var = 0.0;
    for k in 0..n {
        let z = params.logit(world.scores[k]).clamp(-bound, bound);
        let q = world.omega[k % ni] * world.rho[k];
        var += q * (1.0 - q) * z * z / (hat[k % ni] * hat[k % ni]);
    }
    let se = var.sqrt() / n as f64;

    let items: Vec<u32> = (0..n).map(|k| world.pair(k).1).collect();
    let spec = LossSpec::uerm(omega_hat);
    let mut within = 0;
    for seed in 0..100u64 {
        let sample = sample_world(&world, 1000 + seed).unwrap();
        let data = CalibrationData::new(world.scores.clone(), sample.clicks, items.clone()).unwrap();
        let sampled = empirical_risk(&params, &data, &spec).unwrap();
        if (sampled - exact).abs() < 3.0 * se {
            within += 1;
        }
    }
    outcome(
        within >= 95,
        format!("{within}/100 seeds within 3 SE (SE = {se:.2e}, n = {n}); need >= 95"),
    )
}

fn c4_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let families = [
        ParametricFamily::Platt,
        ParametricFamily::Gaussian,
        ParametricFamily::Gamma,
        ParametricFamily::Beta,
    ];
    let (mut increasing, mut agree, mut active) = (0, 0, 0);
    for k in 0..50 {
        let family = families[k % 4];
        let (scores, labels, items, spec) = if k % 3 == 0 {
            // Unequal variances: the unconstrained optimum is not monotone on the data range.
            let (s, y) = two_gaussians(&mut rng, 5000, 0.3, (0.0, 2.0), (2.0, 1.0), None);
            let n = s.len();
            (s, y, vec![0u32; n], LossSpec::naive())
        } else {
            let cfg = SyntheticConfig {
                num_users: 60,
                num_items: 40,
                score_noise_sd: rng.random_range(0.2..2.0),
                popularity_skew: rng.random_range(0.0..1.0),
                test_items_per_user: 0,
                ..SyntheticConfig::default()
            };
            let world = generate_world(&cfg, rng.next_u64()).unwrap();
            let sample = sample_world(&world, rng.next_u64()).unwrap();
            let items: Vec<u32> = (0..world.num_pairs()).map(|j| world.pair(j).1).collect();
            let spec = match rng.random_range(0..3) {
                0 => LossSpec::naive(),
                1 => LossSpec::uerm(PropensityTable::from_values(world.omega.clone()).unwrap()),
                _ => LossSpec::ideal(world.rho.clone()),
            };
            (world.scores.clone(), sample.clicks, items, spec)
        };
        let data = CalibrationData::new(scores, labels, items).unwrap();
        let result = fit(family, &data, &spec, &FitOptions::default()).unwrap();
        let range = ScoreRange::of(&data.scores).unwrap();
        let probs: Vec<f64> = grid(range.min, range.max, 10_000)
            .iter()
            .map(|&s| result.params.transform(s))
            .collect();
        let scan = strictly_increasing(&probs);
        let check = check_monotone(&result.params, range.min, range.max);
        increasing += usize::from(scan);
        agree += usize::from(scan == check);
        active += usize::from(!result.active_constraints.is_empty());
    }
    outcome(
        increasing == 50 && agree == 50,
        format!("{increasing}/50 dense scans strictly increasing, check_monotone agrees in {agree}/50 ({active} fits with an active constraint)"),
    )
}

fn c5_family_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = 100_000;
    let fit_a = |s: Vec<f64>, y: Vec<bool>| {
        let data = CalibrationData::new(s, y, vec![0; n]).unwrap();
        fit(ParametricFamily::Gaussian, &data, &LossSpec::naive(), &FitOptions::default())
            .unwrap()
            .params
            .a
    };
    let (s, y) = two_gaussians(&mut rng, n, 0.3, (0.0, 1.0), (2.0, 1.0), None);
    let a_equal = fit_a(s, y);

    // sd0 = 2 sd1. The true posterior logit is a quadratic with its vertex at
    // s = 16/3; sampling inside [-6, 5] keeps the posterior (truncation cancels
    // in the likelihood ratio) while making it monotone on the data range.
    let (sd0, sd1) = (2.0, 1.0);
    let analytic = 1.0 / (2.0 * sd0 * sd0) - 1.0 / (2.0 * sd1 * sd1);
    let (s, y) = two_gaussians(&mut rng, n, 0.3, (0.0, sd0), (4.0, sd1), Some((-6.0, 5.0)));
    let a_unequal = fit_a(s, y);
    let rel = ((a_unequal - analytic) / analytic).abs();
    let elapsed = start.elapsed();
    outcome(
        a_equal.abs() < 0.05 && rel < 0.2 && elapsed < Duration::from_secs(60),
        format!(
            "equal variances |a| = {:.4} (< 0.05); unequal a = {a_unequal:.4} vs analytic {analytic:.4}, rel err {:.1}% (< 20%); {:.1}s (< 60s)",
            a_equal.abs(),
            rel * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_noise_free() -> Outcome {
    let cfg = SyntheticConfig {
        // 500 x 210 pairs, 10 per user held out: exactly 1e5 fitting pairs.
        num_users: 500,
        num_items: 210,
        score_noise_sd: 0.0,
        popularity_skew: 0.0,
        test_items_per_user: 10,
        ..SyntheticConfig::default()
    };
    let world = generate_world(&cfg, 606).unwrap();
    let sample = sample_world(&world, 607).unwrap();
    let scores_of = |ds: &InteractionDataset| -> Vec<f64> {
        ds.records().iter().map(|r| world.scores[world.index(r.user, r.item)]).collect()
    };
    let train = &sample.train;
    let data = CalibrationData::new(
        scores_of(train),
        train.records().iter().map(|r| r.label).collect(),
        train.records().iter().map(|r| r.item).collect(),
    )
    .unwrap();
    let result = fit(ParametricFamily::Platt, &data, &LossSpec::naive(), &FitOptions::default()).unwrap();
    let p = result.params;
    let test_scores = scores_of(&sample.test);
    let probs: Vec<f64> = test_scores.iter().map(|&s| p.transform(s)).collect();
    let rho: Vec<f64> = sample.test.records().iter().map(|r| world.rho[world.index(r.user, r.item)]).collect();
    let test_ece = ece(&probs, &rho, 15).unwrap();
    outcome(
        (p.b - 1.0).abs() < 0.05 && p.c.abs() < 0.05 && test_ece < 0.01,
        format!(
            "b = {:.4}, c = {:.4} (within 0.05 of 1, 0) on n = {}; test ECE vs rho = {test_ece:.4} (< 0.01)",
            p.b,
            p.c,
            data.len()
        ),
    )
}

fn c7_debiasing() -> Outcome {
    let families = [ParametricFamily::Gaussian, ParametricFamily::Gamma];
    let mut wins = [0usize; 2];
    let mut reductions: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for seed in 0..10u64 {
        let cfg = SyntheticConfig {
            num_users: 2000,
            num_items: 300,
            ..SyntheticConfig::default()
        };
        let world = generate_world(&cfg, 700 + seed).unwrap();
        let sample = sample_world(&world, 800 + seed).unwrap();
        let split = SplitConfig { validation_fraction: 0.1, seed };
        let (train, validation) = split_train_validation(&sample.train, &split).unwrap();
        let omega_hat = clip(&estimate_popularity(&train, 0.5).unwrap(), 0.1).unwrap();
        let score = |ds: &InteractionDataset| -> Vec<f64> {
            ds.records().iter().map(|r| world.scores[world.index(r.user, r.item)]).collect()
        };
        let (val_scores, test_scores) = (score(&validation), score(&sample.test));
        let all: Vec<f64> = val_scores.iter().chain(&test_scores).copied().collect();
        let opts = FitOptions { range: Some(ScoreRange::of(&all).unwrap()), ..FitOptions::default() };
        let data = CalibrationData::new(
            val_scores,
            validation.records().iter().map(|r| r.label).collect(),
            validation.records().iter().map(|r| r.item).collect(),
        )
        .unwrap();
        let labels: Vec<f64> = sample.test.records().iter().map(|r| f64::from(u8::from(r.label))).collect();
        for (f, &family) in families.iter().enumerate() {
            let test_ece = |spec: &LossSpec| {
                let params = fit(family, &data, spec, &opts).unwrap().params;
                let probs: Vec<f64> = test_scores.iter().map(|&s| params.transform(s)).collect();
                ece(&probs, &labels, 15).unwrap()
            };
            let naive = test_ece(&LossSpec::naive());
            let uerm = test_ece(&LossSpec::uerm(omega_hat.clone()));
            wins[f] += usize::from(uerm < naive);
            reductions[f].push((naive - uerm) / naive);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[4] + v[5])
    };
    let med = [median(&mut reductions[0]), median(&mut reductions[1])];
    outcome(
        wins.iter().all(|&w| w >= 9) && med.iter().all(|&m| m >= 0.10),
        format!(
            "gaussian: uerm < naive in {}/10 seeds, median ECE reduction {:.2}%; gamma: {}/10, {:.2}% (need >= 9/10 and >= 10%)",
            wins[0],
            med[0] * 100.0,
            wins[1],
            med[1] * 100.0
        ),
    )
}

fn c8_metric_bruteforce() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let m = 15;
    let mut worst: f64 = 0.0;
    let mut count_mismatch = 0;
    for _ in 0..50 {
        let probs: Vec<f64> = (0..500)
            .map(|_| match rng.random_range(0..10) {
                0 => rng.random_range(0..=m) as f64 / m as f64,
                _ => rng.random::<f64>(),
            })
            .collect();
        let labels: Vec<f64> = (0..500).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        let table = reliability(&probs, &labels, m).unwrap();
        for (bin, brute) in table.bins.iter().zip(brute_bins(&probs, &labels, m)) {
            count_mismatch += usize::from(bin.count != brute.count);
            worst = worst
                .max((bin.accuracy - brute.accuracy).abs())
                .max((bin.confidence - brute.confidence).abs());
        }
        worst = worst
            .max((ece(&probs, &labels, m).unwrap() - brute_ece(&probs, &labels, m)).abs())
            .max((mce(&probs, &labels, m).unwrap() - brute_mce(&probs, &labels, m)).abs())
            .max((nll(&probs, &labels).unwrap() - brute_nll(&probs, &labels)).abs());
    }
    outcome(
        worst < 1e-12 && count_mismatch == 0,
        format!("max deviation {worst:.2e} (< 1e-12), {count_mismatch} bin-count mismatches over 50 instances"),
    )
}

fn c9_ranking_invariance() -> Outcome {
    let cfg = SyntheticConfig {
        num_users: 400,
        num_items: 120,
        ..SyntheticConfig::default()
    };
    let world = generate_world(&cfg, 909).unwrap();
    let sample = sample_world(&world, 910).unwrap();
    let (train, validation) =
        split_train_validation(&sample.train, &SplitConfig { validation_fraction: 0.1, seed: 911 }).unwrap();
    let model = train_bpr(&train, &TrainConfig { epochs: 10, seed: 912, ..TrainConfig::default() }).unwrap();
    let mut pairs = validation.pairs();
    pairs.extend(sample.test.pairs());
    let table = score_all(&model, &pairs).unwrap();
    let val_scores = table.scores_for(&validation).unwrap();
    let test_scores = table.scores_for(&sample.test).unwrap();
    let opts = FitOptions {
        range: Some(ScoreRange::new(table.s_min(), table.s_max()).unwrap()),
        ..FitOptions::default()
    };
    let data = CalibrationData::new(
        val_scores,
        validation.records().iter().map(|r| r.label).collect(),
        validation.records().iter().map(|r| r.item).collect(),
    )
    .unwrap();
    let omega_hat = clip(&estimate_popularity(&train, 0.5).unwrap(), 0.1).unwrap();
    let recs = sample.test.records();
    let users: Vec<u32> = recs.iter().map(|r| r.user).collect();
    let items: Vec<u32> = recs.iter().map(|r| r.item).collect();
    let labels: Vec<bool> = recs.iter().map(|r| r.label).collect();
    let ks = [1, 3, 5];
    let metrics = |s: &[f64]| ndcg_recall(&group_by_user(&users, &items, s, &labels).unwrap(), &ks).unwrap();
    let raw = metrics(&test_scores);
    let mut equal = 0;
    let mut total = 0;
    for family in [
        ParametricFamily::Platt,
        ParametricFamily::Gaussian,
        ParametricFamily::Gamma,
        ParametricFamily::Beta,
    ] {
        for spec in [LossSpec::naive(), LossSpec::uerm(omega_hat.clone())] {
            let params = fit(family, &data, &spec, &opts).unwrap().params;
            let probs: Vec<f64> = test_scores.iter().map(|&s| params.transform(s)).collect();
            total += 1;
            equal += usize::from(metrics(&probs) == raw);
        }
    }
    let fmt = |m: &BTreeMap<usize, f64>| m.values().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("/");
    outcome(
        equal == total,
        format!(
            "{equal}/{total} calibrators reproduce raw NDCG@1/3/5 = {} and Recall@1/3/5 = {} exactly",
            fmt(&raw.0),
            fmt(&raw.1)
        ),
    )
}

fn c10_exponential_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (lambda0, lambda1, pi1) = (2.0, 0.5, 0.3);
    let (e0, e1) = (Exp::new(lambda0).unwrap(), Exp::new(lambda1).unwrap());
    let n = 100_000;
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random::<f64>() < pi1;
        scores.push(if y { e1.sample(&mut rng) } else { e0.sample(&mut rng) });
        labels.push(y);
    }
    let data = CalibrationData::new(scores.clone(), labels, vec![0; n]).unwrap();
    let p = fit(ParametricFamily::Platt, &data, &LossSpec::naive(), &FitOptions::default())
        .unwrap()
        .params;
    // Posterior logit (lambda0 - lambda1) s + ln(pi1 lambda1 / (pi0 lambda0)).
    let c_star = (pi1 * lambda1 / ((1.0 - pi1) * lambda0)).ln();
    let b_star = lambda0 - lambda1;
    let worst = scores
        .iter()
        .map(|&s| (p.transform(s) - 1.0 / (1.0 + (-(b_star * s + c_star)).exp())).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < 0.02,
        format!(
            "max |fitted - posterior| = {worst:.4} (< 0.02); b = {:.3} vs {b_star}, c = {:.3} vs {c_star:.3}",
            p.b, p.c
        ),
    )
}

fn c11_pipeline_determinism() -> Outcome {
    let run = |dir: &std::path::Path| {
        let cfg = PipelineConfig {
            seed: 11,
            output_dir: dir.to_path_buf(),
            data: DataSource::Synthetic {
                world: SyntheticConfig {
                    num_users: 300,
                    num_items: 80,
                    ..SyntheticConfig::default()
                },
            },
            scores: ScoreSource::Ranker,
            ranker: TrainConfig { epochs: 5, ..TrainConfig::default() },
            losses: vec![LossKind::Naive, LossKind::Uerm, LossKind::Ideal],
            ..PipelineConfig::default()
        };
        run_pipeline(&cfg).unwrap();
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    let mut files = vec!["summary.csv".to_string()];
    let mut models: Vec<String> = std::fs::read_dir(a.path().join("models"))
        .unwrap()
        .map(|e| format!("models/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    models.sort();
    let model_count = models.len();
    files.extend(models);
    let identical = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap())
        .count();
    outcome(
        identical == files.len() && model_count == 18,
        format!("{identical}/{} files byte-identical across two runs (summary.csv + {model_count} model JSONs)", files.len()),
    )
}
