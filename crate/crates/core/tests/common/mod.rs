//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numerics: each function recomputes
//! its quantity from the definitions in the most direct way available.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rankcal::calibrators::{ParametricFamily, ParametricParams};

pub const PROB_CLAMP: f64 = 1e-7;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logit of a parametric calibrator, written out per family.
pub fn oracle_logit(p: &ParametricParams, s: f64) -> f64 {
    match p.family {
        ParametricFamily::Platt => p.b * s + p.c,
        ParametricFamily::Gaussian => p.a * s * s + p.b * s + p.c,
        ParametricFamily::Gamma => {
            let t = (s - p.shift).max(p.delta);
            p.a * t.ln() + p.b * t + p.c
        }
        ParametricFamily::Beta => {
            // a ln u - b ln(1 - u) + c with u = sigmoid(s); ln u = -softplus(-s), ln(1 - u) = -softplus(s)
            p.a * -softplus(-s) + p.b * softplus(s) + p.c
        }
    }
}

/// Cross-entropy `-t ln g - (1 - t) ln(1 - g)` with `g` clamped to
/// `[1e-7, 1 - 1e-7]`, evaluated through the clamped logit.
pub fn oracle_loss(z: f64, t: f64) -> f64 {
    let bound = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
    let z = z.clamp(-bound, bound);
    // -ln g = softplus(-z), -ln(1 - g) = softplus(z)
    t * softplus(-z) + (1.0 - t) * softplus(z)
}

/// Mean soft-label risk of `params` against targets.
pub fn oracle_risk(p: &ParametricParams, scores: &[f64], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (s, t) in scores.iter().zip(targets) {
        total += oracle_loss(oracle_logit(p, *s), *t);
    }
    total / scores.len() as f64
}

/// Reliability bins by direct membership tests against the edges `m / M`.
pub struct BruteBin {
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

pub fn brute_bins(probs: &[f64], labels: &[f64], m: usize) -> Vec<BruteBin> {
    (0..m)
        .map(|k| {
            let lo = k as f64 / m as f64;
            let hi = (k + 1) as f64 / m as f64;
            let members: Vec<usize> = (0..probs.len())
                .filter(|&j| probs[j] >= lo && (probs[j] < hi || (k == m - 1 && probs[j] <= 1.0)))
                .collect();
            let count = members.len();
            let (mut acc, mut conf) = (0.0, 0.0);
            for &j in &members {
                acc += labels[j];
                conf += probs[j];
            }
            if count > 0 {
                acc /= count as f64;
                conf /= count as f64;
            }
            BruteBin {
                count,
                accuracy: acc,
                confidence: conf,
            }
        })
        .collect()
}

pub fn brute_ece(probs: &[f64], labels: &[f64], m: usize) -> f64 {
    brute_bins(probs, labels, m)
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 * (b.accuracy - b.confidence).abs())
        .sum::<f64>()
        / probs.len() as f64
}

pub fn brute_mce(probs: &[f64], labels: &[f64], m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for b in brute_bins(probs, labels, m) {
        if b.count > 0 {
            worst = worst.max((b.accuracy - b.confidence).abs());
        }
    }
    worst
}

pub fn brute_nll(probs: &[f64], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / probs.len() as f64
}

/// Isotonic fit of `y` (already in score order) by the min-max formula
/// `f_i = max_{j <= i} min_{k >= i} mean(y_j..=y_k)`.
pub fn isotonic_minmax(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    let mean = |j: usize, k: usize| (prefix[k + 1] - prefix[j]) / (k - j + 1) as f64;
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| mean(j, k)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// DCG-based NDCG@k and Recall@k for one user by explicit sorting.
pub fn brute_ndcg_recall(cands: &[(u32, f64)], positives: &[u32], k: usize) -> (f64, f64) {
    let mut order = cands.to_vec();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut dcg = 0.0;
    let mut hits = 0;
    for (rank, (item, _)) in order.iter().take(k).enumerate() {
        if positives.contains(item) {
            dcg += 1.0 / (rank as f64 + 2.0).log2();
            hits += 1;
        }
    }
    let ideal: f64 = (0..k.min(positives.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    (dcg / ideal, hits as f64 / positives.len() as f64)
}

/// Labelled scores from two Gaussian class-conditionals, optionally truncated
/// to a window by rejection.
pub fn two_gaussians(
    rng: &mut impl Rng,
    n: usize,
    pi1: f64,
    (mu0, sd0): (f64, f64),
    (mu1, sd1): (f64, f64),
    window: Option<(f64, f64)>,
) -> (Vec<f64>, Vec<bool>) {
    let n0 = Normal::new(mu0, sd0).unwrap();
    let n1 = Normal::new(mu1, sd1).unwrap();
    let (mut s, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while s.len() < n {
        let label = rng.random::<f64>() < pi1;
        let x = if label { n1.sample(rng) } else { n0.sample(rng) };
        if let Some((lo, hi)) = window {
            if x < lo || x > hi {
                continue;
            }
        }
        s.push(x);
        y.push(label);
    }
    (s, y)
}

/// `n` evenly spaced points covering `[lo, hi]` inclusive.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

pub fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}
