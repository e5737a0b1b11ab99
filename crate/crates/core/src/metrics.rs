//! Calibration metrics (ECE, MCE, NLL), reliability tables and top-k ranking metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::clamp_prob;
use crate::{Error, Result};

/// Bin count for ECE and MCE.
pub const DEFAULT_METRIC_BINS: usize = 15;
/// Bin count for reliability diagrams.
pub const DEFAULT_DIAGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean label; 0 for empty bins.
    pub accuracy: f64,
    /// Mean probability; 0 for empty bins.
    pub confidence: f64,
    pub gap: f64,
}

impl ReliabilityBin {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Equal-width partition of [0, 1] with per-bin label and probability means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
    pub n: usize,
}

/// Bin `m` holds `[m/M, (m+1)/M)`; the last bin also holds 1.0.
fn bin_of(p: f64, num_bins: usize) -> usize {
    let m = num_bins as f64;
    let mut k = ((p * m) as usize).min(num_bins - 1);
    // Align with edge comparisons when `p * M` rounds across an edge.
    while k > 0 && p < k as f64 / m {
        k -= 1;
    }
    while k + 1 < num_bins && p >= (k + 1) as f64 / m {
        k += 1;
    }
    k
}

fn validate(probs: &[f64], labels: &[f64], num_bins: usize) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if num_bins == 0 {
        return Err(Error::InvalidArgument("at least one bin is required".into()));
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if let Some(&y) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::LabelOutOfRange(y));
    }
    Ok(())
}

/// Per-bin accuracy and confidence. Labels may be soft (e.g. true preference
/// probabilities) as long as they lie in [0, 1].
pub fn reliability(probs: &[f64], labels: &[f64], num_bins: usize) -> Result<ReliabilityTable> {
    validate(probs, labels, num_bins)?;
    let mut counts = vec![0usize; num_bins];
    let mut label_sums = vec![0.0; num_bins];
    let mut prob_sums = vec![0.0; num_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let k = bin_of(p, num_bins);
        counts[k] += 1;
        label_sums[k] += y;
        prob_sums[k] += p;
    }
    let m = num_bins as f64;
    let bins = (0..num_bins)
        .map(|k| {
            let (accuracy, confidence) = if counts[k] == 0 {
                (0.0, 0.0)
            } else {
                let c = counts[k] as f64;
                (label_sums[k] / c, prob_sums[k] / c)
            };
            ReliabilityBin {
                lo: k as f64 / m,
                hi: (k + 1) as f64 / m,
                count: counts[k],
                accuracy,
                confidence,
                gap: (accuracy - confidence).abs(),
            }
        })
        .collect();
    Ok(ReliabilityTable {
        bins,
        n: probs.len(),
    })
}

impl ReliabilityTable {
    /// Weighted mean gap over non-empty bins.
    pub fn ece(&self) -> f64 {
        self.bins
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| b.count as f64 / self.n as f64 * b.gap)
            .sum()
    }

    /// Largest gap over non-empty bins.
    pub fn mce(&self) -> f64 {
        self.bins
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| b.gap)
            .fold(0.0, f64::max)
    }

    /// Diagram variant where bins below 0.5 report the share of negatives
    /// against one minus the mean probability. Gaps are unchanged.
    pub fn two_sided(&self) -> ReliabilityTable {
        let bins = self
            .bins
            .iter()
            .map(|b| {
                if b.is_empty() || b.hi > 0.5 {
                    *b
                } else {
                    ReliabilityBin {
                        accuracy: 1.0 - b.accuracy,
                        confidence: 1.0 - b.confidence,
                        ..*b
                    }
                }
            })
            .collect();
        ReliabilityTable { bins, n: self.n }
    }

    /// `bin_lo,bin_hi,count,accuracy,confidence,gap`; empty bins leave the last three blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence,gap\n");
        for b in &self.bins {
            if b.is_empty() {
                let _ = writeln!(out, "{},{},0,,,", b.lo, b.hi);
            } else {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    b.lo, b.hi, b.count, b.accuracy, b.confidence, b.gap
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Bar chart of per-bin accuracy with the gap to the mean confidence and the diagonal.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, pad) = (320.0, 320.0, 40.0);
        let plot = w - 2.0 * pad;
        let x = |v: f64| pad + v * plot;
        let y = |v: f64| h - pad - v * plot;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" font-size="12" text-anchor="middle">{}</text>"#,
            w / 2.0,
            escape(title)
        );
        for b in self.bins.iter().filter(|b| !b.is_empty()) {
            let (x0, bw) = (x(b.lo), (b.hi - b.lo) * plot);
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="#3465a4" stroke="black" stroke-width="0.5"/>"##,
                y(b.accuracy),
                b.accuracy * plot
            );
            let (top, bottom) = (b.accuracy.max(b.confidence), b.accuracy.min(b.confidence));
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="#ef2929" fill-opacity="0.35"/>"##,
                y(top),
                (top - bottom) * plot
            );
        }
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#,
            x(0.0),
            y(0.0),
            x(1.0),
            y(1.0)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{pad}" y="{pad}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn ece(probs: &[f64], labels: &[f64], num_bins: usize) -> Result<f64> {
    Ok(reliability(probs, labels, num_bins)?.ece())
}

pub fn mce(probs: &[f64], labels: &[f64], num_bins: usize) -> Result<f64> {
    Ok(reliability(probs, labels, num_bins)?.mce())
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn nll(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// One user's scored candidates and held-out positives.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCandidates {
    pub user: u32,
    pub candidates: Vec<(u32, f64)>,
    pub positives: HashSet<u32>,
}

/// Groups aligned pair lists by user, in ascending user order.
pub fn group_by_user(users: &[u32], items: &[u32], scores: &[f64], labels: &[bool]) -> Result<Vec<UserCandidates>> {
    let n = users.len();
    for len in [items.len(), scores.len(), labels.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    let mut grouped: BTreeMap<u32, UserCandidates> = BTreeMap::new();
    for k in 0..n {
        let entry = grouped.entry(users[k]).or_insert_with(|| UserCandidates {
            user: users[k],
            candidates: Vec::new(),
            positives: HashSet::new(),
        });
        entry.candidates.push((items[k], scores[k]));
        if labels[k] {
            entry.positives.insert(items[k]);
        }
    }
    Ok(grouped.into_values().collect())
}

/// NDCG@k and Recall@k averaged over users with at least one positive.
///
/// Candidates are ranked by descending score with ties broken by item id.
/// Relevance is binary and discounted by `log2(rank + 1)`.
pub fn ndcg_recall(
    users: &[UserCandidates],
    ks: &[usize],
) -> Result<(BTreeMap<usize, f64>, BTreeMap<usize, f64>)> {
    let mut ndcg: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut recall = ndcg.clone();
    let mut counted = 0usize;
    for u in users {
        if u.candidates.is_empty() {
            return Err(Error::EmptyCandidates(u.user));
        }
        if u.positives.is_empty() {
            continue;
        }
        counted += 1;
        let mut ranked = u.candidates.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let hits: Vec<bool> = ranked.iter().map(|(i, _)| u.positives.contains(i)).collect();
        for &k in ks {
            let dcg: f64 = hits
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, &h)| h)
                .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
                .sum();
            let ideal: f64 = (0..k.min(u.positives.len()))
                .map(|r| 1.0 / ((r + 2) as f64).log2())
                .sum();
            let found = hits.iter().take(k).filter(|&&h| h).count();
            *ndcg.get_mut(&k).expect("k present") += dcg / ideal;
            *recall.get_mut(&k).expect("k present") += found as f64 / u.positives.len() as f64;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyInput);
    }
    for v in ndcg.values_mut().chain(recall.values_mut()) {
        *v /= counted as f64;
    }
    Ok((ndcg, recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ece: f64,
    pub mce: f64,
    pub nll: f64,
    pub num_bins: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_at_k: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<BTreeMap<usize, f64>>,
}

impl MetricReport {
    pub fn evaluate(probs: &[f64], labels: &[f64], num_bins: usize) -> Result<Self> {
        let table = reliability(probs, labels, num_bins)?;
        Ok(Self {
            ece: table.ece(),
            mce: table.mce(),
            nll: nll(probs, labels)?,
            num_bins,
            n: probs.len(),
            ndcg_at_k: None,
            recall_at_k: None,
        })
    }
}
