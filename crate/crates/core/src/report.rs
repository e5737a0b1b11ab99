//! Class-conditional score distribution summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_HISTOGRAM_BINS: usize = 30;

/// Moments and histogram of the scores of one label class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: bool,
    pub count: usize,
    /// `None` when the class is empty.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub sd: Option<f64>,
    /// Population skewness; `None` for empty or constant classes.
    pub skewness: Option<f64>,
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    /// Shared histogram edges, `bins + 1` of them.
    pub edges: Vec<f64>,
    pub negative: ClassSummary,
    pub positive: ClassSummary,
}

/// Summarizes scores of negative and positive pairs over a shared equal-width grid.
///
/// An empty class is reported with `count = 0` and no moments rather than failing.
pub fn report_score_distributions(scores: &[f64], labels: &[bool], bins: usize) -> Result<ScoreDistribution> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let summarize = |label: bool| {
        let xs: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == label).map(|(&s, _)| s).collect();
        if xs.is_empty() {
            log::warn!("no {} pairs to summarize", if label { "positive" } else { "negative" });
        }
        let mut histogram = vec![0usize; bins];
        for &s in &xs {
            let k = edges[1..bins].partition_point(|&e| e <= s);
            histogram[k] += 1;
        }
        let (mean, sd, skewness) = moments(&xs);
        ClassSummary {
            label,
            count: xs.len(),
            mean,
            sd,
            skewness,
            histogram,
        }
    };
    Ok(ScoreDistribution {
        negative: summarize(false),
        positive: summarize(true),
        edges,
    })
}

fn moments(xs: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skew = (m2 > 0.0).then(|| m3 / m2.powf(1.5));
    (Some(mean), Some(m2.sqrt()), skew)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScoreDistribution {
    /// `class,count,mean,sd,skewness`; moments are blank for an empty class.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("class,count,mean,sd,skewness\n");
        for c in [&self.negative, &self.positive] {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                u8::from(c.label),
                c.count,
                opt(c.mean),
                opt(c.sd),
                opt(c.skewness)
            );
        }
        out
    }

    /// `bin_lo,bin_hi,negative,positive`, one row per histogram bin.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,negative,positive\n");
        for k in 0..self.edges.len() - 1 {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[k],
                self.edges[k + 1],
                self.negative.histogram[k],
                self.positive.histogram[k]
            );
        }
        out
    }

    pub fn write(&self, summary: &Path, histogram: &Path) -> Result<()> {
        std::fs::write(summary, self.summary_csv())?;
        std::fs::write(histogram, self.histogram_csv())?;
        Ok(())
    }
}
