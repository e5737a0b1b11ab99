//! Calibration maps from ranking scores to probabilities.
//!
//! Parametric maps are all of the form `sigmoid(a * f0(s) + b * f1(s) + c)`:
//!
//! | family   | `f0(s)`          | `f1(s)`            |
//! |----------|------------------|--------------------|
//! | Platt    | (unused, `a = 0`) | `s`               |
//! | Gaussian | `s^2`            | `s`                |
//! | Gamma    | `ln s'`          | `s'`               |
//! | Beta     | `ln u`           | `-ln(1 - u)`       |
//!
//! with `s' = max(s - shift, delta)` for Gamma and `u = sigmoid(s)` for Beta.
//! Each family is increasing on a score range exactly when a small set of
//! linear inequalities in `(a, b, c)` holds; see [`constraints`].
//!
//! Two families were considered and left out. An exponential negative class
//! with a Gaussian positive class gives `sigmoid(a s^2 + b s + c)` with `a < 0`
//! and `b > 0` forced by the generative model, which cannot be increasing for
//! all `s > 0`. A Gamma negative class with a Gaussian positive class adds a
//! `ln s` term whose monotonicity condition is nonlinear in the parameters.

use serde::{Deserialize, Serialize};

use crate::math::{sigmoid, softplus};
use crate::{Error, Result};

/// Margin turning the strict monotonicity inequalities into closed constraints.
pub const MONOTONE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametricFamily {
    Platt,
    Gaussian,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningKind {
    Histogram,
    Isotonic,
}

/// Every calibrator the toolkit can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Platt,
    Gaussian,
    Gamma,
    Beta,
    Histogram,
    Isotonic,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Platt,
        Family::Gaussian,
        Family::Gamma,
        Family::Beta,
        Family::Histogram,
        Family::Isotonic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Platt => "platt",
            Family::Gaussian => "gaussian",
            Family::Gamma => "gamma",
            Family::Beta => "beta",
            Family::Histogram => "histogram",
            Family::Isotonic => "isotonic",
        }
    }

    pub fn parametric(self) -> Option<ParametricFamily> {
        match self {
            Family::Platt => Some(ParametricFamily::Platt),
            Family::Gaussian => Some(ParametricFamily::Gaussian),
            Family::Gamma => Some(ParametricFamily::Gamma),
            Family::Beta => Some(ParametricFamily::Beta),
            Family::Histogram | Family::Isotonic => None,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown calibrator family `{s}`")))
    }
}

impl From<ParametricFamily> for Family {
    fn from(f: ParametricFamily) -> Self {
        match f {
            ParametricFamily::Platt => Family::Platt,
            ParametricFamily::Gaussian => Family::Gaussian,
            ParametricFamily::Gamma => Family::Gamma,
            ParametricFamily::Beta => Family::Beta,
        }
    }
}

/// Closed score interval a calibrator must be increasing on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::InvalidArgument(format!("bad score range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn of(scores: &[f64]) -> Result<Self> {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        Self::new(min, max)
    }
}

/// Shift and floor that make Gamma inputs positive on `range`.
///
/// `s' = s - shift` equals `delta` at `range.min`, with
/// `delta = max(1e-6, 1e-3 * (max - min))`.
pub fn gamma_shift(range: ScoreRange) -> (f64, f64) {
    let delta = (1e-3 * (range.max - range.min)).max(1e-6);
    (range.min - delta, delta)
}

/// Fitted parameters `(a, b, c)` of a parametric calibrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricParams {
    pub family: ParametricFamily,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Gamma only: subtracted from the score before the log.
    pub shift: f64,
    /// Gamma only: shifted scores are clamped below at this value.
    pub delta: f64,
}

impl ParametricParams {
    pub fn platt(b: f64, c: f64) -> Self {
        Self::with_family(ParametricFamily::Platt, 0.0, b, c)
    }

    pub fn gaussian(a: f64, b: f64, c: f64) -> Self {
        Self::with_family(ParametricFamily::Gaussian, a, b, c)
    }

    pub fn gamma(a: f64, b: f64, c: f64, shift: f64, delta: f64) -> Self {
        Self {
            shift,
            delta,
            ..Self::with_family(ParametricFamily::Gamma, a, b, c)
        }
    }

    pub fn beta(a: f64, b: f64, c: f64) -> Self {
        Self::with_family(ParametricFamily::Beta, a, b, c)
    }

    fn with_family(family: ParametricFamily, a: f64, b: f64, c: f64) -> Self {
        Self {
            family,
            a,
            b,
            c,
            shift: 0.0,
            delta: 1e-6,
        }
    }

    /// Starting point whose logit is `k (s - mid)`, the identity squashed so
    /// the logits over `range` stay within about ±4 (away from the loss clamp,
    /// where gradients vanish).
    pub fn neutral(family: ParametricFamily, range: ScoreRange) -> Self {
        let k = 1.0 / (1.0f64).max((range.max - range.min) / 8.0);
        let mid = 0.5 * (range.min + range.max);
        match family {
            ParametricFamily::Gamma => {
                let (shift, delta) = gamma_shift(range);
                Self::gamma(0.0, k, -k * (mid - shift), shift, delta)
            }
            // -softplus(-s) and softplus(s) sum to s.
            ParametricFamily::Beta => Self::beta(k, k, -k * mid),
            f => Self::with_family(f, 0.0, k, -k * mid),
        }
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn with_theta(&self, theta: [f64; 3]) -> Self {
        Self {
            a: theta[0],
            b: theta[1],
            c: theta[2],
            ..*self
        }
    }

    /// Basis `(f0(s), f1(s), 1)` such that the logit is `theta . features`.
    #[inline]
    pub fn features(&self, s: f64) -> [f64; 3] {
        match self.family {
            ParametricFamily::Platt | ParametricFamily::Gaussian => [s * s, s, 1.0],
            ParametricFamily::Gamma => {
                let shifted = (s - self.shift).max(self.delta);
                [shifted.ln(), shifted, 1.0]
            }
            ParametricFamily::Beta => [-softplus(-s), softplus(s), 1.0],
        }
    }

    #[inline]
    pub fn logit(&self, s: f64) -> f64 {
        let [f0, f1, _] = self.features(s);
        match self.family {
            ParametricFamily::Platt => self.b * f1 + self.c,
            _ => self.a * f0 + self.b * f1 + self.c,
        }
    }

    /// Calibrated probability, kept inside the open interval (0, 1).
    #[inline]
    pub fn transform(&self, s: f64) -> f64 {
        sigmoid(self.logit(s)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Derivative factor at the low end of the score range.
    LowerEndpoint,
    /// Derivative factor at the high end of the score range.
    UpperEndpoint,
    /// Beta: `a >= 0`.
    LogWeight,
    /// Beta: `b >= 0`.
    LogComplementWeight,
    /// Beta: `a + b >= margin`.
    Combined,
}

/// `coef . (a, b, c) >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConstraint {
    pub kind: ConstraintKind,
    pub coef: [f64; 3],
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn slack(&self, theta: &[f64; 3]) -> f64 {
        self.coef[0] * theta[0] + self.coef[1] * theta[1] + self.coef[2] * theta[2] - self.rhs
    }
}

/// Linear constraints under which `params.family` is increasing on `range`.
///
/// Gaussian: `2 a s + b >= margin` at both endpoints. Gamma: `a / s' + b >= margin`
/// at both shifted endpoints. Platt: `b >= margin`. Beta: `a, b >= 0` and
/// `a + b >= margin`. The derivative factor is linear (Gaussian) or monotone
/// (Gamma) in the score, so the endpoints are enough.
pub fn constraints(params: &ParametricParams, range: ScoreRange) -> Vec<LinearConstraint> {
    let eps = MONOTONE_MARGIN;
    let endpoint = |kind, k: f64| LinearConstraint {
        kind,
        coef: [k, 1.0, 0.0],
        rhs: eps,
    };
    match params.family {
        ParametricFamily::Platt => vec![LinearConstraint {
            kind: ConstraintKind::LowerEndpoint,
            coef: [0.0, 1.0, 0.0],
            rhs: eps,
        }],
        ParametricFamily::Gaussian => vec![
            endpoint(ConstraintKind::LowerEndpoint, 2.0 * range.min),
            endpoint(ConstraintKind::UpperEndpoint, 2.0 * range.max),
        ],
        ParametricFamily::Gamma => {
            let lo = (range.min - params.shift).max(params.delta);
            let hi = (range.max - params.shift).max(params.delta);
            vec![
                endpoint(ConstraintKind::LowerEndpoint, 1.0 / lo),
                endpoint(ConstraintKind::UpperEndpoint, 1.0 / hi),
            ]
        }
        ParametricFamily::Beta => vec![
            LinearConstraint {
                kind: ConstraintKind::LogWeight,
                coef: [1.0, 0.0, 0.0],
                rhs: 0.0,
            },
            LinearConstraint {
                kind: ConstraintKind::LogComplementWeight,
                coef: [0.0, 1.0, 0.0],
                rhs: 0.0,
            },
            LinearConstraint {
                kind: ConstraintKind::Combined,
                coef: [1.0, 1.0, 0.0],
                rhs: eps,
            },
        ],
    }
}

/// Whether the monotonicity constraints hold with margin on `[s_min, s_max]`.
pub fn check_monotone(params: &ParametricParams, s_min: f64, s_max: f64) -> bool {
    let Ok(range) = ScoreRange::new(s_min, s_max) else {
        return false;
    };
    if params.family == ParametricFamily::Platt && params.a != 0.0 {
        return false;
    }
    let theta = params.theta();
    if !theta.iter().all(|v| v.is_finite()) {
        return false;
    }
    constraints(params, range)
        .iter()
        .all(|con| con.slack(&theta) >= 0.0)
}

/// Step-function calibrator over score bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningModel {
    pub kind: BinningKind,
    /// `values.len() + 1` strictly ascending edges.
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

impl BinningModel {
    pub fn new(kind: BinningKind, edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || edges.len() != values.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} edges for {} bins",
                edges.len(),
                values.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("bin edges must be strictly ascending".into()));
        }
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityOutOfRange(v));
        }
        if kind == BinningKind::Isotonic && values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("isotonic values must be non-decreasing".into()));
        }
        Ok(Self { kind, edges, values })
    }

    /// Index of the half-open bin `[e_k, e_{k+1})` holding `s`; out-of-range
    /// scores go to the first or last bin.
    pub fn bin_index(&self, s: f64) -> usize {
        let above = self.edges.partition_point(|&e| e <= s);
        above.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn transform(&self, s: f64) -> f64 {
        self.values[self.bin_index(s)]
    }
}

/// Equal-width bins over the observed score range, valued by their mean target.
///
/// Targets may be labels, soft labels or inverse-propensity-weighted labels;
/// bin means are clamped to `[0, 1]`. Empty bins copy the nearest non-empty
/// bin, preferring the left one on ties.
pub fn fit_histogram(scores: &[f64], targets: &[f64], num_bins: usize) -> Result<BinningModel> {
    check_inputs(scores, targets)?;
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be at least 1".into()));
    }
    let range = ScoreRange::of(scores)?;
    let lo = range.min;
    let hi = if range.max > lo { range.max } else { lo + 1.0 };
    let width = (hi - lo) / num_bins as f64;
    let mut edges: Vec<f64> = (0..num_bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);

    let mut sums = vec![0.0; num_bins];
    let mut counts = vec![0usize; num_bins];
    let shell = BinningModel {
        kind: BinningKind::Histogram,
        edges,
        values: vec![0.0; num_bins],
    };
    for (&s, &t) in scores.iter().zip(targets) {
        let k = shell.bin_index(s);
        sums[k] += t;
        counts[k] += 1;
    }
    let filled: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &n)| (n > 0).then(|| (sum / n as f64).clamp(0.0, 1.0)))
        .collect();
    let values = (0..num_bins).map(|k| nearest_filled(&filled, k)).collect();
    BinningModel::new(BinningKind::Histogram, shell.edges, values)
}

fn nearest_filled(filled: &[Option<f64>], k: usize) -> f64 {
    if let Some(v) = filled[k] {
        return v;
    }
    for d in 1..filled.len() {
        if let Some(v) = k.checked_sub(d).and_then(|j| filled[j]) {
            return v;
        }
        if let Some(v) = filled.get(k + d).copied().flatten() {
            return v;
        }
    }
    unreachable!("at least one bin holds a sample")
}

/// Isotonic regression by pool-adjacent-violators.
///
/// Samples are ordered by score and equal scores are pooled first, so the
/// result is a function of the score. Each final block becomes one bin that
/// starts at its smallest score; values are clamped to `[0, 1]` afterwards.
pub fn fit_isotonic(scores: &[f64], targets: &[f64]) -> Result<BinningModel> {
    check_inputs(scores, targets)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // (start score, weighted mean, weight)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &order {
        match blocks.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 = (last.1 * last.2 + targets[i]) / (last.2 + 1.0);
                last.2 += 1.0;
            }
            _ => blocks.push((scores[i], targets[i], 1.0)),
        }
    }

    let pooled = pool_adjacent_violators(blocks);
    let max = scores[*order.last().expect("non-empty")];
    let mut edges: Vec<f64> = pooled.iter().map(|b| b.0).collect();
    let last_start = *edges.last().expect("non-empty");
    edges.push(if max > last_start { max } else { last_start + 1.0 });
    let values = pooled.iter().map(|b| b.1.clamp(0.0, 1.0)).collect();
    BinningModel::new(BinningKind::Isotonic, edges, values)
}

/// Merges adjacent blocks while a later block's mean falls below an earlier one.
fn pool_adjacent_violators(blocks: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    let mut stack: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for block in blocks {
        stack.push(block);
        while stack.len() > 1 {
            let n = stack.len();
            let (prev, cur) = (stack[n - 2], stack[n - 1]);
            if prev.1 <= cur.1 {
                break;
            }
            let weight = prev.2 + cur.2;
            stack[n - 2] = (prev.0, (prev.1 * prev.2 + cur.1 * cur.2) / weight, weight);
            stack.pop();
        }
    }
    stack
}

fn check_inputs(scores: &[f64], targets: &[f64]) -> Result<()> {
    if scores.len() != targets.len() {
        return Err(Error::LengthMismatch(scores.len(), targets.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score or target".into()));
    }
    Ok(())
}

/// A fitted calibrator of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelJson", try_from = "ModelJson")]
pub enum CalibratorModel {
    Parametric(ParametricParams),
    Binned(BinningModel),
}

impl CalibratorModel {
    pub fn family(&self) -> Family {
        match self {
            CalibratorModel::Parametric(p) => p.family.into(),
            CalibratorModel::Binned(b) => match b.kind {
                BinningKind::Histogram => Family::Histogram,
                BinningKind::Isotonic => Family::Isotonic,
            },
        }
    }

    pub fn transform(&self, s: f64) -> f64 {
        match self {
            CalibratorModel::Parametric(p) => p.transform(s),
            CalibratorModel::Binned(b) => b.transform(s),
        }
    }

    pub fn transform_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.transform(s)).collect()
    }
}

/// Flat JSON form: `{family, a, b, c, shift, edges, values}` with unused fields omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelJson {
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_squash: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

impl From<CalibratorModel> for ModelJson {
    fn from(model: CalibratorModel) -> Self {
        let family = model.family();
        let mut json = ModelJson {
            family,
            a: None,
            b: None,
            c: None,
            shift: None,
            delta: None,
            input_squash: None,
            edges: None,
            values: None,
        };
        match model {
            CalibratorModel::Parametric(p) => {
                json.a = (p.family != ParametricFamily::Platt).then_some(p.a);
                json.b = Some(p.b);
                json.c = Some(p.c);
                if p.family == ParametricFamily::Gamma {
                    json.shift = Some(p.shift);
                    json.delta = Some(p.delta);
                }
                if p.family == ParametricFamily::Beta {
                    json.input_squash = Some(true);
                }
            }
            CalibratorModel::Binned(b) => {
                json.edges = Some(b.edges);
                json.values = Some(b.values);
            }
        }
        json
    }
}

impl TryFrom<ModelJson> for CalibratorModel {
    type Error = Error;

    fn try_from(json: ModelJson) -> Result<Self> {
        let missing = |field: &str| Error::InvalidArgument(format!("model JSON lacks `{field}`"));
        if let Some(family) = json.family.parametric() {
            let b = json.b.ok_or_else(|| missing("b"))?;
            let c = json.c.ok_or_else(|| missing("c"))?;
            let a = match family {
                ParametricFamily::Platt => 0.0,
                _ => json.a.ok_or_else(|| missing("a"))?,
            };
            let params = match family {
                ParametricFamily::Platt => ParametricParams::platt(b, c),
                ParametricFamily::Gaussian => ParametricParams::gaussian(a, b, c),
                ParametricFamily::Gamma => ParametricParams::gamma(
                    a,
                    b,
                    c,
                    json.shift.ok_or_else(|| missing("shift"))?,
                    json.delta.ok_or_else(|| missing("delta"))?,
                ),
                ParametricFamily::Beta => ParametricParams::beta(a, b, c),
            };
            Ok(CalibratorModel::Parametric(params))
        } else {
            let kind = match json.family {
                Family::Histogram => BinningKind::Histogram,
                _ => BinningKind::Isotonic,
            };
            Ok(CalibratorModel::Binned(BinningModel::new(
                kind,
                json.edges.ok_or_else(|| missing("edges"))?,
                json.values.ok_or_else(|| missing("values"))?,
            )?))
        }
    }
}
