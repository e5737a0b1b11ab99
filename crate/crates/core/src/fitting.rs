//! Constrained maximum-likelihood fitting of the parametric calibrators.
//!
//! Every loss is a cross-entropy `-t ln g - (1 - t) ln(1 - g)` against a
//! per-pair target `t`:
//!
//! - naive: the observed interaction `Y`;
//! - ideal: the true preference probability `rho` (synthetic data only);
//! - UERM: the inverse-propensity-weighted label `Y / w`, which can exceed 1.
//!
//! In the logit `z = theta . x(s)` the loss is `softplus(z) - t z`, convex for
//! any `t`, and the monotonicity constraints are linear in `theta`. The fit is
//! a damped Newton method whose step solves the quadratic model exactly under
//! those constraints, followed by an Armijo backtracking line search. The
//! probability clamp `[1e-7, 1 - 1e-7]` becomes a clamp on `z`, which keeps the
//! UERM risk bounded below.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrators::{
    constraints, fit_histogram, fit_isotonic, CalibratorModel, ConstraintKind, Family,
    LinearConstraint, ParametricFamily, ParametricParams, ScoreRange, MONOTONE_MARGIN,
};
use crate::math::{sigmoid, softplus, PROB_CLAMP};
use crate::propensity::PropensityTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Naive,
    Ideal,
    Uerm,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Naive, LossKind::Ideal, LossKind::Uerm];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Naive => "naive",
            LossKind::Ideal => "ideal",
            LossKind::Uerm => "uerm",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}`")))
    }
}

/// Validation pairs a calibrator is fitted on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationData {
    pub scores: Vec<f64>,
    /// Observed interaction `Y`.
    pub labels: Vec<bool>,
    /// Item of each pair, for propensity lookup.
    pub items: Vec<u32>,
}

impl CalibrationData {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, items: Vec<u32>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch(scores.len(), labels.len()));
        }
        if scores.len() != items.len() {
            return Err(Error::LengthMismatch(scores.len(), items.len()));
        }
        Ok(Self {
            scores,
            labels,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub propensities: Option<PropensityTable>,
    pub true_preferences: Option<Vec<f64>>,
}

impl LossSpec {
    pub fn naive() -> Self {
        Self {
            kind: LossKind::Naive,
            propensities: None,
            true_preferences: None,
        }
    }

    pub fn uerm(propensities: PropensityTable) -> Self {
        Self {
            kind: LossKind::Uerm,
            propensities: Some(propensities),
            true_preferences: None,
        }
    }

    /// `rho` is aligned with the pairs of the data this loss is evaluated on.
    pub fn ideal(rho: Vec<f64>) -> Self {
        Self {
            kind: LossKind::Ideal,
            propensities: None,
            true_preferences: Some(rho),
        }
    }

    /// Per-pair cross-entropy targets.
    pub fn targets(&self, data: &CalibrationData) -> Result<Vec<f64>> {
        match self.kind {
            LossKind::Naive => Ok(data.labels.iter().map(|&y| f64::from(u8::from(y))).collect()),
            LossKind::Ideal => {
                let rho = self
                    .true_preferences
                    .as_ref()
                    .ok_or(Error::IncompleteLossSpec("ideal loss needs true preferences"))?;
                if rho.len() != data.len() {
                    return Err(Error::LengthMismatch(rho.len(), data.len()));
                }
                if let Some(&r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return Err(Error::LabelOutOfRange(r));
                }
                Ok(rho.clone())
            }
            LossKind::Uerm => {
                let table = self
                    .propensities
                    .as_ref()
                    .ok_or(Error::IncompleteLossSpec("UERM loss needs propensities"))?;
                data.labels
                    .iter()
                    .zip(&data.items)
                    .map(|(&y, &item)| {
                        let w = table.get(item).ok_or(Error::MissingPropensity(item))?;
                        if !(w > 0.0 && w <= 1.0) {
                            return Err(Error::ZeroPropensity(w));
                        }
                        Ok(if y { 1.0 / w } else { 0.0 })
                    })
                    .collect()
            }
        }
    }
}

/// Logit bound equivalent to clamping probabilities at `[1e-7, 1 - 1e-7]`.
fn logit_clamp() -> f64 {
    // Not `logit(1 - PROB_CLAMP)`: forming `1 - (1 - 1e-7)` loses ~9 digits.
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

/// Cross-entropy in logit form with the clamp applied.
#[inline]
fn loss_at_logit(z: f64, t: f64, bound: f64) -> f64 {
    let z = z.clamp(-bound, bound);
    t * softplus(-z) + (1.0 - t) * softplus(z)
}

/// Mean loss of `params` over the pairs under `spec`.
pub fn empirical_risk(params: &ParametricParams, data: &CalibrationData, spec: &LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let targets = spec.targets(data)?;
    Ok(risk_with_targets(params, &data.scores, &targets))
}

/// Mean clamped cross-entropy of `params` against arbitrary targets.
pub fn risk_with_targets(params: &ParametricParams, scores: &[f64], targets: &[f64]) -> f64 {
    let bound = logit_clamp();
    let total: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| loss_at_logit(params.logit(s), t, bound))
        .sum();
    total / scores.len() as f64
}

/// Bias of the IPS risk under estimated propensities `omega_hat`:
/// `mean(rho (omega / omega_hat - 1) ln((1 - g) / g))`.
///
/// This is the sign obtained by expanding `E[R_uerm] - R_ideal` directly. The
/// same expression is sometimes quoted with `ln(g / (1 - g))`, which flips the
/// sign. `g` is clamped like everywhere else in the losses.
pub fn uerm_bias_closed_form(
    params: &ParametricParams,
    scores: &[f64],
    rho: &[f64],
    omega: &[f64],
    omega_hat: &[f64],
) -> Result<f64> {
    let n = scores.len();
    for len in [rho.len(), omega.len(), omega_hat.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let bound = logit_clamp();
    let mut total = 0.0;
    for k in 0..n {
        if omega_hat[k] <= 0.0 {
            return Err(Error::ZeroPropensity(omega_hat[k]));
        }
        // ln((1 - g) / g) == -logit(g), evaluated without cancellation near 0 and 1.
        let log_odds_against = -params.logit(scores[k]).clamp(-bound, bound);
        total += rho[k] * (omega[k] / omega_hat[k] - 1.0) * log_odds_against;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Score interval the calibrator must be increasing on; defaults to the data range.
    pub range: Option<ScoreRange>,
    pub init: Option<ParametricParams>,
    pub max_iterations: usize,
    /// Stop when the relative risk change falls below this.
    pub relative_tolerance: f64,
    /// Histogram bin count when fitting [`Family::Histogram`].
    pub histogram_bins: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            range: None,
            init: None,
            max_iterations: 500,
            relative_tolerance: 1e-9,
            histogram_bins: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub risk: f64,
    /// Smallest constraint slack at this iterate.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParametricParams,
    pub final_risk: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_constraints: Vec<ConstraintKind>,
    /// Share of pairs whose probability sits at the loss clamp.
    pub clamped_fraction: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl FitResult {
    pub fn write_trace_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "risk", "constraint_slack"])?;
        for row in &self.trace {
            w.write_record([
                row.iteration.to_string(),
                row.risk.to_string(),
                row.min_slack.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimizes the empirical risk of `family` subject to its monotonicity constraints.
pub fn fit(
    family: ParametricFamily,
    data: &CalibrationData,
    spec: &LossSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let distinct = count_distinct(&data.scores);
    if distinct < 3 {
        return Err(Error::TooFewDistinctScores(distinct));
    }
    let targets = spec.targets(data)?;
    let range = match opts.range {
        Some(r) => r,
        None => ScoreRange::of(&data.scores)?,
    };
    let start = match opts.init {
        Some(init) if init.family == family => init,
        Some(init) => {
            return Err(Error::InvalidArgument(format!(
                "init family {:?} does not match {:?}",
                init.family, family
            )))
        }
        None => ParametricParams::neutral(family, range),
    };
    Ok(Newton::new(start, range, &data.scores, &targets, opts).run())
}

/// Fits any calibrator family; the fit report is only produced for parametric ones.
pub fn fit_calibrator(
    family: Family,
    data: &CalibrationData,
    spec: &LossSpec,
    opts: &FitOptions,
) -> Result<(CalibratorModel, Option<FitResult>)> {
    match family {
        Family::Histogram => {
            let targets = spec.targets(data)?;
            let model = fit_histogram(&data.scores, &targets, opts.histogram_bins)?;
            Ok((CalibratorModel::Binned(model), None))
        }
        Family::Isotonic => {
            let targets = spec.targets(data)?;
            let model = fit_isotonic(&data.scores, &targets)?;
            Ok((CalibratorModel::Binned(model), None))
        }
        parametric => {
            let family = parametric.parametric().expect("parametric family");
            let result = fit(family, data, spec, opts)?;
            Ok((CalibratorModel::Parametric(result.params), Some(result)))
        }
    }
}

fn count_distinct(scores: &[f64]) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

struct Newton<'a> {
    template: ParametricParams,
    constraints: Vec<LinearConstraint>,
    features: Vec<[f64; 3]>,
    targets: &'a [f64],
    bound: f64,
    max_iterations: usize,
    relative_tolerance: f64,
    /// Platt keeps `a` at zero.
    fix_a: bool,
}

impl<'a> Newton<'a> {
    fn new(
        start: ParametricParams,
        range: ScoreRange,
        scores: &[f64],
        targets: &'a [f64],
        opts: &FitOptions,
    ) -> Self {
        let fix_a = start.family == ParametricFamily::Platt;
        let template = if fix_a { ParametricParams { a: 0.0, ..start } } else { start };
        Self {
            template,
            constraints: constraints(&template, range),
            features: scores.iter().map(|&s| template.features(s)).collect(),
            targets,
            bound: logit_clamp(),
            max_iterations: opts.max_iterations,
            relative_tolerance: opts.relative_tolerance,
            fix_a,
        }
    }

    fn run(&self) -> FitResult {
        let mut theta = self.template.theta();
        if self.min_slack(&theta) < 0.0 {
            let ident = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            let step = solve_qp(&ident, &[0.0; 3], &self.constraints, &theta);
            theta = add(&theta, &step, 1.0);
            theta = self.enforce_margin(theta);
        }

        let mut risk = self.risk(&theta);
        let mut trace = vec![TraceRow {
            iteration: 0,
            risk,
            min_slack: self.min_slack(&theta),
        }];
        let mut converged = false;
        let mut iterations = 0;

        while iterations < self.max_iterations {
            let (grad, hess) = self.derivatives(&theta);
            let direction = solve_qp(&hess, &grad, &self.constraints, &theta);
            let slope = dot(&grad, &direction);
            if !(slope < 0.0) || slope.abs() <= 1e-15 * risk.abs().max(1e-12) {
                converged = true;
                break;
            }
            let Some((next, next_risk)) = self.line_search(&theta, &direction, risk, slope) else {
                converged = true;
                break;
            };
            iterations += 1;
            let change = (risk - next_risk).abs();
            theta = next;
            let previous = risk;
            risk = next_risk;
            trace.push(TraceRow {
                iteration: iterations,
                risk,
                min_slack: self.min_slack(&theta),
            });
            if change <= self.relative_tolerance * previous.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }

        let theta = self.enforce_margin(theta);
        let final_risk = self.risk(&theta);
        let scale = 1.0 + theta.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let active_constraints = self
            .constraints
            .iter()
            .filter(|c| c.slack(&theta) <= 1e-9 * scale)
            .map(|c| c.kind)
            .collect();
        let clamped = self
            .features
            .iter()
            .filter(|x| dot(&theta, x).abs() >= self.bound)
            .count();
        let clamped_fraction = clamped as f64 / self.features.len() as f64;
        if clamped_fraction > 0.01 {
            log::warn!(
                "{:?} fit: {:.1}% of pairs sit at the probability clamp",
                self.template.family,
                100.0 * clamped_fraction
            );
        }
        FitResult {
            params: self.template.with_theta(theta),
            final_risk,
            iterations,
            converged,
            active_constraints,
            clamped_fraction,
            trace,
        }
    }

    fn risk(&self, theta: &[f64; 3]) -> f64 {
        let total: f64 = self
            .features
            .iter()
            .zip(self.targets)
            .map(|(x, &t)| loss_at_logit(dot(theta, x), t, self.bound))
            .sum();
        total / self.features.len() as f64
    }

    /// Gradient and (damped) Hessian of the risk. Pairs outside the logit
    /// clamp contribute nothing.
    fn derivatives(&self, theta: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (x, &t) in self.features.iter().zip(self.targets) {
            let z = dot(theta, x);
            if z.abs() >= self.bound {
                continue;
            }
            let p = sigmoid(z);
            let residual = p - t;
            let curvature = p * (1.0 - p);
            for i in 0..3 {
                grad[i] += residual * x[i];
                for j in 0..=i {
                    hess[i][j] += curvature * x[i] * x[j];
                }
            }
        }
        let n = self.features.len() as f64;
        for i in 0..3 {
            grad[i] /= n;
            for j in 0..=i {
                hess[i][j] /= n;
                hess[j][i] = hess[i][j];
            }
        }
        let trace = hess[0][0] + hess[1][1] + hess[2][2];
        let damping = 1e-10 * (trace / 3.0) + 1e-14;
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] += damping;
        }
        if self.fix_a {
            grad[0] = 0.0;
            hess[0] = [1.0, 0.0, 0.0];
            hess[1][0] = 0.0;
            hess[2][0] = 0.0;
        }
        (grad, hess)
    }

    fn line_search(
        &self,
        theta: &[f64; 3],
        direction: &[f64; 3],
        risk: f64,
        slope: f64,
    ) -> Option<([f64; 3], f64)> {
        let mut step = 1.0;
        while step >= 1e-12 {
            let candidate = add(theta, direction, step);
            let r = self.risk(&candidate);
            if r.is_finite() && r <= risk + 1e-4 * step * slope {
                return Some((candidate, r));
            }
            step *= 0.5;
        }
        None
    }

    fn min_slack(&self, theta: &[f64; 3]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.slack(theta))
            .fold(f64::INFINITY, f64::min)
    }

    /// Removes rounding-level constraint violations.
    fn enforce_margin(&self, mut theta: [f64; 3]) -> [f64; 3] {
        if self.fix_a {
            theta[0] = 0.0;
        }
        if self.template.family == ParametricFamily::Beta {
            theta[0] = theta[0].max(0.0);
            theta[1] = theta[1].max(0.0);
        }
        // `b` has coefficient 1 in every remaining constraint.
        for _ in 0..64 {
            let slack = self.min_slack(&theta);
            if slack >= 0.0 {
                break;
            }
            let bump = (-slack).max(4.0 * f64::EPSILON * theta[1].abs().max(MONOTONE_MARGIN));
            theta[1] += bump;
        }
        theta
    }
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn add(a: &[f64; 3], d: &[f64; 3], step: f64) -> [f64; 3] {
    [a[0] + step * d[0], a[1] + step * d[1], a[2] + step * d[2]]
}

/// Minimizes `g.d + d'Hd/2` subject to `c.(theta + d) >= rhs` for every constraint.
///
/// With at most three constraints every active set is enumerated; the
/// equality-constrained minimizer of the true active set is feasible and no
/// other feasible candidate can beat it, so the cheapest feasible candidate is
/// the solution.
fn solve_qp(
    hess: &[[f64; 3]; 3],
    grad: &[f64; 3],
    cons: &[LinearConstraint],
    theta: &[f64; 3],
) -> [f64; 3] {
    let required: Vec<f64> = cons.iter().map(|c| -c.slack(theta)).collect();
    let objective = |d: &[f64; 3]| {
        let mut q = dot(grad, d);
        for i in 0..3 {
            for j in 0..3 {
                q += 0.5 * d[i] * hess[i][j] * d[j];
            }
        }
        q
    };
    let feasible = |d: &[f64; 3]| {
        cons.iter().zip(&required).all(|(c, &r)| {
            let lhs = dot(&c.coef, d);
            lhs >= r - 1e-12 * (1.0 + r.abs() + lhs.abs())
        })
    };

    let mut best: Option<([f64; 3], f64)> = None;
    for mask in 0u32..(1 << cons.len()) {
        let active: Vec<usize> = (0..cons.len()).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > 3 {
            continue;
        }
        let Some(d) = solve_kkt(hess, grad, cons, &required, &active) else {
            continue;
        };
        if !feasible(&d) {
            continue;
        }
        let q = objective(&d);
        if best.is_none_or(|(_, bq)| q < bq) {
            best = Some((d, q));
        }
    }
    best.map_or([0.0; 3], |(d, _)| d)
}

fn solve_kkt(
    hess: &[[f64; 3]; 3],
    grad: &[f64; 3],
    cons: &[LinearConstraint],
    required: &[f64],
    active: &[usize],
) -> Option<[f64; 3]> {
    let m = active.len();
    let n = 3 + m;
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..3 {
        for j in 0..3 {
            k[(i, j)] = hess[i][j];
        }
        rhs[i] = -grad[i];
    }
    for (r, &ci) in active.iter().enumerate() {
        for j in 0..3 {
            k[(3 + r, j)] = cons[ci].coef[j];
            k[(j, 3 + r)] = -cons[ci].coef[j];
        }
        rhs[3 + r] = required[ci];
    }
    let sol = k.lu().solve(&rhs)?;
    let d = [sol[0], sol[1], sol[2]];
    d.iter().all(|v| v.is_finite()).then_some(d)
}
