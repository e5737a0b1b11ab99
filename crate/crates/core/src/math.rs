//! Scalar helpers shared by the calibrators and losses.

/// Lower/upper bound applied to probabilities inside log-losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy with a soft target `t`, after clamping `p`.
///
/// `t` may exceed 1 (inverse-propensity-weighted labels); the expression is
/// then still `-t ln p - (1 - t) ln(1 - p)`.
#[inline]
pub fn log_loss(p: f64, t: f64) -> f64 {
    let p = clamp_prob(p);
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}
