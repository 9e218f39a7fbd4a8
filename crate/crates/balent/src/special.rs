//! Log-gamma, digamma, and Beta-distribution primitives.
//!
//! Everything here is implemented directly on f64 so the numeric core has no
//! external dependencies. `ln_gamma` shifts its argument upward by the
//! recurrence and finishes with a Stirling series; `digamma` does the same
//! with its own asymptotic series. Both are accurate to well below the 1e-10
//! recurrence tolerance asserted in the tests.

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Stirling-series coefficients for ln Γ: B₂ₙ / (2n(2n−1)).
const LN_GAMMA_COEF: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// Asymptotic-series coefficients for ψ: B₂ₙ / (2n).
const DIGAMMA_COEF: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

fn ln_gamma_raw(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift += z.ln();
        z += 1.0;
    }
    let inv2 = (1.0 / z) * (1.0 / z);
    let mut series = 0.0;
    let mut pow = 1.0 / z;
    for c in LN_GAMMA_COEF {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + LN_SQRT_2PI + series - shift
}

fn digamma_raw(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    let mut z = x;
    while z < 6.0 {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv2 = (1.0 / z) * (1.0 / z);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_COEF {
        series += c * pow;
        pow *= inv2;
    }
    z.ln() - 0.5 / z - series - shift
}

/// Natural log of the gamma function.
///
/// # Example
///
/// ```
/// let v = balent::special::ln_gamma(10.0).unwrap();
/// assert!((v - 362880f64.ln()).abs() < 1e-12);
/// ```
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Validation(format!("ln_gamma: x must be positive and finite, got {x}")));
    }
    Ok(ln_gamma_raw(x))
}

/// Digamma function ψ(x), the derivative of `ln_gamma`.
pub fn digamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Validation(format!("digamma: x must be positive and finite, got {x}")));
    }
    Ok(digamma_raw(x))
}

/// Natural log of the Beta function, ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a+b).
pub fn ln_beta_fn(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || a <= 0.0 || !b.is_finite() || b <= 0.0 {
        return Err(Error::Validation(format!(
            "ln_beta_fn: parameters must be positive and finite, got ({a}, {b})"
        )));
    }
    Ok(ln_beta_raw(a, b))
}

fn ln_beta_raw(a: f64, b: f64) -> f64 {
    ln_gamma_raw(a) + ln_gamma_raw(b) - ln_gamma_raw(a + b)
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// erf by its positive power series; accurate and cancellation-free for |x| < 3.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2 * n + 1) as f64;
        let next = sum + term;
        if next == sum || n > 200 {
            break;
        }
        sum = next;
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// erfc by the asymptotic expansion, for z ≥ 3; truncated at the smallest term.
fn erfc_asymptotic(z: f64) -> f64 {
    let z2 = z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    loop {
        n += 1;
        let next_term = -term * (2 * n - 1) as f64 / (2.0 * z2);
        if next_term.abs() >= term.abs() || n > 60 {
            break;
        }
        term = next_term;
        sum += term;
    }
    (-z2).exp() / (z * std::f64::consts::PI.sqrt()) * sum
}

fn erfc(z: f64) -> f64 {
    if z < 0.0 {
        2.0 - erfc(-z)
    } else if z < 3.0 {
        1.0 - erf_series(z)
    } else {
        erfc_asymptotic(z)
    }
}

/// Standard normal cumulative distribution function Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Parameters of a Beta(α, β) distribution. Construction validates that both
/// are finite and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Validation(format!(
                "beta params must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(BetaParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Clamp floors applied before moment matching, so that degenerate sample sets
/// (all-identical values, exact 0/1 masses) still map to valid parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentClamps {
    /// Mean is clamped into [eps_mean, 1 − eps_mean].
    pub eps_mean: f64,
    /// Variance floor.
    pub eps_var: f64,
    /// Variance is capped at μ(1−μ)·(1 − eps_var_rel), keeping α, β > 0.
    pub eps_var_rel: f64,
}

impl Default for MomentClamps {
    fn default() -> Self {
        MomentClamps { eps_mean: 1e-6, eps_var: 1e-10, eps_var_rel: 1e-9 }
    }
}

/// Fits Beta(α, β) to samples in [0, 1] by moment matching.
///
/// Uses the population variance (divisor m). With the clamps inactive the
/// fitted mean equals the sample mean exactly.
///
/// # Example
///
/// ```
/// use balent::special::{beta_mean, fit_beta_moments, MomentClamps};
/// // two-point sample with mean 0.5 and variance 1/12, the uniform moments
/// let d = (1.0f64 / 12.0).sqrt();
/// let p = fit_beta_moments(&[0.5 - d, 0.5 + d], &MomentClamps::default()).unwrap();
/// assert!((p.alpha() - 1.0).abs() < 1e-9 && (p.beta() - 1.0).abs() < 1e-9);
/// ```
pub fn fit_beta_moments(samples: &[f64], clamps: &MomentClamps) -> Result<BetaParams> {
    if samples.len() < 2 {
        return Err(Error::Validation(format!(
            "fit_beta_moments: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    for &s in samples {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Validation(format!(
                "fit_beta_moments: sample {s} outside [0, 1]"
            )));
        }
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / m;

    let mu = mean.clamp(clamps.eps_mean, 1.0 - clamps.eps_mean);
    let cap = mu * (1.0 - mu) * (1.0 - clamps.eps_var_rel);
    let v = var.clamp(clamps.eps_var, cap);

    let kappa = mu * (1.0 - mu) / v - 1.0;
    BetaParams::new(mu * kappa, (1.0 - mu) * kappa)
}

/// Mean α / (α + β).
pub fn beta_mean(p: &BetaParams) -> f64 {
    p.alpha / (p.alpha + p.beta)
}

/// Differential entropy of Beta(α, β) in nats:
///
/// h = ln B(α, β) − (α−1)ψ(α) − (β−1)ψ(β) + (α+β−2)ψ(α+β)
///
/// Never positive; zero exactly at the uniform distribution (1, 1).
pub fn beta_diff_entropy(p: &BetaParams) -> f64 {
    let (a, b) = (p.alpha, p.beta);
    ln_beta_raw(a, b) - (a - 1.0) * digamma_raw(a) - (b - 1.0) * digamma_raw(b)
        + (a + b - 2.0) * digamma_raw(a + b)
}

/// Conjugate single-observation update: Beta(α, β) → Beta(α + 1, β).
pub fn posterior_of(p: &BetaParams) -> BetaParams {
    BetaParams { alpha: p.alpha + 1.0, beta: p.beta }
}
