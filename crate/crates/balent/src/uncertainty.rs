//! Per-pixel uncertainty from `m` stochastic softmax samples.
//!
//! Each class's marginal sample set gets a Beta(α, β) fitted by moments. The
//! scalar measures, all in nats:
//!
//! - `shannon`: entropy of the mean probability vector (the fitted Beta
//!   means, renormalized to sum to 1)
//! - `epistemic` / `aleatoric`: mutual-information split of the sample
//!   entropy, H(mean column) = epistemic + mean column entropy
//! - `posterior_u`: Σᵢ 𝔼Pᵢ · h(Beta(αᵢ+1, βᵢ)), the expected differential
//!   entropy after observing one more success per class; never positive
//! - `mjent`: posterior_u + shannon
//! - `balent`: mjent / (shannon + ln 2); strictly below 1, and negative
//!   exactly when the posterior term outweighs the Shannon term
//!
//! `epistemic` and `aleatoric` come from the sample columns directly, so a
//! cube with identical slices (dropout rate 0) reports epistemic ≈ 0 even
//! when the mean clamps are active.

use crate::error::{Error, Result};
use crate::special::{
    beta_diff_entropy, beta_mean, fit_beta_moments, posterior_of, BetaParams, MomentClamps,
};

const LN_2: f64 = std::f64::consts::LN_2;

/// Tolerance for a probability vector summing to one.
pub const PROB_SUM_TOL: f64 = 1e-4;

/// Negative epistemic values within this of zero are rounding, clamped to 0.
pub const EPISTEMIC_CLAMP: f64 = 1e-12;

/// Shannon entropy −Σ p ln p in nats, with 0·ln 0 = 0.
///
/// Rejects negative or NaN components and vectors whose sum strays from 1 by
/// more than [`PROB_SUM_TOL`].
pub fn shannon_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Validation("shannon_entropy: empty probability vector".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p >= 0.0) {
            return Err(Error::Validation(format!(
                "shannon_entropy: component {p} is negative or NaN"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Validation(format!(
            "shannon_entropy: components sum to {sum}, expected 1 within {PROB_SUM_TOL}"
        )));
    }
    Ok(entropy_unchecked(probs))
}

fn entropy_unchecked(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
}

fn check_layout(samples: &[f64], num_classes: usize) -> Result<usize> {
    if num_classes == 0 || samples.is_empty() || samples.len() % num_classes != 0 {
        return Err(Error::Validation(format!(
            "pixel samples: {} values do not form a [{num_classes}, m] matrix",
            samples.len()
        )));
    }
    Ok(samples.len() / num_classes)
}

/// Splits the entropy of a `[C, m]` sample matrix (sample axis fastest) into
/// `(epistemic, aleatoric)`:
///
/// - aleatoric = (1/m) Σⱼ H(column j)
/// - epistemic = H(mean column) − aleatoric
///
/// Jensen's inequality makes epistemic non-negative up to rounding; values in
/// (−[`EPISTEMIC_CLAMP`], 0) are clamped to 0.
pub fn decompose_entropy(samples: &[f64], num_classes: usize) -> Result<(f64, f64)> {
    let m = check_layout(samples, num_classes)?;
    let mut mean = vec![0.0; num_classes];
    let mut aleatoric = 0.0;
    let mut column = vec![0.0; num_classes];
    for j in 0..m {
        for c in 0..num_classes {
            column[c] = samples[c * m + j];
        }
        aleatoric += shannon_entropy(&column)
            .map_err(|e| Error::Validation(format!("sample column {j}: {e}")))?;
        for c in 0..num_classes {
            mean[c] += column[c];
        }
    }
    aleatoric /= m as f64;
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut epistemic = entropy_unchecked(&mean) - aleatoric;
    if epistemic < 0.0 && epistemic > -EPISTEMIC_CLAMP {
        epistemic = 0.0;
    }
    Ok((epistemic, aleatoric))
}

/// Fits one Beta per class to the `[C, m]` sample matrix.
pub fn fit_pixel(
    samples: &[f64],
    num_classes: usize,
    clamps: &MomentClamps,
) -> Result<Vec<BetaParams>> {
    let m = check_layout(samples, num_classes)?;
    (0..num_classes)
        .map(|c| fit_beta_moments(&samples[c * m..(c + 1) * m], clamps))
        .collect()
}

/// Fitted Beta means scaled to sum to exactly 1.
pub fn renormalized_means(params: &[BetaParams]) -> Vec<f64> {
    let raw: Vec<f64> = params.iter().map(beta_mean).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Σᵢ beta_mean(pᵢ) · h(posterior_of(pᵢ)). Each differential entropy is ≤ 0
/// and each weight positive, so the result is never positive.
pub fn posterior_uncertainty(params: &[BetaParams]) -> f64 {
    params.iter().map(|p| beta_mean(p) * beta_diff_entropy(&posterior_of(p))).sum()
}

/// posterior_uncertainty + Shannon entropy of the renormalized means.
pub fn mjent(params: &[BetaParams]) -> f64 {
    posterior_uncertainty(params) + entropy_unchecked(&renormalized_means(params))
}

/// mjent / (shannon + ln 2). Always below 1; negative when the posterior
/// Beta entropies dominate, which marks pixels whose uncertainty is already
/// "spent" (confidently predictable or hopelessly noisy).
pub fn balent(params: &[BetaParams]) -> f64 {
    let shannon = entropy_unchecked(&renormalized_means(params));
    (posterior_uncertainty(params) + shannon) / (shannon + LN_2)
}

/// Every per-pixel uncertainty measure, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyRecord {
    pub shannon: f64,
    pub epistemic: f64,
    pub aleatoric: f64,
    pub posterior_u: f64,
    pub mjent: f64,
    pub balent: f64,
}

/// Computes the full record for one pixel's `[C, m]` sample matrix.
pub fn record_for_pixel(
    samples: &[f64],
    num_classes: usize,
    clamps: &MomentClamps,
) -> Result<UncertaintyRecord> {
    let (epistemic, aleatoric) = decompose_entropy(samples, num_classes)?;
    let params = fit_pixel(samples, num_classes, clamps)?;
    let shannon = entropy_unchecked(&renormalized_means(&params));
    let posterior_u = posterior_uncertainty(&params);
    let mjent = posterior_u + shannon;
    let balent = mjent / (shannon + LN_2);
    Ok(UncertaintyRecord { shannon, epistemic, aleatoric, posterior_u, mjent, balent })
}
