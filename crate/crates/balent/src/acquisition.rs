//! Acquisition scoring and pixel selection.
//!
//! Scores are "larger is queried first" throughout. `balent_acq` inverts
//! positive balanced-entropy values so pixels closest to balent = 0 rank
//! highest, keeps negative values as-is, and maps near-zero positives to a
//! `+inf` sentinel that ranks first. Ties, including between sentinels, are
//! broken by a seeded shuffle applied before the stable sort.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::special::normal_cdf;
use crate::tensorio::{LabelMap, ScoreMap, SelectionEntry, SelectionList};
use crate::uncertainty::UncertaintyRecord;

/// The six acquisition functions. String forms are the exact CLI names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcquisitionKind {
    BalentAcq,
    Bald,
    PowerBald,
    Margin,
    Entropy,
    Random,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 6] = [
        AcquisitionKind::BalentAcq,
        AcquisitionKind::Bald,
        AcquisitionKind::PowerBald,
        AcquisitionKind::Margin,
        AcquisitionKind::Entropy,
        AcquisitionKind::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AcquisitionKind::BalentAcq => "balent_acq",
            AcquisitionKind::Bald => "bald",
            AcquisitionKind::PowerBald => "power_bald",
            AcquisitionKind::Margin => "margin",
            AcquisitionKind::Entropy => "entropy",
            AcquisitionKind::Random => "random",
        }
    }
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AcquisitionKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown acquisition {s:?}; expected one of balent_acq, bald, power_bald, margin, entropy, random"
                ))
            })
    }
}

/// Knobs shared by the scoring functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    /// Exponent for power_bald: score = gamma·ln(BALD) + Gumbel(0,1).
    pub gamma: f64,
    /// Positive balent values below this map to the +inf sentinel.
    pub eps_zero: f64,
    /// Floor inside power_bald's logarithm.
    pub eps_log: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams { gamma: 1.0, eps_zero: 1e-12, eps_log: 1e-30 }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Validation(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.eps_zero > 0.0) || !(self.eps_log > 0.0) {
            return Err(Error::Validation("eps_zero and eps_log must be positive".into()));
        }
        Ok(())
    }
}

/// Maps a balanced-entropy value to its acquisition score:
///
/// - `v ≥ eps_zero` → 1/v (closer to balent 0 ranks higher)
/// - `0 ≤ v < eps_zero` → `+inf`, the rank-first sentinel
/// - `v < 0` → v unchanged
///
/// So for any 0 ≤ a < b the score of `a` exceeds the score of `b`, and every
/// negative value ranks below every non-negative one.
pub fn balent_acq(balent_value: f64, eps_zero: f64) -> Result<f64> {
    if !balent_value.is_finite() {
        return Err(Error::Validation(format!("balent_acq: non-finite input {balent_value}")));
    }
    Ok(if balent_value < 0.0 {
        balent_value
    } else if balent_value < eps_zero {
        f64::INFINITY
    } else {
        1.0 / balent_value
    })
}

/// One standard Gumbel(0, 1) draw.
fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Scores one pixel's record under the given acquisition.
///
/// `margin` is handled at selection level (see [`margin_select`]) because it
/// needs the mean probability vector, which the record does not carry;
/// passing it here is an error.
pub fn score_pixel(
    kind: AcquisitionKind,
    params: &ScoreParams,
    record: &UncertaintyRecord,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    params.validate()?;
    match kind {
        AcquisitionKind::BalentAcq => balent_acq(record.balent, params.eps_zero),
        AcquisitionKind::Bald => Ok(record.epistemic),
        AcquisitionKind::PowerBald => {
            Ok(params.gamma * record.epistemic.max(params.eps_log).ln() + gumbel(rng))
        }
        AcquisitionKind::Entropy => Ok(record.shannon),
        AcquisitionKind::Random => Ok(rng.gen::<f64>()),
        AcquisitionKind::Margin => Err(Error::Validation(
            "margin is handled at selection level; score_pixel cannot compute it".into(),
        )),
    }
}

fn unlabeled_pixels(labeled: &LabelMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for row in 0..labeled.height() {
        for col in 0..labeled.width() {
            if !labeled.is_labeled(row, col) {
                out.push((row, col));
            }
        }
    }
    out
}

fn take_selection(
    mut ranked: Vec<(usize, usize)>,
    n: usize,
    image_id: &str,
    cycle: usize,
) -> Result<SelectionList> {
    ranked.truncate(n);
    let mut list = SelectionList::new();
    for (row, col) in ranked {
        list.push(SelectionEntry { image_id: image_id.to_string(), row, col, cycle })?;
    }
    Ok(list)
}

/// Picks the `n` unlabeled pixels with the largest scores. Already-labeled
/// pixels are never selected; if fewer than `n` remain, all of them are
/// returned. Equal scores are ordered by the seeded shuffle, so reruns with
/// the same seed reproduce the selection exactly.
pub fn select_top_n(
    scores: &ScoreMap,
    labeled: &LabelMap,
    n: usize,
    rng: &mut ChaCha8Rng,
    image_id: &str,
    cycle: usize,
) -> Result<SelectionList> {
    if n == 0 {
        return Err(Error::Validation("select_top_n: n must be at least 1".into()));
    }
    if scores.height() != labeled.height() || scores.width() != labeled.width() {
        return Err(Error::Validation(format!(
            "select_top_n: score map is {}x{} but label map is {}x{}",
            scores.height(),
            scores.width(),
            labeled.height(),
            labeled.width()
        )));
    }
    let mut candidates = unlabeled_pixels(labeled);
    candidates.shuffle(rng);
    candidates.sort_by(|a, b| {
        scores.score(b.0, b.1).partial_cmp(&scores.score(a.0, a.1)).expect("scores are never NaN")
    });
    take_selection(candidates, n, image_id, cycle)
}

/// Margin acquisition: uniformly samples `pool_factor·n` distinct unlabeled
/// pixels (or all, if fewer remain), then keeps the `n` with the smallest
/// margin `max 𝔼P − second-max 𝔼P`. `means` holds one mean probability
/// vector per pixel in row-major order.
pub fn margin_select(
    means: &[Vec<f64>],
    labeled: &LabelMap,
    n: usize,
    pool_factor: usize,
    rng: &mut ChaCha8Rng,
    image_id: &str,
    cycle: usize,
) -> Result<SelectionList> {
    if n == 0 || pool_factor == 0 {
        return Err(Error::Validation("margin_select: n and pool_factor must be at least 1".into()));
    }
    if means.len() != labeled.height() * labeled.width() {
        return Err(Error::Validation(format!(
            "margin_select: {} mean vectors for a {}x{} label map",
            means.len(),
            labeled.height(),
            labeled.width()
        )));
    }
    let mut candidates = unlabeled_pixels(labeled);
    // the shuffle both draws the uniform pool and pre-breaks sorting ties
    candidates.shuffle(rng);
    candidates.truncate(pool_factor.saturating_mul(n));
    let margin_of = |&(row, col): &(usize, usize)| -> Result<f64> {
        let m = means[row * labeled.width() + col].as_slice();
        if m.len() < 2 {
            return Err(Error::Validation("margin needs at least 2 classes".into()));
        }
        let (mut best, mut second) = (f64::MIN, f64::MIN);
        for &v in m {
            if v > best {
                second = best;
                best = v;
            } else if v > second {
                second = v;
            }
        }
        Ok(best - second)
    };
    let mut margins = Vec::with_capacity(candidates.len());
    for px in &candidates {
        margins.push(margin_of(px)?);
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| margins[i].partial_cmp(&margins[j]).expect("margins are finite"));
    let ranked: Vec<(usize, usize)> = order.into_iter().map(|i| candidates[i]).collect();
    take_selection(ranked, n, image_id, cycle)
}

/// Display transform Φ(balent)/100, mapping records to a [0, 0.01] heat map.
/// Visualization only; never used for selection.
pub fn export_balent_map(
    records: &[UncertaintyRecord],
    height: usize,
    width: usize,
) -> Result<ScoreMap> {
    if records.len() != height * width {
        return Err(Error::Validation(format!(
            "export_balent_map: {} records for a {height}x{width} map",
            records.len()
        )));
    }
    let scores = records.iter().map(|r| normal_cdf(r.balent) / 100.0).collect();
    ScoreMap::new(height, width, None, scores)
}
