//! Evaluation metrics for segmentation runs: per-class IoU, selection
//! diversity, and trajectory normalization.

use crate::error::{Error, Result};
use crate::tensorio::{LabelMap, SelectionList};

/// Intersection-over-union per class plus their mean.
///
/// `per_class[c]` is `None` when class `c` appears in neither prediction nor
/// ground truth (the ratio is 0/0); such classes are excluded from the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

fn confusion_counts(
    pred: &LabelMap,
    truth: &LabelMap,
    inter: &mut [u64],
    pred_n: &mut [u64],
    truth_n: &mut [u64],
) -> Result<()> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::Validation(format!(
            "miou: prediction is {}x{} but truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    if pred.num_classes() != truth.num_classes() {
        return Err(Error::Validation(format!(
            "miou: prediction has {} classes but truth has {}",
            pred.num_classes(),
            truth.num_classes()
        )));
    }
    let c = truth.num_classes();
    for row in 0..truth.height() {
        for col in 0..truth.width() {
            let t = truth.label(row, col);
            if t == c {
                continue; // unlabeled ground truth is excluded
            }
            let p = pred.label(row, col);
            if p == c {
                return Err(Error::Validation(format!(
                    "miou: prediction is unlabeled at ({row}, {col})"
                )));
            }
            truth_n[t as usize] += 1;
            pred_n[p as usize] += 1;
            if p == t {
                inter[p as usize] += 1;
            }
        }
    }
    Ok(())
}

fn report_from_counts(inter: &[u64], pred_n: &[u64], truth_n: &[u64]) -> Result<IouReport> {
    let mut per_class = Vec::with_capacity(inter.len());
    let (mut sum, mut present) = (0.0, 0usize);
    for c in 0..inter.len() {
        let union = pred_n[c] + truth_n[c] - inter[c];
        if union == 0 {
            per_class.push(None);
            continue;
        }
        let iou = inter[c] as f64 / union as f64;
        per_class.push(Some(iou));
        sum += iou;
        present += 1;
    }
    if present == 0 {
        return Err(Error::Validation("miou: no class present in any pixel".into()));
    }
    Ok(IouReport { per_class, mean: sum / present as f64 })
}

/// Mean intersection-over-union of one prediction against ground truth.
pub fn miou(pred: &LabelMap, truth: &LabelMap) -> Result<IouReport> {
    miou_aggregate(&[(pred, truth)])
}

/// mIoU over several images, accumulating one confusion across all of them
/// rather than averaging per-image scores.
pub fn miou_aggregate(pairs: &[(&LabelMap, &LabelMap)]) -> Result<IouReport> {
    let Some((_, first_truth)) = pairs.first() else {
        return Err(Error::Validation("miou: no image pairs given".into()));
    };
    let c = first_truth.num_classes() as usize;
    let (mut inter, mut pred_n, mut truth_n) = (vec![0u64; c], vec![0u64; c], vec![0u64; c]);
    for (pred, truth) in pairs {
        confusion_counts(pred, truth, &mut inter, &mut pred_n, &mut truth_n)?;
    }
    report_from_counts(&inter, &pred_n, &truth_n)
}

/// Mean pairwise Euclidean pixel distance of the selections made at `cycle`,
/// averaged over images; images contributing fewer than two pixels that cycle
/// are skipped. `None` when no image has two.
pub fn avg_pair_distance(selections: &SelectionList, cycle: usize) -> Option<f64> {
    let mut by_image: Vec<(&str, Vec<(usize, usize)>)> = Vec::new();
    for e in selections.entries() {
        if e.cycle != cycle {
            continue;
        }
        match by_image.iter_mut().find(|(id, _)| *id == e.image_id) {
            Some((_, v)) => v.push((e.row, e.col)),
            None => by_image.push((&e.image_id, vec![(e.row, e.col)])),
        }
    }
    let (mut sum, mut images) = (0.0, 0usize);
    for (_, px) in &by_image {
        if px.len() < 2 {
            continue;
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..px.len() {
            for j in i + 1..px.len() {
                let dr = px[i].0 as f64 - px[j].0 as f64;
                let dc = px[i].1 as f64 - px[j].1 as f64;
                total += (dr * dr + dc * dc).sqrt();
                pairs += 1;
            }
        }
        sum += total / pairs as f64;
        images += 1;
    }
    (images > 0).then(|| sum / images as f64)
}

/// Number of distinct oracle labels among the pixels selected at `cycle`,
/// averaged per image. `None` when the cycle selected nothing.
pub fn avg_unique_labels<F>(selections: &SelectionList, oracle: F, cycle: usize) -> Option<f64>
where
    F: Fn(&str, usize, usize) -> u32,
{
    let mut by_image: Vec<(&str, Vec<u32>)> = Vec::new();
    for e in selections.entries() {
        if e.cycle != cycle {
            continue;
        }
        let label = oracle(&e.image_id, e.row, e.col);
        match by_image.iter_mut().find(|(id, _)| *id == e.image_id) {
            Some((_, v)) => v.push(label),
            None => by_image.push((&e.image_id, vec![label])),
        }
    }
    if by_image.is_empty() {
        return None;
    }
    let sum: f64 = by_image
        .iter()
        .map(|(_, labels)| {
            let mut distinct = labels.clone();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len() as f64
        })
        .sum();
    Some(sum / by_image.len() as f64)
}

/// Divides a trajectory by the magnitude of its first value so curves with
/// different scales can share an axis. Returns the raw values and `false`
/// when the first value is too small to divide by.
pub fn normalize_trajectory(values: &[f64]) -> (Vec<f64>, bool) {
    match values.first() {
        Some(&c0) if c0.abs() >= 1e-15 => {
            (values.iter().map(|v| v / c0.abs()).collect(), true)
        }
        _ => (values.to_vec(), false),
    }
}
