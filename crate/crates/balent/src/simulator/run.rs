//! The active-learning loop: label, train, score, select, repeat.
//!
//! Images are split into a training pool and a held-out validation set.
//! Cycle 0 seeds the labeled set with `n` uniformly random pixels per pool
//! image. Every cycle then trains on the labeled pixels, reports validation
//! mIoU, runs MC-dropout inference over the pool, and queries the next `n`
//! pixels per image with the configured acquisition. Queried pixels join the
//! labeled set at the start of the following cycle, so metrics row `k`
//! carries the model trained at cycle `k` together with the query that model
//! made. Every random stream is derived from the base seed, the stream tag,
//! and the cycle/image indices, so a run is reproducible end to end and the
//! dataset does not depend on the acquisition under test.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{generate_dataset, DatasetConfig, SyntheticDataset};
use super::metrics::{
    avg_pair_distance, avg_unique_labels, miou_aggregate, normalize_trajectory, IouReport,
};
use super::model::{mc_forward, train, ToyModel, TrainConfig};
use super::{derive_seed, seed_stream};
use crate::acquisition::{margin_select, score_pixel, select_top_n, AcquisitionKind, ScoreParams};
use crate::error::{Error, Result};
use crate::special::MomentClamps;
use crate::tensorio::{LabelMap, ScoreMap, SelectionEntry, SelectionList};
use crate::uncertainty::{fit_pixel, record_for_pixel, renormalized_means, UncertaintyRecord};

/// One labeled pixel: image index, position, oracle class, and the cycle at
/// which it joined the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledEntry {
    pub image: usize,
    pub row: usize,
    pub col: usize,
    pub label: u32,
    pub cycle: usize,
}

/// The labeled set D_L. Duplicate pixels are rejected; in the loop every
/// label comes from [`oracle_label`], so entries match the ground truth.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    entries: Vec<LabeledEntry>,
    seen: HashSet<(usize, usize, usize)>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        image: usize,
        row: usize,
        col: usize,
        label: u32,
        cycle: usize,
    ) -> Result<()> {
        if !self.seen.insert((image, row, col)) {
            return Err(Error::Validation(format!(
                "pixel ({row}, {col}) of image {image} is already labeled"
            )));
        }
        self.entries.push(LabeledEntry { image, row, col, label, cycle });
        Ok(())
    }

    pub fn entries(&self) -> &[LabeledEntry] {
        &self.entries
    }

    pub fn contains(&self, image: usize, row: usize, col: usize) -> bool {
        self.seen.contains(&(image, row, col))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Stable identifier of image `index` in selection logs.
pub fn image_id(index: usize) -> String {
    format!("img{index:03}")
}

fn parse_image_id(id: &str) -> Option<usize> {
    id.strip_prefix("img").and_then(|digits| digits.parse().ok())
}

/// Ground-truth class of one pixel, the stand-in for a human annotator.
pub fn oracle_label(
    data: &SyntheticDataset,
    image_id: &str,
    row: usize,
    col: usize,
) -> Result<u32> {
    let index = parse_image_id(image_id)
        .ok_or_else(|| Error::Validation(format!("unknown image id {image_id:?}")))?;
    let truth = data
        .truth
        .get(index)
        .ok_or_else(|| Error::Validation(format!("image id {image_id:?} is out of range")))?;
    if row >= truth.height() || col >= truth.width() {
        return Err(Error::Validation(format!(
            "pixel ({row}, {col}) is outside the {}x{} image {image_id}",
            truth.height(),
            truth.width()
        )));
    }
    Ok(truth.label(row, col))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ALConfig {
    pub dataset: DatasetConfig,
    pub acquisition: AcquisitionKind,
    /// Pixels queried per image per cycle (n).
    pub pixels_per_image: usize,
    /// MC-dropout passes per inference (m).
    pub mc_samples: usize,
    /// Dropout rate of the model (r).
    pub dropout_rate: f64,
    /// Number of AL cycles (K_tot).
    pub cycles: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    /// Fraction of images held out for validation mIoU.
    pub val_fraction: f64,
    /// Keep training the same weights across cycles instead of re-training
    /// from a fresh initialization.
    pub warm_start: bool,
    /// Candidate pool multiplier for the margin acquisition.
    pub pool_factor: usize,
    pub clamps: MomentClamps,
    pub score: ScoreParams,
    pub seed: u64,
}

impl Default for ALConfig {
    fn default() -> Self {
        ALConfig {
            dataset: DatasetConfig::default(),
            acquisition: AcquisitionKind::BalentAcq,
            pixels_per_image: 5,
            mc_samples: 20,
            dropout_rate: 0.2,
            cycles: 10,
            epochs: 300,
            learning_rate: 0.5,
            hidden_dim: 48,
            val_fraction: 0.2,
            warm_start: false,
            pool_factor: 10,
            clamps: MomentClamps::default(),
            score: ScoreParams::default(),
            seed: 0,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.score.validate()?;
        if self.pixels_per_image == 0 {
            return Err(Error::Validation("pixels_per_image must be at least 1".into()));
        }
        if self.mc_samples < 2 {
            return Err(Error::Validation(format!(
                "mc_samples must be at least 2, got {}",
                self.mc_samples
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Validation(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.cycles == 0 {
            return Err(Error::Validation("cycles must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Validation("hidden_dim must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.dataset.num_images < 2 {
            return Err(Error::Validation(
                "at least 2 images are needed to split off a validation set".into(),
            ));
        }
        if self.pool_factor == 0 {
            return Err(Error::Validation("pool_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// (pool image count, validation image count); validation images are the
    /// trailing ones.
    pub fn split_counts(&self) -> (usize, usize) {
        let n = self.dataset.num_images;
        let val = ((n as f64 * self.val_fraction).round() as usize).clamp(1, n - 1);
        (n - val, val)
    }
}

/// Evaluation row for one cycle. The query statistics describe the pixels
/// queried *at* this cycle (they join the labeled set a cycle later) and are
/// absent when the pool ran dry. Normalized trajectories divide by the
/// cycle-0 value; when that value is too small to divide by they carry the
/// raw numbers instead.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub avg_pair_distance: Option<f64>,
    pub avg_unique_labels: Option<f64>,
    pub mean_epistemic: Option<f64>,
    pub mean_aleatoric: Option<f64>,
    pub mean_posterior: Option<f64>,
    pub epistemic_norm: Option<f64>,
    pub aleatoric_norm: Option<f64>,
    pub posterior_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<CycleMetrics>,
    /// Every pixel ever selected, including the final query that no training
    /// round consumed.
    pub selections: SelectionList,
    pub labeled: LabeledSet,
    /// True when the pool ran dry before the cycle budget was spent.
    pub truncated: bool,
    pub model: ToyModel,
}

const METRIC_TAIL: &str =
    "avg_pair_distance,avg_unique_labels,epi,alea,post,epi_norm,alea_norm,post_norm";

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => crate::tensorio::fmt_score(x),
        None => "nan".into(),
    }
}

/// Renders metric rows as the CSV consumed by the report command. One line
/// per cycle; absent statistics appear as `nan`.
pub fn metrics_to_csv(metrics: &[CycleMetrics]) -> Result<String> {
    let first = metrics
        .first()
        .ok_or_else(|| Error::Validation("no metric rows to render".into()))?;
    let classes = first.per_class_iou.len();
    let mut out = String::from("cycle,miou");
    for c in 0..classes {
        write!(out, ",iou_class_{c}").unwrap();
    }
    out.push(',');
    out.push_str(METRIC_TAIL);
    out.push('\n');
    for row in metrics {
        if row.per_class_iou.len() != classes {
            return Err(Error::Validation(format!(
                "cycle {} reports {} classes where cycle {} reported {classes}",
                row.cycle,
                row.per_class_iou.len(),
                first.cycle
            )));
        }
        write!(out, "{},{}", row.cycle, crate::tensorio::fmt_score(row.miou)).unwrap();
        for &iou in &row.per_class_iou {
            write!(out, ",{}", fmt_metric(iou)).unwrap();
        }
        for v in [
            row.avg_pair_distance,
            row.avg_unique_labels,
            row.mean_epistemic,
            row.mean_aleatoric,
            row.mean_posterior,
            row.epistemic_norm,
            row.aleatoric_norm,
            row.posterior_norm,
        ] {
            write!(out, ",{}", fmt_metric(v)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the CSV produced by [`metrics_to_csv`]. `path` only labels errors.
pub fn metrics_from_csv(text: &str, path: &Path) -> Result<Vec<CycleMetrics>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty metrics file"))?
        .1;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 10 || fields[0] != "cycle" || fields[1] != "miou" {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let classes = fields.len() - 10;
    for (c, field) in fields[2..2 + classes].iter().enumerate() {
        if *field != format!("iou_class_{c}") {
            return Err(Error::format(path, format!("unexpected header column {field:?}")));
        }
    }
    if fields[2 + classes..].join(",") != METRIC_TAIL {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }

    let parse_opt = |token: &str, line: usize| -> Result<Option<f64>> {
        if token == "nan" {
            return Ok(None);
        }
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(Error::format(path, format!("line {line}: bad value {token:?}"))),
        }
    };

    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split(',').collect();
        if tokens.len() != fields.len() {
            return Err(Error::format(
                path,
                format!("line {line_no}: expected {} fields, got {}", fields.len(), tokens.len()),
            ));
        }
        let cycle: usize = tokens[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {line_no}: bad cycle {:?}", tokens[0])))?;
        let miou = parse_opt(tokens[1], line_no)?
            .ok_or_else(|| Error::format(path, format!("line {line_no}: miou is nan")))?;
        let per_class_iou: Vec<Option<f64>> = tokens[2..2 + classes]
            .iter()
            .map(|t| parse_opt(t, line_no))
            .collect::<Result<_>>()?;
        let tail: Vec<Option<f64>> = tokens[2 + classes..]
            .iter()
            .map(|t| parse_opt(t, line_no))
            .collect::<Result<_>>()?;
        rows.push(CycleMetrics {
            cycle,
            miou,
            per_class_iou,
            avg_pair_distance: tail[0],
            avg_unique_labels: tail[1],
            mean_epistemic: tail[2],
            mean_aleatoric: tail[3],
            mean_posterior: tail[4],
            epistemic_norm: tail[5],
            aleatoric_norm: tail[6],
            posterior_norm: tail[7],
        });
    }
    Ok(rows)
}

fn fill_norm(
    metrics: &mut [CycleMetrics],
    get: impl Fn(&CycleMetrics) -> Option<f64>,
    set: impl Fn(&mut CycleMetrics, f64),
) {
    let values: Vec<f64> = metrics.iter().filter_map(&get).collect();
    let (normed, _) = normalize_trajectory(&values);
    let mut normed = normed.into_iter();
    for row in metrics.iter_mut() {
        if get(row).is_some() {
            set(row, normed.next().expect("one normalized value per raw value"));
        }
    }
}

fn validation_miou(
    model: &ToyModel,
    data: &SyntheticDataset,
    pool_images: usize,
) -> Result<IouReport> {
    let preds: Vec<LabelMap> =
        data.images[pool_images..].iter().map(|img| model.predict_map(img)).collect();
    let pairs: Vec<(&LabelMap, &LabelMap)> =
        preds.iter().zip(&data.truth[pool_images..]).collect();
    miou_aggregate(&pairs)
}

/// Runs the full loop described in the module docs.
pub fn run_al(cfg: &ALConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.dataset, cfg.seed)?;
    let (pool_images, _) = cfg.split_counts();
    let (h, w, c) = (cfg.dataset.height, cfg.dataset.width, cfg.dataset.num_classes);
    let n = cfg.pixels_per_image;

    let mut selections = SelectionList::new();
    let mut labeled = LabeledSet::new();
    let mut masks: Vec<LabelMap> =
        (0..pool_images).map(|_| LabelMap::unlabeled(h, w, c as u32)).collect();
    let mut pending: Vec<LabeledEntry> = Vec::new();

    for ti in 0..pool_images {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[seed_stream::INIT_SELECT, ti as u64],
        ));
        let mut pixels: Vec<(usize, usize)> =
            (0..h).flat_map(|row| (0..w).map(move |col| (row, col))).collect();
        pixels.shuffle(&mut rng);
        pixels.truncate(n);
        let id = image_id(ti);
        for (row, col) in pixels {
            let label = oracle_label(&data, &id, row, col)?;
            selections.push(SelectionEntry { image_id: id.clone(), row, col, cycle: 0 })?;
            masks[ti].set_label(row, col, label);
            pending.push(LabeledEntry { image: ti, row, col, label, cycle: 0 });
        }
    }

    let mut model: Option<ToyModel> = None;
    let mut truncated = false;
    let mut metrics: Vec<CycleMetrics> = Vec::new();

    for k in 0..cfg.cycles {
        if pending.is_empty() {
            truncated = true;
            break;
        }
        let expected = labeled.len() + pending.len();
        for e in pending.drain(..) {
            labeled.push(e.image, e.row, e.col, e.label, e.cycle)?;
        }
        assert_eq!(labeled.len(), expected, "labeled budget mismatch at cycle {k}");

        if model.is_none() || !cfg.warm_start {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[seed_stream::INIT_WEIGHTS, k as u64],
            ));
            model = Some(ToyModel::init(
                cfg.dataset.feature_dim,
                cfg.hidden_dim,
                c,
                cfg.dropout_rate,
                &mut rng,
            )?);
        }
        let net = model.as_mut().expect("model is initialized above");
        let mut rng_train =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[seed_stream::TRAIN, k as u64]));
        train(
            net,
            &data,
            &labeled,
            &TrainConfig { epochs: cfg.epochs, learning_rate: cfg.learning_rate },
            &mut rng_train,
        )?;
        let report = validation_miou(net, &data, pool_images)?;

        let (mut sum_epi, mut sum_alea, mut sum_post, mut queried) = (0.0, 0.0, 0.0, 0usize);
        for ti in 0..pool_images {
            let remaining = h * w - masks[ti].labeled_count();
            if remaining == 0 {
                continue;
            }
            let mut rng_mc = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[seed_stream::MC_FORWARD, k as u64, ti as u64],
            ));
            let cube = mc_forward(net, &data.images[ti], cfg.mc_samples, &mut rng_mc)?;
            let mut records: Vec<UncertaintyRecord> = Vec::with_capacity(h * w);
            let mut means: Vec<Vec<f64>> = Vec::new();
            for row in 0..h {
                for col in 0..w {
                    let samples = cube.pixel_samples(row, col);
                    records.push(record_for_pixel(&samples, c, &cfg.clamps)?);
                    if cfg.acquisition == AcquisitionKind::Margin {
                        let params = fit_pixel(&samples, c, &cfg.clamps)?;
                        means.push(renormalized_means(&params));
                    }
                }
            }
            let mut rng_score = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[seed_stream::SCORE, k as u64, ti as u64],
            ));
            let id = image_id(ti);
            let picked = if cfg.acquisition == AcquisitionKind::Margin {
                margin_select(&means, &masks[ti], n, cfg.pool_factor, &mut rng_score, &id, k + 1)?
            } else {
                let mut scores = Vec::with_capacity(h * w);
                for row in 0..h {
                    for col in 0..w {
                        scores.push(if masks[ti].is_labeled(row, col) {
                            f64::NEG_INFINITY
                        } else {
                            score_pixel(
                                cfg.acquisition,
                                &cfg.score,
                                &records[row * w + col],
                                &mut rng_score,
                            )?
                        });
                    }
                }
                let map = ScoreMap::new(h, w, Some(cfg.acquisition), scores)?;
                select_top_n(&map, &masks[ti], n, &mut rng_score, &id, k + 1)?
            };
            assert_eq!(
                picked.len(),
                n.min(remaining),
                "selection budget mismatch at cycle {k}, image {ti}"
            );
            for e in picked.entries() {
                let label = oracle_label(&data, &e.image_id, e.row, e.col)?;
                let rec = &records[e.row * w + e.col];
                sum_epi += rec.epistemic;
                sum_alea += rec.aleatoric;
                sum_post += rec.posterior_u;
                queried += 1;
                selections.push(e.clone())?;
                masks[ti].set_label(e.row, e.col, label);
                pending.push(LabeledEntry { image: ti, row: e.row, col: e.col, label, cycle: k + 1 });
            }
        }

        let mean = |sum: f64| (queried > 0).then(|| sum / queried as f64);
        metrics.push(CycleMetrics {
            cycle: k,
            miou: report.mean,
            per_class_iou: report.per_class,
            avg_pair_distance: avg_pair_distance(&selections, k + 1),
            avg_unique_labels: avg_unique_labels(
                &selections,
                |id, row, col| {
                    oracle_label(&data, id, row, col).expect("selections index the dataset")
                },
                k + 1,
            ),
            mean_epistemic: mean(sum_epi),
            mean_aleatoric: mean(sum_alea),
            mean_posterior: mean(sum_post),
            epistemic_norm: None,
            aleatoric_norm: None,
            posterior_norm: None,
        });
    }

    fill_norm(&mut metrics, |m| m.mean_epistemic, |m, v| m.epistemic_norm = Some(v));
    fill_norm(&mut metrics, |m| m.mean_aleatoric, |m, v| m.aleatoric_norm = Some(v));
    fill_norm(&mut metrics, |m| m.mean_posterior, |m, v| m.posterior_norm = Some(v));

    Ok(RunResult {
        metrics,
        selections,
        labeled,
        truncated,
        model: model.expect("at least one cycle ran"),
    })
}

/// Trains on every pool pixel with the cycle-0 streams and reports the
/// validation mIoU: the all-labels ceiling an AL run is compared against.
pub fn supervised_reference(cfg: &ALConfig) -> Result<IouReport> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.dataset, cfg.seed)?;
    let (pool_images, _) = cfg.split_counts();
    let mut labeled = LabeledSet::new();
    for ti in 0..pool_images {
        for row in 0..cfg.dataset.height {
            for col in 0..cfg.dataset.width {
                labeled.push(ti, row, col, data.truth[ti].label(row, col), 0)?;
            }
        }
    }
    let mut rng_init =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[seed_stream::INIT_WEIGHTS, 0]));
    let mut model = ToyModel::init(
        cfg.dataset.feature_dim,
        cfg.hidden_dim,
        cfg.dataset.num_classes,
        cfg.dropout_rate,
        &mut rng_init,
    )?;
    let mut rng_train =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[seed_stream::TRAIN, 0]));
    train(
        &mut model,
        &data,
        &labeled,
        &TrainConfig { epochs: cfg.epochs, learning_rate: cfg.learning_rate },
        &mut rng_train,
    )?;
    validation_miou(&model, &data, pool_images)
}
