//! Per-pixel MLP with Monte-Carlo dropout.
//!
//! Architecture: input d → hidden (ReLU, then inverted dropout) → linear →
//! softmax. Training samples a fresh dropout mask per pixel each epoch and
//! follows the exact gradient of that stochastic loss; evaluation uses the
//! expected (mask-free) pass, which inverted scaling makes the mean of the
//! stochastic ones. Uncertainty estimation runs `m` stochastic passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{FeatureMap, SyntheticDataset};
use super::run::LabeledSet;
use crate::error::{Error, Result};
use crate::tensorio::{LabelMap, PredictionCube};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    dropout_rate: f64,
    /// First-layer weights, row-major `[hidden, input]`. Public so callers
    /// can inspect or perturb a trained model in place.
    pub w1: Vec<f64>,
    /// First-layer biases, `[hidden]`.
    pub b1: Vec<f64>,
    /// Second-layer weights, row-major `[classes, hidden]`.
    pub w2: Vec<f64>,
    /// Second-layer biases, `[classes]`.
    pub b2: Vec<f64>,
}

/// Gradient of the loss with respect to every parameter, same layout as the
/// model's weight vectors.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ToyModel {
    /// Fresh model with Xavier-uniform weights and zero biases.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes < 2 {
            return Err(Error::Validation(format!(
                "model shape {input_dim}->{hidden_dim}->{num_classes} is too small"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Validation(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let xavier = |fan_in: usize, fan_out: usize, n: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect::<Vec<f64>>()
        };
        Ok(ToyModel {
            input_dim,
            hidden_dim,
            num_classes,
            dropout_rate,
            w1: xavier(input_dim, hidden_dim, hidden_dim * input_dim, rng),
            b1: vec![0.0; hidden_dim],
            w2: xavier(hidden_dim, num_classes, num_classes * hidden_dim, rng),
            b2: vec![0.0; num_classes],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// One inverted-dropout mask: each unit keeps with probability 1−r and is
    /// scaled by 1/(1−r), so the expected mask is all-ones.
    pub fn sample_mask(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout_rate;
        (0..self.hidden_dim)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut h = self.b1.clone();
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * self.input_dim..(k + 1) * self.input_dim];
            *hk += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *hk = hk.max(0.0);
        }
        h
    }

    fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.b2.clone();
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            *zc += row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }

    /// Expected-dropout softmax probabilities for one pixel.
    pub fn forward_deterministic(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits_from_hidden(&self.hidden(x)))
    }

    /// Stochastic softmax probabilities under a given dropout mask.
    pub fn forward_with_mask(&self, x: &[f64], mask: &[f64]) -> Vec<f64> {
        let mut h = self.hidden(x);
        for (hk, mk) in h.iter_mut().zip(mask) {
            *hk *= mk;
        }
        softmax(&self.logits_from_hidden(&h))
    }

    /// Argmax predictions for a whole image; ties go to the lowest class.
    pub fn predict_map(&self, image: &FeatureMap) -> LabelMap {
        let mut labels = Vec::with_capacity(image.height() * image.width());
        for row in 0..image.height() {
            for col in 0..image.width() {
                let p = self.forward_deterministic(image.features(row, col));
                let mut best = 0usize;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                labels.push(best as u32);
            }
        }
        LabelMap::new(image.height(), image.width(), self.num_classes as u32, labels)
            .expect("argmax labels are always in range")
    }

    fn params_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Runs `m` stochastic forward passes over the image, each pixel sampling a
/// fresh mask per pass, and packs the softmax outputs into a cube.
/// Deterministic given (model, image, m, rng seed).
pub fn mc_forward(
    model: &ToyModel,
    image: &FeatureMap,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionCube> {
    if m < 2 {
        return Err(Error::Validation(format!("mc_forward needs m >= 2 samples, got {m}")));
    }
    if image.dim() != model.input_dim() {
        return Err(Error::Validation(format!(
            "image features have dim {}, model expects {}",
            image.dim(),
            model.input_dim()
        )));
    }
    let (h, w, c) = (image.height(), image.width(), model.num_classes());
    let mut values = vec![0.0f32; h * w * c * m];
    for j in 0..m {
        for px in 0..h * w {
            let x = image.features(px / w, px % w);
            let mask = model.sample_mask(rng);
            let p = model.forward_with_mask(x, &mask);
            for (cls, &v) in p.iter().enumerate() {
                values[(px * c + cls) * m + j] = v as f32;
            }
        }
    }
    PredictionCube::new(h, w, c, m, values)
}

/// Mean cross-entropy −(1/|D_L|) Σ ln 𝔼P_y over the labeled subset, where
/// `labels` holds (pixel index, class) pairs into `mean_probs`.
pub fn masked_ce_loss(mean_probs: &[Vec<f64>], labels: &[(usize, u32)]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Validation("masked_ce_loss: empty labeled subset".into()));
    }
    let mut sum = 0.0;
    for &(idx, class) in labels {
        let probs = mean_probs.get(idx).ok_or_else(|| {
            Error::Validation(format!("masked_ce_loss: pixel index {idx} out of range"))
        })?;
        let p = *probs.get(class as usize).ok_or_else(|| {
            Error::Validation(format!("masked_ce_loss: class {class} out of range"))
        })?;
        if p <= 0.0 {
            return Err(Error::Numeric(format!(
                "masked_ce_loss: zero probability for class {class} at pixel {idx}"
            )));
        }
        sum -= p.ln();
    }
    Ok(sum / labels.len() as f64)
}

/// Loss of one stochastic pass: mean −ln p_y over the batch under the given
/// per-pixel masks. Shared by training and the finite-difference checks.
pub fn batch_loss_with_masks(
    model: &ToyModel,
    batch: &[(Vec<f64>, u32)],
    masks: &[Vec<f64>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("batch_loss_with_masks: empty batch".into()));
    }
    if batch.len() != masks.len() {
        return Err(Error::Validation("batch_loss_with_masks: one mask per pixel required".into()));
    }
    let mut loss = 0.0;
    for ((x, y), mask) in batch.iter().zip(masks) {
        let p = model.forward_with_mask(x, mask)[*y as usize];
        if p <= 0.0 {
            return Err(Error::Numeric("batch loss hit a zero probability".into()));
        }
        loss -= p.ln();
    }
    Ok(loss / batch.len() as f64)
}

/// Exact gradient of [`batch_loss_with_masks`] by backpropagation.
pub fn batch_gradients_with_masks(
    model: &ToyModel,
    batch: &[(Vec<f64>, u32)],
    masks: &[Vec<f64>],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Validation("batch_gradients_with_masks: empty batch".into()));
    }
    if batch.len() != masks.len() {
        return Err(Error::Validation(
            "batch_gradients_with_masks: one mask per pixel required".into(),
        ));
    }
    let (d, hd, c) = (model.input_dim, model.hidden_dim, model.num_classes);
    let mut g = Gradients {
        w1: vec![0.0; hd * d],
        b1: vec![0.0; hd],
        w2: vec![0.0; c * hd],
        b2: vec![0.0; c],
    };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ((x, y), mask) in batch.iter().zip(masks) {
        // forward, keeping intermediates
        let mut a = model.b1.clone();
        for (k, ak) in a.iter_mut().enumerate() {
            let row = &model.w1[k * d..(k + 1) * d];
            *ak += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let h: Vec<f64> = a.iter().map(|&v| v.max(0.0)).collect();
        let u: Vec<f64> = h.iter().zip(mask).map(|(hv, mv)| hv * mv).collect();
        let mut z = model.b2.clone();
        for (cls, zc) in z.iter_mut().enumerate() {
            let row = &model.w2[cls * hd..(cls + 1) * hd];
            *zc += row.iter().zip(&u).map(|(w, v)| w * v).sum::<f64>();
        }
        let p = softmax(&z);
        let py = p[*y as usize];
        if py <= 0.0 {
            return Err(Error::Numeric("batch loss hit a zero probability".into()));
        }
        loss -= py.ln();

        // backward
        let mut dz = p;
        dz[*y as usize] -= 1.0;
        for v in &mut dz {
            *v *= scale;
        }
        for cls in 0..c {
            for k in 0..hd {
                g.w2[cls * hd + k] += dz[cls] * u[k];
            }
            g.b2[cls] += dz[cls];
        }
        for k in 0..hd {
            if a[k] <= 0.0 {
                continue; // ReLU gate closed; mask scaling cannot reopen it
            }
            let du: f64 = (0..c).map(|cls| model.w2[cls * hd + k] * dz[cls]).sum();
            let da = du * mask[k];
            for (i, &xi) in x.iter().enumerate() {
                g.w1[k * d + i] += da * xi;
            }
            g.b1[k] += da;
        }
    }
    Ok((loss * scale, g))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    /// Expected-pass loss on the labeled set before the first step.
    pub initial_loss: f64,
    /// Expected-pass loss after the last step.
    pub final_loss: f64,
}

/// Full-batch gradient descent on the masked cross-entropy. Each epoch
/// samples fresh dropout masks and takes one exact-gradient step; the
/// learning rate decays by 10x at 50% and again at 75% of the epoch budget.
pub fn train(
    model: &mut ToyModel,
    data: &SyntheticDataset,
    labeled: &LabeledSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    if cfg.epochs == 0 {
        return Err(Error::Validation("train: epochs must be at least 1".into()));
    }
    if !(cfg.learning_rate > 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::Validation(format!(
            "train: learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if labeled.is_empty() {
        return Err(Error::Validation("train: empty labeled set".into()));
    }
    // canonical order: the result depends on which pixels are labeled, not
    // on the order they were added in
    let mut entries: Vec<_> = labeled.entries().to_vec();
    entries.sort_unstable_by_key(|e| (e.image, e.row, e.col));
    let batch: Vec<(Vec<f64>, u32)> = entries
        .iter()
        .map(|e| (data.images[e.image].features(e.row, e.col).to_vec(), e.label))
        .collect();

    let eval_loss = |model: &ToyModel| -> Result<f64> {
        let probs: Vec<Vec<f64>> =
            batch.iter().map(|(x, _)| model.forward_deterministic(x)).collect();
        let labels: Vec<(usize, u32)> =
            batch.iter().enumerate().map(|(i, (_, y))| (i, *y)).collect();
        masked_ce_loss(&probs, &labels)
    };

    let initial_loss = eval_loss(model)?;
    for epoch in 0..cfg.epochs {
        let mut lr = cfg.learning_rate;
        if epoch * 2 >= cfg.epochs {
            lr *= 0.1;
        }
        if epoch * 4 >= cfg.epochs * 3 {
            lr *= 0.1;
        }
        let masks: Vec<Vec<f64>> = batch.iter().map(|_| model.sample_mask(rng)).collect();
        let (loss, g) = batch_gradients_with_masks(model, &batch, &masks)?;
        if !loss.is_finite() {
            return Err(Error::Training { epoch });
        }
        for (w, gw) in model.w1.iter_mut().zip(&g.w1) {
            *w -= lr * gw;
        }
        for (w, gw) in model.b1.iter_mut().zip(&g.b1) {
            *w -= lr * gw;
        }
        for (w, gw) in model.w2.iter_mut().zip(&g.w2) {
            *w -= lr * gw;
        }
        for (w, gw) in model.b2.iter_mut().zip(&g.b2) {
            *w -= lr * gw;
        }
        if !model.params_finite() {
            return Err(Error::Training { epoch });
        }
    }
    let final_loss = eval_loss(model)?;
    Ok(TrainStats { initial_loss, final_loss })
}
