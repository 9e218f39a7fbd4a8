//! Synthetic blob dataset with deliberately imbalanced classes.
//!
//! Each image is a Voronoi partition of seeded sites; every site draws its
//! class from a skewed distribution with one dominant class and an equally
//! rare tail, the way background dwarfs small objects in real segmentation
//! masks. A pixel's feature vector is its true class's prototype plus
//! isotropic Gaussian noise. The
//! prototypes are the first `C` standard basis vectors of the feature space,
//! which keeps them pairwise equidistant, so with zero noise a
//! nearest-prototype rule classifies every pixel perfectly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{derive_seed, seed_stream};
use crate::error::{Error, Result};
use crate::tensorio::LabelMap;

/// Weight of every non-dominant class relative to class 0. At the default
/// four classes this puts roughly 94% of the pixels in class 0 and 2% in
/// each of the others.
const RARE_WEIGHT: f64 = 0.0213;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Approximate blob diameter in pixels; the site count per image is
    /// `max(2, H·W / blob_scale²)`.
    pub blob_scale: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_images: 100,
            height: 32,
            width: 32,
            num_classes: 4,
            feature_dim: 4,
            blob_scale: 8.0,
            noise_sigma: 0.4,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Validation("dataset needs at least one non-empty image".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "dataset needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim < 2 {
            return Err(Error::Validation(format!(
                "feature_dim must be at least 2, got {}",
                self.feature_dim
            )));
        }
        if self.num_classes > self.feature_dim {
            return Err(Error::Validation(format!(
                "prototypes are basis vectors, so classes ({}) cannot exceed feature_dim ({})",
                self.num_classes, self.feature_dim
            )));
        }
        if !(self.blob_scale > 0.0) || !self.blob_scale.is_finite() {
            return Err(Error::Validation(format!("blob_scale must be positive, got {}", self.blob_scale)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Validation(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Per-pixel feature vectors, row-major `[H, W, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dim;
        &self.values[start..start + self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub images: Vec<FeatureMap>,
    pub truth: Vec<LabelMap>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// Class prototypes: basis vectors e₀ … e_{C−1} in d dimensions.
pub fn class_prototypes(num_classes: usize, feature_dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut p = vec![0.0; feature_dim];
            p[c] = 1.0;
            p
        })
        .collect()
}

fn class_weights(num_classes: usize) -> Vec<f64> {
    let raw: Vec<f64> =
        (0..num_classes).map(|c| if c == 0 { 1.0 } else { RARE_WEIGHT }).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Generates the dataset deterministically from the seed; every image has
/// its own derived generator, so image i is the same regardless of how many
/// images surround it.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let prototypes = class_prototypes(cfg.num_classes, cfg.feature_dim);
    let weights = class_weights(cfg.num_classes);
    let num_sites = ((cfg.height * cfg.width) as f64 / (cfg.blob_scale * cfg.blob_scale))
        .round()
        .max(2.0) as usize;

    let mut images = Vec::with_capacity(cfg.num_images);
    let mut truth = Vec::with_capacity(cfg.num_images);
    for img in 0..cfg.num_images {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[seed_stream::DATASET, img as u64]));

        let sites: Vec<(f64, f64, u32)> = (0..num_sites)
            .map(|_| {
                let r = rng.gen::<f64>() * cfg.height as f64;
                let c = rng.gen::<f64>() * cfg.width as f64;
                let draw = rng.gen::<f64>();
                let mut acc = 0.0;
                let mut class = cfg.num_classes as u32 - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if draw < acc {
                        class = i as u32;
                        break;
                    }
                }
                (r, c, class)
            })
            .collect();

        let mut labels = Vec::with_capacity(cfg.height * cfg.width);
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                let (mut best, mut best_class) = (f64::MAX, 0u32);
                for &(sr, sc, class) in &sites {
                    let d2 = (sr - row as f64).powi(2) + (sc - col as f64).powi(2);
                    if d2 < best {
                        best = d2;
                        best_class = class;
                    }
                }
                labels.push(best_class);
            }
        }

        let mut values = Vec::with_capacity(cfg.height * cfg.width * cfg.feature_dim);
        for &label in &labels {
            let proto = &prototypes[label as usize];
            for &p in proto {
                let noise: f64 = rng.sample(StandardNormal);
                values.push(p + cfg.noise_sigma * noise);
            }
        }

        truth.push(LabelMap::new(cfg.height, cfg.width, cfg.num_classes as u32, labels)?);
        images.push(FeatureMap {
            height: cfg.height,
            width: cfg.width,
            dim: cfg.feature_dim,
            values,
        });
    }

    Ok(SyntheticDataset {
        images,
        truth,
        num_classes: cfg.num_classes,
        feature_dim: cfg.feature_dim,
    })
}
