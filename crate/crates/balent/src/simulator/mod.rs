//! End-to-end active-learning simulation on a synthetic dataset.
//!
//! [`dataset`] builds blob-structured images with imbalanced classes,
//! [`model`] is a tiny per-pixel MLP with Monte-Carlo dropout, [`metrics`]
//! holds mIoU and the selection-diversity measures, and [`run`] drives the
//! label-train-score-select loop.

pub mod dataset;
pub mod metrics;
pub mod model;
pub mod run;

pub use dataset::{generate_dataset, DatasetConfig, FeatureMap, SyntheticDataset};
pub use metrics::{
    avg_pair_distance, avg_unique_labels, miou, miou_aggregate, normalize_trajectory, IouReport,
};
pub use model::{masked_ce_loss, mc_forward, train, Gradients, ToyModel, TrainConfig, TrainStats};
pub use run::{
    metrics_from_csv, metrics_to_csv, oracle_label, run_al, supervised_reference, ALConfig,
    CycleMetrics, RunResult,
};

/// Seed streams for the independent generators; combined with cycle and
/// image indices by [`derive_seed`].
pub mod seed_stream {
    pub const DATASET: u64 = 1;
    pub const INIT_WEIGHTS: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const MC_FORWARD: u64 = 4;
    pub const SCORE: u64 = 5;
    pub const INIT_SELECT: u64 = 6;
}

/// Mixes a base seed with stream/image/cycle tags into a fresh seed. Stable
/// by construction (SplitMix64 steps), so logs reproduce across platforms.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
