//! Desk-scale versions of the experiments: majority-task training across
//! LayerNorm variants, unselectable-key heatmaps and keyscans.
//!
//! Every run is a pure function of its config; all randomness derives from
//! `master_seed` through [`crate::rng`].

mod config;
mod heatmap;
mod keyscan;
mod lm;
mod majority;
mod metrics;

pub use config::{load_config, HeatmapConfig, LmConfig, MajorityConfig};
pub use heatmap::run_heatmap;
pub use keyscan::{run_keyscan_keys, run_keyscan_model, KeyscanReport, LayerScan};
pub use lm::{examples_from_chain, gen_lm_dataset, train_lm, LmDataset, LmRecord, LmRun, MarkovChain};
pub use majority::{gen_majority_dataset, majority_label, run_majority, Example, MajorityData};
pub use metrics::{MajorityOutcome, MetricRecord, MetricsLog, RunSummary, Summary};

/// Linear decay from `lr` at step 0 to zero at `total_steps`.
pub fn linear_lr(lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr;
    }
    lr * (1.0 - step as f64 / total_steps as f64)
}
