//! Experiment instrumentation: multiplication counting, win-proportion
//! statistics, noise corruption, and few-shot nearest-class-mean transfer.

mod corrupt;
mod count;
mod fewshot;
mod wins;

pub use corrupt::{corrupt, noise_eval, CorruptionSpec, NoiseKind, NoiseReport};
pub use count::{count_multiplications, CountRow, OpCountReport};
pub use fewshot::{
    extract_features, ncm_fewshot, summarize_accuracies, FewShotConfig, FewShotResult,
};
pub use wins::{win_statistics, LayerWinStats, WinStats};
