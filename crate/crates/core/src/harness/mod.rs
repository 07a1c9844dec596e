//! Experiment plumbing: image data, baselines, random search and graph
//! rendering.

pub mod baseline;
pub mod dataset;
pub mod dot;
pub mod idx;
pub mod search;

use std::path::PathBuf;

pub use baseline::{baseline_mlp, predict_mean_mse, BaselineConfig, BaselineTask};
pub use dataset::{build_multitask, intensity_histogram, DatasetError, MultitaskDataset};
pub use dot::export_dot;
pub use idx::{load_idx, load_split, IdxError, Split};
pub use search::{
    derive_seed, random_search, score_model, write_search_csv, SearchConfig, SearchRecord,
};

/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "VALP_DATA_DIR";

/// `$VALP_DATA_DIR` if set, else `data/fashion-mnist` under the workspace.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(
        || {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../data/fashion-mnist"
            ))
        },
        PathBuf::from,
    )
}
