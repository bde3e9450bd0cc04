//! Training and serving core for categorical-data binary classifiers:
//! CSV ingestion, feedforward networks trained by backpropagation, grid
//! search over 13 hyperparameters with stratified 5-fold cross-validation,
//! ROC/AUC evaluation and a versioned model file format.
//!
//! The `parallel` feature (on by default) evaluates grid settings on a rayon
//! pool; without it grid search runs serially. Results are bit-identical
//! either way.

pub mod catalog;
pub mod dataset;
pub mod demo;
pub mod grid;
pub mod hyper;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod split;
pub mod train;
pub mod vault;

pub use catalog::{Predictor, PredictorCatalog};
pub use dataset::{encode, parse_csv, Dataset, EncodedMatrix, Encoder};
pub use grid::{run_grid_search, GridOptions, GridReport, GridSpec};
pub use hyper::HyperparameterSetting;
pub use metrics::{plot_series, roc_curve, RocResult};
pub use network::NetworkWeights;
pub use split::{make_split, SplitPlan};
pub use train::{train, TrainConfig};
pub use vault::{ModelArtifact, ModelRegistry};

#[cfg(feature = "testkit")]
pub mod testkit;
