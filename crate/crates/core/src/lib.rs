//! Stock ranking from learned inter-stock graphs.
//!
//! A lookback window of daily features is denoised with a learnable wavelet
//! filter, cut into patches, embedded, and turned into one similarity graph
//! per patch. A small state-space recurrence folds the patch graphs into a
//! single adjacency, a graph layer mixes the stock tokens over it, and a
//! feed-forward head emits one score per stock. Scores drive a Topk-Drop
//! portfolio backtest.
//!
//! ```
//! use ssgraph::data::{generate_synthetic, make_windows, SyntheticSpec};
//! use ssgraph::model::{Model, ModelConfig};
//!
//! let spec = SyntheticSpec { n_stocks: 6, n_days: 30, ..SyntheticSpec::default() };
//! let panel = generate_synthetic(&spec).unwrap();
//! let windows = make_windows(&panel, 20).unwrap();
//! let model = Model::init(ModelConfig::default(), 0).unwrap();
//! let scores = model.predict(&windows[0].x).unwrap();
//! assert_eq!(scores.len(), 6);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graphconstruct;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod ssgl;
pub mod training;
pub mod wdn;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
