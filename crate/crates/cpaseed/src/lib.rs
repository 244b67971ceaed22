//! Experiment runner, file formats and figures for region-seeded
//! piecewise-affine networks. The numerical core lives in `cpaseed-core`.

// `!(x > y)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod io;
pub mod report;
pub mod runner;
pub mod svg;

pub use config::ExperimentConfig;
pub use cpaseed_core as core;
