//! Knowledge graph embedding toolkit.
//!
//! * [`graph`]: triple files, vocabularies, splits and the filter index.
//! * [`geometry`]: homogeneous 2D/3D affine operators and block-diagonal application.
//! * [`models`]: embedding tables, scoring functions and their analytic gradients.
//! * [`objectives`]: negative sampling and training losses.
//! * [`trainer`]: mini-batch training, optimizers, checkpoints, gradient checking.
//! * [`eval`]: filtered link-prediction ranking and metrics.
//! * [`cli`]: the `kge` command-line tool.

// small dense matrix code reads best with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod geometry;
pub mod graph;
pub mod models;
pub mod objectives;
pub mod eval;
pub mod trainer;
pub mod cli;
