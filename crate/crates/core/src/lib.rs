//! Class-incremental learning with knowledge distillation and weight aligning.
//!
//! Training at each incremental step happens in two phases. The first phase
//! optimizes a cross-entropy plus distillation objective over new data and a
//! small rehearsal memory. The second phase rescales the classifier columns of
//! the newly added classes so that their mean norm matches the old classes,
//! removing the bias towards recently learned classes.
//!
//! Module map:
//!
//! - [`model`]: feature extractor, classifier head, task schedule, checkpoints
//! - [`losses`]: cross-entropy, temperature distillation, their combination
//! - [`align`]: weight norms, weight aligning, clipping and normalization baselines
//! - [`memory`]: fixed-budget exemplar memory with herding or random selection
//! - [`driver`]: per-step protocol and full experiment runs
//! - [`report`]: accuracy, error decomposition, confusion matrices, plots, summaries
//! - [`config`], [`data`], [`run`]: configuration, datasets and run directories

pub mod align;
pub mod config;

pub mod data;
pub mod driver;
pub mod error;
pub mod exec;
pub mod losses;
pub mod memory;
pub mod model;
pub mod report;
pub mod run;

pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
