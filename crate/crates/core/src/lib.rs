//! Progressive-context multiple instance learning for whole-slide patch grids.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the whole
//! in-memory pipeline:
//!
//! - [`geometry`]: the fixed patch lattice and millimeter-scale region tiling.
//! - [`bagging`]: annotation tallies, region labeling rules and bag assembly.
//! - [`allocation`]: composition-vector quotas, per-slide context assignment
//!   and per-context class balancing.
//! - [`model`]: the gated-attention aggregator with a linear head, with
//!   hand-derived gradients.
//! - [`training`]: AdamW with decoupled weight decay and early stopping on
//!   validation balanced accuracy.
//! - [`evaluation`]: balanced accuracy, specificity at a sensitivity floor,
//!   the train-context by test-context matrix, regional agreement, heatmaps.
//! - [`synthcohort`]: planted-lesion cohorts with full ground truth.
//! - [`experiment`]: the split / allocate / balance / train / evaluate chain
//!   used by sweeps.
//!
//! File formats, logging and the command-line interface live in the `pcmil`
//! companion crate.
#![no_std]

extern crate alloc;

pub mod allocation;
pub mod bagging;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod synthcohort;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Context, Patch, RegionFrame, SlideGrid};
