//! File formats, configuration and pipeline stages of the `pcmil` tool.

pub mod cohort;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod sweep;
