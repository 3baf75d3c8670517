//! On-disk formats.

pub mod binary;
pub mod heatmap;
pub mod jsonl;
pub mod tables;

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::reading(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::reading(path, e))
}

/// Writes a file, creating parent directories.
pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::writing(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::writing(path, e))
}
