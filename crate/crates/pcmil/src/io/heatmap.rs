//! Heatmap layers as whitespace-separated text matrices with a JSON sidecar.
//! Cells without tissue are written as `NA` in region layers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pcmil_core::evaluation::Heatmaps;

use crate::error::Result;
use crate::io::write_file;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub rows: u32,
    pub cols: u32,
    pub kind: String,
}

fn matrix_text<T>(cells: &[T], cols: u32, fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for row in cells.chunks(cols as usize) {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// The three layers of one slide as `(kind, rows, cols, text)`.
pub fn layers(maps: &Heatmaps) -> [(&'static str, u32, u32, String); 3] {
    [
        ("attention", maps.n_rows, maps.n_cols, matrix_text(&maps.attention, maps.n_cols, |a| format!("{a:.6}"))),
        (
            "region_prob",
            maps.region_rows,
            maps.region_cols,
            matrix_text(&maps.region_prob, maps.region_cols, |p| p.map_or("NA".into(), |p| format!("{p:.6}"))),
        ),
        (
            "region_bin",
            maps.region_rows,
            maps.region_cols,
            matrix_text(&maps.region_bin, maps.region_cols, |b| b.map_or("NA".into(), |b| u8::from(b).to_string())),
        ),
    ]
}

/// Writes `<id>.<kind>.txt` and `<id>.<kind>.json` for every layer.
pub fn write_heatmaps(dir: &Path, slide_id: &str, maps: &Heatmaps) -> Result<()> {
    for (kind, rows, cols, text) in layers(maps) {
        write_file(&dir.join(format!("{slide_id}.{kind}.txt")), text)?;
        let sidecar = Sidecar { id: slide_id.into(), rows, cols, kind: kind.into() };
        let json = serde_json::to_string(&sidecar).expect("serializable sidecar");
        write_file(&dir.join(format!("{slide_id}.{kind}.json")), json + "\n")?;
    }
    Ok(())
}
