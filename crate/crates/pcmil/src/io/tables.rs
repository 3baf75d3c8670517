//! CSV outputs. Floats are written in Rust's shortest round-trip form so a
//! value read back is bit-identical.

use std::fmt::Write as _;

use pcmil_core::allocation::CompositionVector;
use pcmil_core::evaluation::{ContextMatrix, ContextMetrics};
use pcmil_core::training::EpochRecord;
use pcmil_core::Context;

use crate::error::{CliError, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_ba";
pub const METRICS_HEADER: &str = "context,ba,s_at_98";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for h in history {
        writeln!(out, "{},{},{}", h.epoch, h.train_loss, h.val_ba).unwrap();
    }
    out
}

pub fn metrics_csv(matrix: &ContextMatrix) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for ctx in Context::TABLE_ORDER {
        let m = matrix.get(ctx);
        writeln!(out, "{},{},{}", ctx.as_str(), m.ba, m.s_at_98).unwrap();
    }
    let avg = matrix.average();
    writeln!(out, "average,{},{}", avg.ba, avg.s_at_98).unwrap();
    out
}

/// Reads a metrics table back; the `average` row is recomputed, not trusted.
pub fn parse_metrics_csv(text: &str) -> Result<ContextMatrix> {
    let bad = |msg: String| CliError::Data(format!("metrics table: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad("missing header".into()));
    }
    let mut matrix = ContextMatrix::default();
    let mut seen = [false; 4];
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let [name, ba, s98] = fields[..] else {
            return Err(bad(format!("expected 3 fields in {line:?}")));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let metrics = ContextMetrics { ba: num(ba)?, s_at_98: num(s98)? };
        if name == "average" {
            continue;
        }
        let ctx: Context = name.parse().map_err(|_| bad(format!("unknown context {name:?}")))?;
        matrix.entries[ctx.table_index()] = metrics;
        seen[ctx.table_index()] = true;
    }
    if seen.contains(&false) {
        return Err(bad("missing a context row".into()));
    }
    Ok(matrix)
}

pub fn sweep_header() -> String {
    let mut h = String::from("alpha");
    for ctx in Context::TABLE_ORDER {
        write!(h, ",{0}_ba,{0}_s98", ctx.as_str()).unwrap();
    }
    h.push_str(",avg_ba,avg_s98,error");
    h
}

/// One sweep row; a failed run leaves the metric cells empty and carries the
/// error text.
pub fn sweep_row(alpha: &CompositionVector, outcome: &std::result::Result<ContextMatrix, String>) -> String {
    let mut row = format!("\"{alpha}\"");
    match outcome {
        Ok(m) => {
            for e in m.entries.iter().chain([&m.average()]) {
                write!(row, ",{},{}", e.ba, e.s_at_98).unwrap();
            }
            row.push(',');
        }
        Err(msg) => {
            row.push_str(&",".repeat(10));
            write!(row, ",\"{}\"", msg.replace('"', "'")).unwrap();
        }
    }
    row
}

pub fn agreement_header() -> &'static str {
    "id,matching,regions,agreement"
}
