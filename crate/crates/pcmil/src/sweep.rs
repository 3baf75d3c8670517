//! Composition-vector sweeps: one full experiment per vector, one CSV row per
//! experiment in list order.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pcmil_core::allocation::{CompositionVector, ContextAssignment};
use pcmil_core::experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, PreparedCohort};

use crate::config::{parse_alpha, Settings};
use crate::error::{CliError, Result};
use crate::io::binary::write_checkpoint;
use crate::io::jsonl::{assignment_records, write_jsonl};
use crate::io::tables::{history_csv, metrics_csv, sweep_header, sweep_row};
use crate::io::write_file;

/// The thirteen training ratios from 100% slide supervision down to 60%.
pub const DEFAULT_SWEEP: &str = include_str!("../data/table1_sweep.txt");

/// One vector per non-blank line; `#` starts a comment line.
pub fn parse_sweep_list(text: &str) -> Result<Vec<CompositionVector>> {
    let alphas = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_alpha)
        .collect::<Result<Vec<_>>>()?;
    if alphas.is_empty() {
        return Err(CliError::Config("sweep list is empty".into()));
    }
    Ok(alphas)
}

/// Train and validation assignments in one list, as written by `allocate`.
pub fn merged_assignment(outcome: &ExperimentOutcome) -> ContextAssignment {
    let mut all = outcome.train_assignment.clone();
    all.contexts.extend(outcome.val_assignment.contexts.clone());
    all
}

/// Writes checkpoint, history, metrics and assignment of one run.
pub fn write_run(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    write_checkpoint(&dir.join("checkpoint.pcmw"), &outcome.report.best_params)?;
    write_file(&dir.join("history.csv"), history_csv(&outcome.report.history))?;
    write_file(&dir.join("metrics.csv"), metrics_csv(&outcome.matrix))?;
    write_jsonl(&dir.join("assignment.jsonl"), &assignment_records(&merged_assignment(outcome)))
}

pub fn run_dir(out: &Path, index: usize, alpha: &CompositionVector) -> PathBuf {
    let [s, a4, a2, a1] = alpha.percents();
    out.join("runs").join(format!("{index:02}_{s}-{a4}-{a2}-{a1}"))
}

fn run_row(cohort: &PreparedCohort, settings: &Settings, out: &Path, index: usize, alpha: &CompositionVector) -> String {
    let result = settings
        .train_config()
        .and_then(|train| {
            let config = ExperimentConfig { alpha: *alpha, seed: settings.seed, train };
            Ok(run_experiment(cohort, &config)?)
        })
        .and_then(|outcome| {
            for w in &outcome.warnings {
                log::warn!("alpha {alpha}: {w}");
            }
            write_run(&run_dir(out, index, alpha), &outcome)?;
            Ok(outcome.matrix)
        });
    match &result {
        Ok(m) => log::info!("alpha {alpha}: average B-A {:.2}", m.average().ba),
        Err(e) => log::error!("alpha {alpha}: {e}"),
    }
    sweep_row(alpha, &result.map_err(|e| e.to_string()))
}

/// Runs every vector and returns the sweep table. With `parallel` set, runs go
/// to a pool of that many threads; rows are still assembled in list order and
/// every run writes only its own directory, so the table does not depend on
/// scheduling.
pub fn run_sweep(
    cohort: &PreparedCohort,
    alphas: &[CompositionVector],
    settings: &Settings,
    out: &Path,
    parallel: Option<usize>,
) -> Result<String> {
    let rows: Vec<String> = match parallel {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
            pool.install(|| {
                alphas.par_iter().enumerate().map(|(i, a)| run_row(cohort, settings, out, i, a)).collect()
            })
        }
        _ => alphas.iter().enumerate().map(|(i, a)| run_row(cohort, settings, out, i, a)).collect(),
    };
    let mut csv = sweep_header();
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_has_thirteen_rows() {
        let alphas = parse_sweep_list(DEFAULT_SWEEP).unwrap();
        assert_eq!(alphas.len(), 13);
        assert_eq!(alphas[0].percents(), [100, 0, 0, 0]);
        assert_eq!(alphas[3].percents(), [90, 6, 2, 2]);
        assert_eq!(alphas[12].percents(), [60, 24, 8, 8]);
        assert!(alphas.iter().all(|a| a.percents()[0] >= 60));
    }

    #[test]
    fn list_parsing() {
        assert!(parse_sweep_list("# nothing\n\n").is_err());
        assert!(parse_sweep_list("100,0,0,0\n50,50\n").is_err());
        assert_eq!(parse_sweep_list("# head\n70,30,0,0\n").unwrap().len(), 1);
    }
}
