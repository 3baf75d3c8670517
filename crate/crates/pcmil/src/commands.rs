//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from files and writes its outputs under `out`.

use std::path::Path;

use pcmil_core::allocation::{stratified_split, ContextAssignment};
use pcmil_core::bagging::{build_bags, Split};
use pcmil_core::evaluation::{context_matrix, export_heatmap, regional_agreement_counts};
use pcmil_core::experiment::{run_experiment, train_and_evaluate, ExperimentConfig, PreparedCohort};
use pcmil_core::model::AbmilParams;
use pcmil_core::rng::{stream_rng, streams};
use pcmil_core::synthcohort::{generate_cohort, truth_region_labels};
use pcmil_core::Context;

use crate::cohort::{load_cohort, load_truth, write_synth_cohort, DataPaths};
use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::io::binary::{read_checkpoint, write_checkpoint};
use crate::io::heatmap::write_heatmaps;
use crate::io::jsonl::{assignment_from_records, assignment_records, read_jsonl, write_jsonl, BagRecord};
use crate::io::tables::{agreement_header, history_csv, metrics_csv};
use crate::io::{read_text, write_file};
use crate::sweep::{merged_assignment, parse_sweep_list, run_sweep, DEFAULT_SWEEP};

fn prepare(paths: &DataPaths, settings: &Settings) -> Result<PreparedCohort> {
    let slides = load_cohort(paths, settings)?;
    log::info!("loaded {} slides", slides.len());
    Ok(PreparedCohort::prepare(&slides, &settings.rule)?)
}

fn checkpoint_for(path: &Path, cohort: &PreparedCohort) -> Result<AbmilParams> {
    let params = read_checkpoint(path)?;
    if params.dim() != cohort.dim {
        return Err(CliError::Data(format!(
            "checkpoint expects {}-dimensional embeddings, cohort has {}",
            params.dim(),
            cohort.dim
        )));
    }
    Ok(params)
}

/// Generates a synthetic cohort with a seeded stratified split.
pub fn synth(settings: &Settings, out: &Path) -> Result<()> {
    let cfg = settings.synth_config()?;
    let slides = generate_cohort(&cfg)?;
    let labels: Vec<bool> = slides.iter().map(|s| s.grid.label()).collect();
    let splits = stratified_split(
        &labels,
        settings.val_fraction,
        settings.test_fraction,
        &mut stream_rng(settings.seed, streams::SPLIT),
    )?;
    write_synth_cohort(out, &slides, &splits)?;
    log::info!("wrote {} synthetic slides to {}", slides.len(), out.display());
    Ok(())
}

/// Writes the bag manifest for every slide at every context it can supervise,
/// or at one context only.
pub fn bags(paths: &DataPaths, settings: &Settings, out: &Path, context: Option<Context>) -> Result<()> {
    let slides = load_cohort(paths, settings)?;
    let mut records = Vec::new();
    for s in &slides {
        for ctx in Context::TABLE_ORDER.into_iter().filter(|c| context.is_none_or(|want| want == *c)) {
            let bags = build_bags(&s.grid, &s.store, &s.annotations, ctx, s.split, &settings.rule)?;
            records.extend(bags.iter().map(BagRecord::from_bag));
        }
    }
    log::info!("{} bags", records.len());
    write_jsonl(&out.join("bags.jsonl"), &records)
}

/// Assigns contexts to training and validation slides.
pub fn allocate(paths: &DataPaths, settings: &Settings, out: &Path) -> Result<()> {
    let cohort = prepare(paths, settings)?;
    let (mut all, mut warnings) =
        cohort.allocate(Split::Train, &settings.alpha, streams::ALLOCATE_TRAIN, settings.seed)?;
    let (val, val_warnings) = cohort.allocate(Split::Val, &settings.alpha, streams::ALLOCATE_VAL, settings.seed)?;
    warnings.extend(val_warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    all.contexts.extend(val.contexts);
    for ctx in Context::TABLE_ORDER {
        log::info!("{ctx}: {} slides", all.count(ctx));
    }
    write_jsonl(&out.join("assignment.jsonl"), &assignment_records(&all))
}

fn split_assignment(cohort: &PreparedCohort, all: &ContextAssignment) -> (ContextAssignment, ContextAssignment) {
    let mut train = ContextAssignment::default();
    let mut val = ContextAssignment::default();
    for s in &cohort.slides {
        let Some(ctx) = all.get(s.grid.slide_id()) else { continue };
        let target = match s.split {
            Split::Train => &mut train,
            Split::Val => &mut val,
            Split::Test => continue,
        };
        target.contexts.insert(s.grid.slide_id().into(), ctx);
    }
    (train, val)
}

/// Trains one model, either from an assignment file or allocating with the
/// configured composition vector.
pub fn train(paths: &DataPaths, settings: &Settings, out: &Path, assignment: Option<&Path>) -> Result<()> {
    let cohort = prepare(paths, settings)?;
    let config = settings.train_config()?;
    let (report, warnings, all) = match assignment {
        Some(path) => {
            let all = assignment_from_records(&read_jsonl(path)?)?;
            let (train, val) = split_assignment(&cohort, &all);
            let outcome = train_and_evaluate(&cohort, &train, &val, settings.seed, &config)?;
            (outcome.report, outcome.warnings, all)
        }
        None => {
            let exp = ExperimentConfig { alpha: settings.alpha, seed: settings.seed, train: config };
            let outcome = run_experiment(&cohort, &exp)?;
            let all = merged_assignment(&outcome);
            (outcome.report, outcome.warnings, all)
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    log::info!("best epoch {} with validation B-A {:.2}", report.best_epoch, report.best_val_ba());
    write_checkpoint(&out.join("checkpoint.pcmw"), &report.best_params)?;
    write_file(&out.join("history.csv"), history_csv(&report.history))?;
    write_jsonl(&out.join("assignment.jsonl"), &assignment_records(&all))
}

/// Evaluates a checkpoint on the test slides at every context, plus regional
/// agreement when patch truth is available.
pub fn eval(paths: &DataPaths, settings: &Settings, checkpoint: &Path, out: &Path, truth: Option<&Path>) -> Result<()> {
    let cohort = prepare(paths, settings)?;
    let params = checkpoint_for(checkpoint, &cohort)?;
    let tests = cohort.test_sets();
    let tau = settings.train.tau;
    let matrix = context_matrix(&params, [&tests[0][..], &tests[1][..], &tests[2][..], &tests[3][..]], tau)?;
    write_file(&out.join("metrics.csv"), metrics_csv(&matrix))?;

    let truth_path = truth.or(paths.truth.as_deref().filter(|p| p.exists()));
    let Some(truth_path) = truth_path else { return Ok(()) };
    let truth = load_truth(truth_path)?;
    let slides = load_cohort(paths, settings)?;
    let mut text = format!("{}\n", agreement_header());
    let (mut matching, mut total) = (0usize, 0usize);
    for s in slides.iter().filter(|s| s.split == Split::Test) {
        let Some(t) = truth.get(s.grid.slide_id()) else { continue };
        let labels = truth_region_labels(t, Context::Mm2);
        if labels.is_empty() {
            continue;
        }
        let (m, n) = regional_agreement_counts(&params, &s.grid, &s.store, &labels, tau)?;
        text.push_str(&format!("{},{m},{n},{}\n", s.grid.slide_id(), 100.0 * m as f64 / n as f64));
        matching += m;
        total += n;
    }
    if total == 0 {
        return Err(CliError::Data("no test slide has labeled 2 mm truth regions".into()));
    }
    text.push_str(&format!("pooled,{matching},{total},{}\n", 100.0 * matching as f64 / total as f64));
    log::info!("pooled 2 mm agreement {:.2}%", 100.0 * matching as f64 / total as f64);
    write_file(&out.join("agreement.csv"), text)
}

/// Runs the composition sweep; the default list is the thirteen-row grid.
pub fn sweep(
    paths: &DataPaths,
    settings: &Settings,
    out: &Path,
    list: Option<&Path>,
    parallel: Option<usize>,
) -> Result<()> {
    let alphas = match list {
        Some(p) => parse_sweep_list(&read_text(p)?)?,
        None => parse_sweep_list(DEFAULT_SWEEP)?,
    };
    settings.train_config()?;
    let cohort = prepare(paths, settings)?;
    let csv = run_sweep(&cohort, &alphas, settings, out, parallel)?;
    write_file(&out.join("sweep.csv"), csv)
}

/// Writes attention and 2 mm region maps for the chosen slides (all test
/// slides by default).
pub fn heatmap(
    paths: &DataPaths,
    settings: &Settings,
    checkpoint: &Path,
    out: &Path,
    slide_ids: &[String],
) -> Result<()> {
    let slides = load_cohort(paths, settings)?;
    let params = read_checkpoint(checkpoint)?;
    for id in slide_ids {
        if !slides.iter().any(|s| s.grid.slide_id() == id) {
            return Err(CliError::Config(format!("unknown slide {id}")));
        }
    }
    let chosen = slides.iter().filter(|s| {
        if slide_ids.is_empty() {
            s.split == Split::Test
        } else {
            slide_ids.iter().any(|id| id == s.grid.slide_id())
        }
    });
    for s in chosen {
        if s.store.dim() != params.dim() {
            return Err(CliError::Data(format!("slide {} does not match the checkpoint dimension", s.grid.slide_id())));
        }
        let maps = export_heatmap(&params, &s.grid, &s.store)?;
        write_heatmaps(out, s.grid.slide_id(), &maps)?;
    }
    Ok(())
}
