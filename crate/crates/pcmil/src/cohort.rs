//! Loading a cohort from its files and writing synthetic cohorts in the same
//! layout.
//!
//! ```text
//! DIR/manifest.jsonl      one slide per line
//! DIR/tissue.jsonl        tissue patches of slides without `all_tissue`
//! DIR/annotations.jsonl   sparse patch annotations
//! DIR/truth.jsonl         full patch truth (synthetic cohorts only)
//! DIR/embeddings/ID.pcm1  one embedding store per slide
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use pcmil_core::allocation::stratified_split;
use pcmil_core::bagging::{PatchAnnotation, Split, TissueKind};
use pcmil_core::experiment::CohortSlide;
use pcmil_core::rng::{stream_rng, streams};
use pcmil_core::synthcohort::SynthSlide;
use pcmil_core::{Patch, SlideGrid};

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::io::binary::{read_embeddings, write_embeddings};
use crate::io::jsonl::{parse_label, parse_split, read_jsonl, write_jsonl, AnnotationRecord, ManifestRecord, TissueRecord};

/// Input locations. Optional files that do not exist are treated as empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPaths {
    pub manifest: PathBuf,
    pub tissue: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub embeddings: PathBuf,
    pub truth: Option<PathBuf>,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            manifest: dir.join("manifest.jsonl"),
            tissue: Some(dir.join("tissue.jsonl")),
            annotations: Some(dir.join("annotations.jsonl")),
            embeddings: dir.join("embeddings"),
            truth: Some(dir.join("truth.jsonl")),
        }
    }

    pub fn embedding_file(&self, slide_id: &str) -> PathBuf {
        self.embeddings.join(format!("{slide_id}.pcm1"))
    }
}

fn existing(path: &Option<PathBuf>) -> Option<&Path> {
    path.as_deref().filter(|p| p.exists())
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::Data(format!("slide id {id:?} is not a plain file name")))
    }
}

fn group_by_slide<T>(
    items: Vec<T>,
    ids: &BTreeSet<&str>,
    id_of: impl Fn(&T) -> &str,
    what: &str,
) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for item in items {
        let id = id_of(&item);
        if !ids.contains(id) {
            return Err(CliError::Data(format!("{what} for unknown slide {id}")));
        }
        out.entry(id.to_string()).or_default().push(item);
    }
    Ok(out)
}

/// Reads the manifest, tissue, annotations and embeddings. Splits come from
/// the manifest when every record carries one, otherwise they are drawn by a
/// seeded label-stratified split.
pub fn load_cohort(paths: &DataPaths, settings: &Settings) -> Result<Vec<CohortSlide>> {
    let manifest: Vec<ManifestRecord> = read_jsonl(&paths.manifest)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!("{} lists no slides", paths.manifest.display())));
    }
    let mut ids = BTreeSet::new();
    for r in &manifest {
        check_id(&r.id)?;
        if !ids.insert(r.id.as_str()) {
            return Err(CliError::Data(format!("slide {} listed twice", r.id)));
        }
    }
    let labels = manifest.iter().map(|r| parse_label(r.label, &r.id)).collect::<Result<Vec<_>>>()?;

    let splits = match manifest.iter().filter(|r| r.split.is_some()).count() {
        0 => stratified_split(
            &labels,
            settings.val_fraction,
            settings.test_fraction,
            &mut stream_rng(settings.seed, streams::SPLIT),
        )?,
        n if n == manifest.len() => {
            manifest.iter().map(|r| parse_split(r.split.as_deref().unwrap())).collect::<Result<_>>()?
        }
        _ => return Err(CliError::Data("either every manifest record has a split or none does".into())),
    };

    let mut tissue = BTreeMap::new();
    if manifest.iter().any(|r| !r.all_tissue) {
        let path = existing(&paths.tissue)
            .ok_or_else(|| CliError::Config("manifest needs a tissue list but none was found".into()))?;
        let records: Vec<TissueRecord> = read_jsonl(path)?;
        tissue = group_by_slide(records, &ids, |r| &r.id, "tissue patch")?;
    }
    let mut annotations = BTreeMap::new();
    if let Some(path) = existing(&paths.annotations) {
        let records: Vec<AnnotationRecord> = read_jsonl(path)?;
        annotations = group_by_slide(records, &ids, |r| &r.id, "annotation")?;
    }

    let mut slides = Vec::with_capacity(manifest.len());
    let mut dim = None;
    for ((r, label), split) in manifest.iter().zip(labels).zip(splits) {
        let grid = if r.all_tissue {
            SlideGrid::full(r.id.clone(), r.rows, r.cols, label)?
        } else {
            let patches = tissue.get(&r.id).map_or(Vec::new(), |t| t.iter().map(|p| Patch::new(p.row, p.col)).collect());
            SlideGrid::new(r.id.clone(), r.rows, r.cols, patches, label)?
        };
        let annotations: Vec<PatchAnnotation> = annotations
            .get(&r.id)
            .map_or(Ok(Vec::new()), |a| a.iter().map(AnnotationRecord::to_annotation).collect())?;
        let store = read_embeddings(&paths.embedding_file(&r.id))?;
        if *dim.get_or_insert(store.dim()) != store.dim() {
            return Err(CliError::Data(format!("slide {} embeddings have a different dimension", r.id)));
        }
        slides.push(CohortSlide { grid, split, annotations, store });
    }
    Ok(slides)
}

/// Full patch truth per slide, from a file in annotation format.
pub fn load_truth(path: &Path) -> Result<BTreeMap<String, BTreeMap<Patch, TissueKind>>> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    let mut out: BTreeMap<String, BTreeMap<Patch, TissueKind>> = BTreeMap::new();
    for r in records {
        let a = r.to_annotation()?;
        if out.entry(a.slide_id).or_default().insert(a.patch, a.kind).is_some() {
            return Err(CliError::Data(format!("truth for slide {} repeats ({}, {})", r.id, r.row, r.col)));
        }
    }
    Ok(out)
}

/// Writes a synthetic cohort in the layout read by [`load_cohort`].
pub fn write_synth_cohort(dir: &Path, slides: &[SynthSlide], splits: &[Split]) -> Result<()> {
    let paths = DataPaths::in_dir(dir);
    let manifest: Vec<ManifestRecord> = slides
        .iter()
        .zip(splits)
        .map(|(s, split)| ManifestRecord {
            id: s.grid.slide_id().into(),
            rows: s.grid.n_rows(),
            cols: s.grid.n_cols(),
            label: u8::from(s.grid.label()),
            all_tissue: s.grid.is_full(),
            split: Some(split.as_str().into()),
        })
        .collect();
    write_jsonl(&paths.manifest, &manifest)?;
    let tissue: Vec<TissueRecord> = slides
        .iter()
        .filter(|s| !s.grid.is_full())
        .flat_map(|s| s.grid.tissue().iter().map(|p| TissueRecord { id: s.grid.slide_id().into(), row: p.row, col: p.col }))
        .collect();
    if !tissue.is_empty() {
        write_jsonl(paths.tissue.as_deref().unwrap(), &tissue)?;
    }
    let annotations: Vec<AnnotationRecord> =
        slides.iter().flat_map(|s| s.annotations.iter().map(AnnotationRecord::from_annotation)).collect();
    write_jsonl(paths.annotations.as_deref().unwrap(), &annotations)?;
    let truth: Vec<AnnotationRecord> = slides
        .iter()
        .flat_map(|s| {
            s.truth.iter().map(|(p, kind)| AnnotationRecord {
                id: s.grid.slide_id().into(),
                row: p.row,
                col: p.col,
                kind: kind.as_str().into(),
            })
        })
        .collect();
    write_jsonl(paths.truth.as_deref().unwrap(), &truth)?;
    for s in slides {
        write_embeddings(&paths.embedding_file(s.grid.slide_id()), &s.embeddings)?;
    }
    Ok(())
}
