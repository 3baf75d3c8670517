//! JSON-lines records: slide manifest, tissue list, annotations (also used for
//! full synthetic truth), bag manifest and context assignments.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pcmil_core::allocation::ContextAssignment;
use pcmil_core::bagging::{Bag, PatchAnnotation, Split, TissueKind};
use pcmil_core::Context;

use crate::error::{CliError, Result};
use crate::io::{read_text, write_file};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub rows: u32,
    pub cols: u32,
    pub label: u8,
    /// Every grid patch is tissue; no tissue-list entries are needed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_tissue: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TissueRecord {
    pub id: String,
    pub row: u32,
    pub col: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub row: u32,
    pub col: u32,
    pub kind: String,
}

impl AnnotationRecord {
    pub fn from_annotation(a: &PatchAnnotation) -> Self {
        AnnotationRecord { id: a.slide_id.clone(), row: a.patch.row, col: a.patch.col, kind: a.kind.as_str().into() }
    }

    pub fn to_annotation(&self) -> Result<PatchAnnotation> {
        let kind: TissueKind = self
            .kind
            .parse()
            .map_err(|_| CliError::Data(format!("unknown tissue kind {:?} for slide {}", self.kind, self.id)))?;
        Ok(PatchAnnotation::new(self.id.clone(), self.row, self.col, kind))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagRecord {
    pub id: String,
    pub context: String,
    pub region: Option<[u32; 2]>,
    pub label: u8,
    pub n_members: usize,
    pub split: String,
}

impl BagRecord {
    pub fn from_bag(b: &Bag) -> Self {
        BagRecord {
            id: b.slide_id.clone(),
            context: b.context.as_str().into(),
            region: b.region.map(|(r, c)| [r, c]),
            label: u8::from(b.label),
            n_members: b.len(),
            split: b.split.as_str().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub id: String,
    pub context: String,
}

pub fn assignment_records(assignment: &ContextAssignment) -> Vec<AssignmentRecord> {
    assignment
        .contexts
        .iter()
        .map(|(id, ctx)| AssignmentRecord { id: id.clone(), context: ctx.as_str().into() })
        .collect()
}

pub fn assignment_from_records(records: &[AssignmentRecord]) -> Result<ContextAssignment> {
    let mut out = ContextAssignment::default();
    for r in records {
        let ctx: Context =
            r.context.parse().map_err(|_| CliError::Data(format!("unknown context {:?} for slide {}", r.context, r.id)))?;
        if out.contexts.insert(r.id.clone(), ctx).is_some() {
            return Err(CliError::Data(format!("slide {} assigned twice", r.id)));
        }
    }
    Ok(out)
}

pub fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|_| CliError::Data(format!("unknown split {s:?}")))
}

pub fn parse_label(label: u8, id: &str) -> Result<bool> {
    match label {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(CliError::Data(format!("slide {id}: label must be 0 or 1, found {other}"))),
    }
}

/// Parses one record per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, source: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{source}:{}: {e}", i + 1))))
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        // serializing plain structs cannot fail
        writeln!(out, "{}", serde_json::to_string(r).expect("serializable record")).unwrap();
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_text(path)?, &path.display().to_string())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_file(path, to_jsonl(records))
}
