//! Annotation tallies, region labeling and bag construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::geometry::{self, Context, Patch, RegionFrame, SlideGrid};
use crate::matrix::Matrix;

/// Tissue class of an annotated (or ground-truth) patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TissueKind {
    Tumor,
    Normal,
    Stroma,
}

impl TissueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TissueKind::Tumor => "tumor",
            TissueKind::Normal => "normal",
            TissueKind::Stroma => "stroma",
        }
    }
}

impl FromStr for TissueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tumor" => Ok(TissueKind::Tumor),
            "normal" => Ok(TissueKind::Normal),
            "stroma" => Ok(TissueKind::Stroma),
            other => Err(Error::InvalidConfig(alloc::format!("unknown tissue kind {other:?}"))),
        }
    }
}

impl fmt::Display for TissueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchAnnotation {
    pub slide_id: String,
    pub patch: Patch,
    pub kind: TissueKind,
}

impl PatchAnnotation {
    pub fn new(slide_id: impl Into<String>, row: u32, col: u32, kind: TissueKind) -> Self {
        PatchAnnotation { slide_id: slide_id.into(), patch: Patch::new(row, col), kind }
    }
}

/// Annotated patch counts inside one region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegionStats {
    pub n_tumor: u32,
    pub n_normal: u32,
    pub n_stroma: u32,
    pub n_ann: u32,
}

impl RegionStats {
    pub fn new(n_tumor: u32, n_normal: u32, n_stroma: u32) -> Self {
        RegionStats { n_tumor, n_normal, n_stroma, n_ann: n_tumor + n_normal + n_stroma }
    }

    fn add(&mut self, kind: TissueKind) {
        match kind {
            TissueKind::Tumor => self.n_tumor += 1,
            TissueKind::Normal => self.n_normal += 1,
            TissueKind::Stroma => self.n_stroma += 1,
        }
        self.n_ann += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionLabel {
    Cancer,
    NonCancer,
    Ambiguous,
    Invalid,
}

impl RegionLabel {
    /// Bag label for usable regions, `None` for ambiguous or invalid ones.
    pub fn bag_label(self) -> Option<bool> {
        match self {
            RegionLabel::Cancer => Some(true),
            RegionLabel::NonCancer => Some(false),
            RegionLabel::Ambiguous | RegionLabel::Invalid => None,
        }
    }
}

/// Thresholds of the region labeling rule. The same count gates validity
/// (annotated patches) and the Cancer label (tumor patches) at every scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionRule {
    pub min_patches: u32,
}

impl Default for RegionRule {
    fn default() -> Self {
        RegionRule { min_patches: 26 }
    }
}

impl RegionRule {
    pub fn classify(&self, stats: &RegionStats) -> RegionLabel {
        if stats.n_ann < self.min_patches {
            RegionLabel::Invalid
        } else if stats.n_tumor >= self.min_patches {
            RegionLabel::Cancer
        } else if stats.n_tumor == 0
            && (2 * u64::from(stats.n_normal) >= u64::from(stats.n_ann)
                || stats.n_stroma == stats.n_ann)
        {
            RegionLabel::NonCancer
        } else {
            RegionLabel::Ambiguous
        }
    }
}

/// [`RegionRule::classify`] with the default threshold of 26.
pub fn classify_region(stats: &RegionStats) -> RegionLabel {
    RegionRule::default().classify(stats)
}

/// Counts annotations inside `frame`.
pub fn tally_region(annotations: &[PatchAnnotation], frame: &RegionFrame) -> Result<RegionStats> {
    let mut seen = BTreeSet::new();
    let mut stats = RegionStats::default();
    for a in annotations.iter().filter(|a| frame.contains(a.patch)) {
        if !seen.insert(a.patch) {
            return Err(conflict(a));
        }
        stats.add(a.kind);
    }
    Ok(stats)
}

fn conflict(a: &PatchAnnotation) -> Error {
    Error::ConflictingAnnotation {
        slide: a.slide_id.clone(),
        row: a.patch.row,
        col: a.patch.col,
    }
}

/// Checks that annotations belong to the slide, are unique per patch and lie
/// on tissue.
pub fn validate_annotations(grid: &SlideGrid, annotations: &[PatchAnnotation]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for a in annotations {
        if a.slide_id != grid.slide_id() {
            return Err(Error::ForeignAnnotation {
                expected: grid.slide_id().into(),
                found: a.slide_id.clone(),
            });
        }
        if !seen.insert(a.patch) {
            return Err(conflict(a));
        }
        if !grid.is_tissue(a.patch) {
            return Err(Error::AnnotationOutsideTissue {
                slide: a.slide_id.clone(),
                row: a.patch.row,
                col: a.patch.col,
            });
        }
    }
    Ok(())
}

/// A labeled region of a regional tiling.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRegion {
    pub frame: RegionFrame,
    pub stats: RegionStats,
    pub label: RegionLabel,
}

/// Tallies and labels every frame of the tiling in one pass over the
/// annotations.
pub fn label_regions(
    grid: &SlideGrid,
    annotations: &[PatchAnnotation],
    context: Context,
    rule: &RegionRule,
) -> Result<Vec<LabeledRegion>> {
    validate_annotations(grid, annotations)?;
    let frames = geometry::partition_regions(grid, context)?;
    let (_, region_cols) = geometry::region_counts(grid.n_rows(), grid.n_cols(), context)?;
    let mut stats = alloc::vec![RegionStats::default(); frames.len()];
    for a in annotations {
        let (rr, rc) = geometry::patch_to_region(a.patch.row, a.patch.col, context)?;
        stats[(rr * region_cols + rc) as usize].add(a.kind);
    }
    Ok(frames
        .into_iter()
        .zip(stats)
        .map(|(frame, stats)| LabeledRegion { label: rule.classify(&stats), frame, stats })
        .collect())
}

/// Contexts at which the slide can supervise: always `Slide`, plus every
/// regional context with at least one Cancer or NonCancer region.
pub fn usable_contexts(
    grid: &SlideGrid,
    annotations: &[PatchAnnotation],
    rule: &RegionRule,
) -> Result<BTreeSet<Context>> {
    let mut out = BTreeSet::new();
    out.insert(Context::Slide);
    for ctx in Context::REGIONAL {
        let regions = label_regions(grid, annotations, ctx, rule)?;
        if regions.iter().any(|r| r.label.bag_label().is_some()) {
            out.insert(ctx);
        }
    }
    Ok(out)
}

/// Dataset split of a slide; regional bags inherit their slide's split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(alloc::format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled set of patch embeddings at one supervision context.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub slide_id: String,
    pub context: Context,
    pub region: Option<(u32, u32)>,
    pub members: Vec<Patch>,
    /// One row per member.
    pub embeddings: Matrix,
    pub label: bool,
    pub split: Split,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Gathers member embeddings from the store, widening to `f64`.
pub fn gather_embeddings(
    slide_id: &str,
    members: &[Patch],
    store: &EmbeddingStore,
) -> Result<Matrix> {
    let dim = store.dim();
    let mut data = Vec::with_capacity(members.len() * dim);
    for &p in members {
        let e = store.get(p).ok_or_else(|| Error::MissingEmbedding {
            slide: slide_id.into(),
            row: p.row,
            col: p.col,
        })?;
        data.extend(e.iter().map(|&v| f64::from(v)));
    }
    Matrix::from_vec(members.len(), dim, data)
}

/// Builds the slide's bags at `context`.
///
/// The slide context yields one bag over all tissue patches labeled with the
/// slide label and needs no annotations. A regional context yields one bag per
/// Cancer or NonCancer region, holding every tissue patch in the frame,
/// annotated or not.
pub fn build_bags(
    grid: &SlideGrid,
    store: &EmbeddingStore,
    annotations: &[PatchAnnotation],
    context: Context,
    split: Split,
    rule: &RegionRule,
) -> Result<Vec<Bag>> {
    if context == Context::Slide {
        let members = grid.tissue().to_vec();
        let embeddings = gather_embeddings(grid.slide_id(), &members, store)?;
        return Ok(alloc::vec![Bag {
            slide_id: grid.slide_id().into(),
            context,
            region: None,
            members,
            embeddings,
            label: grid.label(),
            split,
        }]);
    }
    let mut bags = Vec::new();
    for region in label_regions(grid, annotations, context, rule)? {
        let Some(label) = region.label.bag_label() else { continue };
        let members = grid.tissue_in(&region.frame);
        if members.is_empty() {
            continue;
        }
        let embeddings = gather_embeddings(grid.slide_id(), &members, store)?;
        bags.push(Bag {
            slide_id: grid.slide_id().into(),
            context,
            region: Some(region.frame.index()),
            members,
            embeddings,
            label,
            split,
        });
    }
    Ok(bags)
}

/// Bag label per region index, for usable regions only.
pub fn usable_region_labels(
    grid: &SlideGrid,
    annotations: &[PatchAnnotation],
    context: Context,
    rule: &RegionRule,
) -> Result<BTreeMap<(u32, u32), bool>> {
    Ok(label_regions(grid, annotations, context, rule)?
        .into_iter()
        .filter_map(|r| r.label.bag_label().map(|l| (r.frame.index(), l)))
        .collect())
}
