//! Synthetic planted-lesion cohorts with full patch-level ground truth.
//!
//! Each slide is a fully tissued grid. Stroma is laid down as random
//! rectangles until it covers `stroma_fraction` of the grid; the rest is
//! normal. Positive slides then receive one to three rectangular tumor
//! lesions. Patch embeddings are Gaussian around one of three class means:
//!
//! ```text
//! mu_tumor  = +delta/2 * e0
//! mu_normal = -delta/2 * e0
//! mu_stroma = +delta/2 * e1
//! ```
//!
//! so `|mu_tumor - mu_normal| = delta` and stroma sits halfway between the two
//! along the tumor axis. A uniform random subset of patches is annotated with
//! its true kind.
//!
//! The module also carries brute-force labelers that scan the raw patch grid
//! directly, used to cross-check the bagging rules.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::bagging::{PatchAnnotation, RegionLabel, TissueKind};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::geometry::{Context, Patch, SlideGrid};
use crate::rng::{stream_rng, streams, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_slides: usize,
    pub grid_rows: u32,
    pub grid_cols: u32,
    /// Embedding width, at least 2.
    pub d: usize,
    /// Fraction of slides carrying lesions (rounded to a slide count).
    pub lesion_rate: f64,
    /// Inclusive range of lesion side lengths in patches.
    pub lesion_side_range: (u32, u32),
    pub delta: f64,
    pub sigma: f64,
    pub stroma_fraction: f64,
    pub annotation_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_slides: 60,
            grid_rows: 32,
            grid_cols: 32,
            d: 16,
            lesion_rate: 0.5,
            lesion_side_range: (8, 16),
            delta: 4.0,
            sigma: 1.0,
            stroma_fraction: 0.3,
            annotation_fraction: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64, name: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")))
            }
        };
        frac(self.lesion_rate, "lesion_rate")?;
        frac(self.stroma_fraction, "stroma_fraction")?;
        frac(self.annotation_fraction, "annotation_fraction")?;
        if self.n_slides == 0 || self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InvalidConfig("cohort and grid sizes must be positive".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidConfig("embedding width must be at least 2".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig("delta must be finite and nonnegative".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        let (lo, hi) = self.lesion_side_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad lesion side range {lo}..={hi}")));
        }
        if self.lesion_rate > 0.0 && (hi > self.grid_rows || hi > self.grid_cols) {
            return Err(Error::LesionDoesNotFit { side: hi, rows: self.grid_rows, cols: self.grid_cols });
        }
        Ok(())
    }

    /// Class mean of a tissue kind.
    pub fn class_mean(&self, kind: TissueKind) -> Vec<f64> {
        let mut mu = alloc::vec![0.0; self.d];
        let h = self.delta / 2.0;
        match kind {
            TissueKind::Tumor => mu[0] = h,
            TissueKind::Normal => mu[0] = -h,
            TissueKind::Stroma => mu[1] = h,
        }
        mu
    }
}

/// One synthetic slide with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSlide {
    pub grid: SlideGrid,
    /// True kind of every tissue patch; tumor marks the latent positive
    /// instances.
    pub truth: BTreeMap<Patch, TissueKind>,
    /// Sparse annotations, row-major, each matching `truth`.
    pub annotations: Vec<PatchAnnotation>,
    pub embeddings: EmbeddingStore,
}

fn paint(kinds: &mut [TissueKind], cols: u32, top: u32, left: u32, h: u32, w: u32, kind: TissueKind) {
    for r in top..top + h {
        for c in left..left + w {
            kinds[(r * cols + c) as usize] = kind;
        }
    }
}

fn generate_slide(cfg: &SynthConfig, index: usize, positive: bool) -> Result<SynthSlide> {
    let mut rng: Rng = stream_rng(cfg.seed, streams::SYNTH_BASE + index as u64);
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let n = (rows * cols) as usize;
    let mut kinds = alloc::vec![TissueKind::Normal; n];

    let stroma_target = libm::round(cfg.stroma_fraction * n as f64) as usize;
    let max_side = (rows.min(cols) / 2).max(1);
    let min_side = 4.min(max_side);
    let mut stroma = 0usize;
    while stroma < stroma_target {
        let h = rng.random_range(min_side..=max_side).min(rows);
        let w = rng.random_range(min_side..=max_side).min(cols);
        let top = rng.random_range(0..=rows - h);
        let left = rng.random_range(0..=cols - w);
        paint(&mut kinds, cols, top, left, h, w, TissueKind::Stroma);
        stroma = kinds.iter().filter(|k| **k == TissueKind::Stroma).count();
    }

    if positive {
        let (lo, hi) = cfg.lesion_side_range;
        for _ in 0..rng.random_range(1..=3u32) {
            let h = rng.random_range(lo..=hi);
            let w = rng.random_range(lo..=hi);
            let top = rng.random_range(0..=rows - h);
            let left = rng.random_range(0..=cols - w);
            paint(&mut kinds, cols, top, left, h, w, TissueKind::Tumor);
        }
    }

    let id = format!("synth-{index:04}");
    let grid = SlideGrid::full(id.clone(), rows, cols, positive)?;
    let means = [TissueKind::Tumor, TissueKind::Normal, TissueKind::Stroma].map(|k| cfg.class_mean(k));
    let mut store = EmbeddingStore::new(cfg.d);
    let mut truth = BTreeMap::new();
    let mut values = alloc::vec![0f32; cfg.d];
    for (p, &kind) in grid.tissue().iter().zip(&kinds) {
        let mu = &means[kind as usize];
        for (v, m) in values.iter_mut().zip(mu) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = (m + cfg.sigma * noise) as f32;
        }
        store.insert(*p, &values)?;
        truth.insert(*p, kind);
    }

    let n_ann = libm::round(cfg.annotation_fraction * n as f64) as usize;
    let mut picked = index::sample(&mut rng, n, n_ann).into_vec();
    picked.sort_unstable();
    let annotations = picked
        .into_iter()
        .map(|i| {
            let p = grid.tissue()[i];
            PatchAnnotation { slide_id: id.clone(), patch: p, kind: kinds[i] }
        })
        .collect();
    Ok(SynthSlide { grid, truth, annotations, embeddings: store })
}

/// Generates the cohort. Which slides carry lesions is drawn from the cohort
/// seed; each slide then draws from its own stream, so the output is fully
/// determined by the configuration.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<SynthSlide>> {
    config.validate()?;
    let n_pos = libm::round(config.lesion_rate * config.n_slides as f64) as usize;
    let mut positive = alloc::vec![false; config.n_slides];
    positive[..n_pos].iter_mut().for_each(|p| *p = true);
    positive.shuffle(&mut stream_rng(config.seed, streams::SYNTH_BASE - 1));
    positive
        .into_iter()
        .enumerate()
        .map(|(i, pos)| generate_slide(config, i, pos))
        .collect()
}

const ORACLE_MIN_PATCHES: u32 = 26;

fn oracle_side(context: Context) -> Option<u32> {
    match context {
        Context::Mm1 => Some(8),
        Context::Mm2 => Some(16),
        Context::Mm4 => Some(32),
        Context::Slide => None,
    }
}

/// Brute-force region labels from the slide's sparse annotations: for every
/// region, scans every grid cell and applies the labeling rule to the counts.
/// Returns an empty map for the slide context.
pub fn oracle_region_labels(slide: &SynthSlide, context: Context) -> BTreeMap<(u32, u32), RegionLabel> {
    let mut out = BTreeMap::new();
    let Some(side) = oracle_side(context) else { return out };
    let (rows, cols) = (slide.grid.n_rows(), slide.grid.n_cols());
    let lookup: BTreeMap<(u32, u32), TissueKind> =
        slide.annotations.iter().map(|a| ((a.patch.row, a.patch.col), a.kind)).collect();
    let region_rows = rows.div_ceil(side);
    let region_cols = cols.div_ceil(side);
    for rr in 0..region_rows {
        for rc in 0..region_cols {
            let (mut tumor, mut normal, mut stroma) = (0u32, 0u32, 0u32);
            for r in 0..rows {
                for c in 0..cols {
                    if r / side != rr || c / side != rc {
                        continue;
                    }
                    match lookup.get(&(r, c)) {
                        Some(TissueKind::Tumor) => tumor += 1,
                        Some(TissueKind::Normal) => normal += 1,
                        Some(TissueKind::Stroma) => stroma += 1,
                        None => {}
                    }
                }
            }
            let ann = tumor + normal + stroma;
            let label = if ann < ORACLE_MIN_PATCHES {
                RegionLabel::Invalid
            } else if tumor >= ORACLE_MIN_PATCHES {
                RegionLabel::Cancer
            } else if tumor == 0 && (normal * 2 >= ann || stroma == ann) {
                RegionLabel::NonCancer
            } else {
                RegionLabel::Ambiguous
            };
            out.insert((rr, rc), label);
        }
    }
    out
}

/// Ground-truth region labels from the full patch truth: positive with at
/// least 26 tumor patches, negative when tumor-free, absent otherwise (and
/// absent for regions without tissue).
pub fn oracle_truth_region_labels(slide: &SynthSlide, context: Context) -> BTreeMap<(u32, u32), bool> {
    truth_region_labels(&slide.truth, context)
}

/// [`oracle_truth_region_labels`] over a bare patch-to-kind map, e.g. one read
/// back from a truth file.
pub fn truth_region_labels(truth: &BTreeMap<Patch, TissueKind>, context: Context) -> BTreeMap<(u32, u32), bool> {
    let mut counts: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let Some(side) = oracle_side(context) else { return BTreeMap::new() };
    for (p, kind) in truth {
        *counts.entry((p.row / side, p.col / side)).or_default() += u32::from(*kind == TissueKind::Tumor);
    }
    counts
        .into_iter()
        .filter_map(|(region, tumor)| match tumor {
            0 => Some((region, false)),
            t if t >= ORACLE_MIN_PATCHES => Some((region, true)),
            _ => None,
        })
        .collect()
}
