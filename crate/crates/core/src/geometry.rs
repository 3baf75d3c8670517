//! Patch lattice and millimeter-scale region tiling.
//!
//! Slides are tiled at 20x into 256 px patches (0.5 um/px, so 0.128 mm per
//! patch side). Regional contexts are squares of 8, 16 and 32 patches per
//! side, nominally 1, 2 and 4 mm. Frames are anchored at patch (0, 0) and laid
//! out row-major; frames touching the bottom or right edge may be partial.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Patch side in pixels at the working magnification.
pub const PATCH_SIDE_PX: u32 = 256;
/// Pixel pitch in nanometers (0.5 um/px).
pub const PIXEL_PITCH_NM: u32 = 500;

/// A patch coordinate on the slide lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Patch {
    pub row: u32,
    pub col: u32,
}

impl Patch {
    pub const fn new(row: u32, col: u32) -> Self {
        Patch { row, col }
    }
}

/// Supervision context. The derived ordering is the granularity-first order:
/// `Mm1 < Mm2 < Mm4 < Slide`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    Mm1,
    Mm2,
    Mm4,
    Slide,
}

impl Context {
    /// Column order of result tables: slide, 4 mm, 2 mm, 1 mm.
    pub const TABLE_ORDER: [Context; 4] = [Context::Slide, Context::Mm4, Context::Mm2, Context::Mm1];
    /// Finest first.
    pub const GRANULARITY_ORDER: [Context; 4] =
        [Context::Mm1, Context::Mm2, Context::Mm4, Context::Slide];
    pub const REGIONAL: [Context; 3] = [Context::Mm1, Context::Mm2, Context::Mm4];

    pub fn is_regional(self) -> bool {
        self != Context::Slide
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Context::Slide => "slide",
            Context::Mm4 => "4mm",
            Context::Mm2 => "2mm",
            Context::Mm1 => "1mm",
        }
    }

    /// Position in [`Context::TABLE_ORDER`].
    pub fn table_index(self) -> usize {
        match self {
            Context::Slide => 0,
            Context::Mm4 => 1,
            Context::Mm2 => 2,
            Context::Mm1 => 3,
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Context {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slide" => Ok(Context::Slide),
            "4mm" => Ok(Context::Mm4),
            "2mm" => Ok(Context::Mm2),
            "1mm" => Ok(Context::Mm1),
            other => Err(Error::InvalidConfig(alloc::format!("unknown context {other:?}"))),
        }
    }
}

/// A slide's patch lattice together with its tissue patches and slide label.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideGrid {
    slide_id: String,
    n_rows: u32,
    n_cols: u32,
    /// Sorted row-major, duplicate-free.
    tissue: Vec<Patch>,
    label: bool,
}

impl SlideGrid {
    pub fn new(
        slide_id: impl Into<String>,
        n_rows: u32,
        n_cols: u32,
        mut tissue: Vec<Patch>,
        label: bool,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        let invalid = |reason: String| Error::InvalidGrid { slide: slide_id.clone(), reason };
        if n_rows == 0 || n_cols == 0 {
            return Err(invalid("grid must have at least one row and column".to_string()));
        }
        if tissue.is_empty() {
            return Err(invalid("tissue set is empty".to_string()));
        }
        tissue.sort_unstable();
        for pair in tissue.windows(2) {
            if pair[0] == pair[1] {
                return Err(invalid(alloc::format!(
                    "duplicate tissue patch ({}, {})",
                    pair[0].row,
                    pair[0].col
                )));
            }
        }
        if let Some(p) = tissue.iter().find(|p| p.row >= n_rows || p.col >= n_cols) {
            return Err(invalid(alloc::format!(
                "tissue patch ({}, {}) outside {}x{} grid",
                p.row,
                p.col,
                n_rows,
                n_cols
            )));
        }
        Ok(SlideGrid { slide_id, n_rows, n_cols, tissue, label })
    }

    /// A grid where every patch is tissue.
    pub fn full(slide_id: impl Into<String>, n_rows: u32, n_cols: u32, label: bool) -> Result<Self> {
        let tissue = (0..n_rows)
            .flat_map(|row| (0..n_cols).map(move |col| Patch::new(row, col)))
            .collect();
        SlideGrid::new(slide_id, n_rows, n_cols, tissue, label)
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    /// Tissue patches in row-major order.
    pub fn tissue(&self) -> &[Patch] {
        &self.tissue
    }

    pub fn is_tissue(&self, patch: Patch) -> bool {
        self.tissue.binary_search(&patch).is_ok()
    }

    pub fn label(&self) -> bool {
        self.label
    }

    pub fn is_full(&self) -> bool {
        self.tissue.len() as u64 == u64::from(self.n_rows) * u64::from(self.n_cols)
    }

    /// Tissue patches falling inside `frame`, row-major.
    pub fn tissue_in(&self, frame: &RegionFrame) -> Vec<Patch> {
        let start = self
            .tissue
            .partition_point(|p| p.row < frame.patch_rows.start);
        self.tissue[start..]
            .iter()
            .take_while(|p| p.row < frame.patch_rows.end)
            .filter(|p| frame.patch_cols.contains(&p.col))
            .copied()
            .collect()
    }
}

/// One square region of a regional tiling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionFrame {
    pub context: Context,
    pub region_row: u32,
    pub region_col: u32,
    pub patch_rows: Range<u32>,
    pub patch_cols: Range<u32>,
}

impl RegionFrame {
    pub fn contains(&self, patch: Patch) -> bool {
        self.patch_rows.contains(&patch.row) && self.patch_cols.contains(&patch.col)
    }

    pub fn n_patches(&self) -> u64 {
        u64::from(self.patch_rows.len() as u32) * u64::from(self.patch_cols.len() as u32)
    }

    pub fn index(&self) -> (u32, u32) {
        (self.region_row, self.region_col)
    }
}

/// Region side length in patches: 8, 16 or 32.
pub fn region_side_patches(context: Context) -> Result<u32> {
    match context {
        Context::Mm1 => Ok(8),
        Context::Mm2 => Ok(16),
        Context::Mm4 => Ok(32),
        Context::Slide => Err(Error::SlideContextHasNoSide),
    }
}

/// Number of region rows and columns needed to cover the grid.
pub fn region_counts(n_rows: u32, n_cols: u32, context: Context) -> Result<(u32, u32)> {
    let side = region_side_patches(context)?;
    Ok((n_rows.div_ceil(side), n_cols.div_ceil(side)))
}

/// Tiles the grid into non-overlapping frames, row-major, keeping partial
/// boundary frames.
pub fn partition_regions(grid: &SlideGrid, context: Context) -> Result<Vec<RegionFrame>> {
    let side = region_side_patches(context)?;
    let (rows, cols) = region_counts(grid.n_rows, grid.n_cols, context)?;
    let mut frames = Vec::with_capacity((rows * cols) as usize);
    for region_row in 0..rows {
        for region_col in 0..cols {
            let r0 = region_row * side;
            let c0 = region_col * side;
            frames.push(RegionFrame {
                context,
                region_row,
                region_col,
                patch_rows: r0..(r0 + side).min(grid.n_rows),
                patch_cols: c0..(c0 + side).min(grid.n_cols),
            });
        }
    }
    Ok(frames)
}

/// The frame index containing a patch.
pub fn patch_to_region(row: u32, col: u32, context: Context) -> Result<(u32, u32)> {
    let side = region_side_patches(context)?;
    Ok((row / side, col / side))
}

/// The frame with the given index, clipped to the grid.
pub fn region_frame(grid: &SlideGrid, context: Context, region: (u32, u32)) -> Result<RegionFrame> {
    let side = region_side_patches(context)?;
    let (rows, cols) = region_counts(grid.n_rows, grid.n_cols, context)?;
    if region.0 >= rows || region.1 >= cols {
        return Err(Error::RegionOutsideGrid { row: region.0, col: region.1 });
    }
    let r0 = region.0 * side;
    let c0 = region.1 * side;
    Ok(RegionFrame {
        context,
        region_row: region.0,
        region_col: region.1,
        patch_rows: r0..(r0 + side).min(grid.n_rows),
        patch_cols: c0..(c0 + side).min(grid.n_cols),
    })
}
