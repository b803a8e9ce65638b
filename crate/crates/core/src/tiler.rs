//! Region-to-patch partitioning.
//!
//! Regions whose bounding box exceeds [`LARGE_REGION_PX`] on either axis are
//! first cut into [`LARGE_CHUNK_SIDE`] chunks, each of which is then gridded
//! into patch-sized cells. The chunk grid and the cell grid share the same
//! anchor (the region bounding-box origin), so the chunked and direct grids
//! produce the same cells.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotations::{ConsideredRegion, Magnification};
use crate::class::ClassLabel;
use crate::error::{Error, Result};
use crate::geometry::{Rect, Shape, AREA_EPS};
use crate::par;

pub const LARGE_REGION_PX: u64 = 10_000;
pub const LARGE_CHUNK_SIDE: u32 = 4096;
pub const DEFAULT_MIN_AREA_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub roi_width: u64,
    pub roi_height: u64,
    pub magnification: Magnification,
    pub chunk_side: u32,
    pub patch_side: u32,
}

impl PartitionPlan {
    pub fn new(roi_width: u64, roi_height: u64, magnification: Magnification) -> Result<Self> {
        let chunk_side = choose_chunk_side(roi_width, roi_height, magnification.value())?;
        Ok(PartitionPlan { roi_width, roi_height, magnification, chunk_side, patch_side: magnification.patch_side() })
    }

    pub fn for_region(region: &ConsideredRegion) -> Result<Self> {
        let (_, _, w, h) = grid_extent(region)?;
        PartitionPlan::new(w, h, region.magnification)
    }

    pub fn is_chunked(&self) -> bool {
        self.chunk_side != self.patch_side
    }
}

/// Side of the first-level partition for a region of the given size.
pub fn choose_chunk_side(roi_width: u64, roi_height: u64, magnification: u32) -> Result<u32> {
    let mag = Magnification::try_from(magnification)?;
    if roi_width == 0 || roi_height == 0 {
        return Err(Error::InvalidInput(format!("empty region {roi_width}x{roi_height}")));
    }
    if roi_width > LARGE_REGION_PX || roi_height > LARGE_REGION_PX {
        Ok(LARGE_CHUNK_SIDE)
    } else {
        Ok(mag.patch_side())
    }
}

/// Square cell in level-0 pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchBox {
    pub x: u64,
    pub y: u64,
    pub side: u32,
}

impl PatchBox {
    pub fn rect(&self) -> Rect {
        Rect::square(self.x as f64, self.y as f64, self.side as f64)
    }
}

impl std::fmt::Display for PatchBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, side {})", self.x, self.y, self.side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePatch {
    pub wsi_id: String,
    pub class_label: ClassLabel,
    pub bbox: PatchBox,
    pub clipped: Shape,
    pub area_fraction: f64,
}

/// Grid anchor and extent: (origin x, origin y, width, height) in whole pixels.
fn grid_extent(region: &ConsideredRegion) -> Result<(u64, u64, u64, u64)> {
    let b =
        region.shape.bbox().ok_or_else(|| Error::InvalidInput(format!("region on {} has no area", region.wsi_id)))?;
    if b.x0 < 0.0 || b.y0 < 0.0 {
        return Err(Error::InvalidInput(format!("region on {} has negative coordinates", region.wsi_id)));
    }
    let ox = b.x0.floor();
    let oy = b.y0.floor();
    let w = (b.x1 - ox).ceil().max(1.0) as u64;
    let h = (b.y1 - oy).ceil().max(1.0) as u64;
    Ok((ox as u64, oy as u64, w, h))
}

fn cell(shape: &Shape, region: &ConsideredRegion, x: u64, y: u64, side: u32) -> Option<CandidatePatch> {
    let bbox = PatchBox { x, y, side };
    let clipped = shape.clip_to_rect(&bbox.rect());
    let area = clipped.area();
    if area <= AREA_EPS {
        return None;
    }
    Some(CandidatePatch {
        wsi_id: region.wsi_id.clone(),
        class_label: region.class_label,
        bbox,
        clipped,
        area_fraction: (area / (side as f64 * side as f64)).min(1.0),
    })
}

fn row_major(patches: &mut [CandidatePatch]) {
    patches.sort_by_key(|p| (p.bbox.y, p.bbox.x));
}

/// Cells of `patch_side` over the region bounding box, each clipped against the
/// full region shape. Row-major order.
pub fn grid_direct(region: &ConsideredRegion, patch_side: u32) -> Result<Vec<CandidatePatch>> {
    let (ox, oy, w, h) = grid_extent(region)?;
    let side = patch_side as u64;
    let cols = w.div_ceil(side);
    let rows = h.div_ceil(side);
    let per_row = par::map_range(rows as usize, |r| {
        (0..cols)
            .filter_map(|c| cell(&region.shape, region, ox + c * side, oy + r as u64 * side, patch_side))
            .collect::<Vec<_>>()
    });
    Ok(per_row.into_iter().flatten().collect())
}

/// One first-level chunk of the hierarchical partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub x: u64,
    pub y: u64,
    pub side: u32,
}

fn chunk_grid(region: &ConsideredRegion, chunk_side: u32, patch_side: u32) -> Result<(Vec<Chunk>, u64, u64, u64, u64)> {
    if chunk_side == 0 || patch_side == 0 || !chunk_side.is_multiple_of(patch_side) {
        return Err(Error::InvalidInput(format!(
            "chunk side {chunk_side} must be a positive multiple of patch side {patch_side}"
        )));
    }
    let (ox, oy, w, h) = grid_extent(region)?;
    let cs = chunk_side as u64;
    let mut chunks = Vec::new();
    for r in 0..h.div_ceil(cs) {
        for c in 0..w.div_ceil(cs) {
            chunks.push(Chunk { x: ox + c * cs, y: oy + r * cs, side: chunk_side });
        }
    }
    Ok((chunks, ox, oy, w, h))
}

fn chunk_cells(
    region: &ConsideredRegion,
    chunk: Chunk,
    patch_side: u32,
    ox: u64,
    oy: u64,
    w: u64,
    h: u64,
) -> Vec<CandidatePatch> {
    let sub = region.shape.clip_to_rect(&Rect::square(chunk.x as f64, chunk.y as f64, chunk.side as f64));
    if sub.is_empty() {
        return Vec::new();
    }
    let side = patch_side as u64;
    let x_end = (chunk.x + chunk.side as u64).min(ox + w.div_ceil(side) * side);
    let y_end = (chunk.y + chunk.side as u64).min(oy + h.div_ceil(side) * side);
    let mut out = Vec::new();
    let mut y = chunk.y;
    while y < y_end {
        let mut x = chunk.x;
        while x < x_end {
            if let Some(p) = cell(&sub, region, x, y, patch_side) {
                out.push(p);
            }
            x += side;
        }
        y += side;
    }
    out
}

/// Two-level partition: `chunk_side` chunks first, each subdivided into
/// `patch_side` cells. Chunks are processed in parallel; output is row-major.
pub fn grid_hierarchical(region: &ConsideredRegion, chunk_side: u32, patch_side: u32) -> Result<Vec<CandidatePatch>> {
    let (chunks, ox, oy, w, h) = chunk_grid(region, chunk_side, patch_side)?;
    let mut out: Vec<CandidatePatch> =
        par::map(&chunks, |&c| chunk_cells(region, c, patch_side, ox, oy, w, h)).into_iter().flatten().collect();
    row_major(&mut out);
    Ok(out)
}

/// Streams the hierarchical partition one chunk at a time (chunk row-major),
/// so very large regions never hold their whole cell list.
pub fn partition_chunks(region: &ConsideredRegion) -> Result<impl Iterator<Item = Vec<CandidatePatch>> + '_> {
    let plan = PartitionPlan::for_region(region)?;
    let (chunks, ox, oy, w, h) = chunk_grid(region, plan.chunk_side, plan.patch_side)?;
    Ok(chunks.into_iter().map(move |c| chunk_cells(region, c, plan.patch_side, ox, oy, w, h)))
}

/// Partitions a considered region into candidate patches, row-major.
pub fn partition_region(region: &ConsideredRegion) -> Result<Vec<CandidatePatch>> {
    let plan = PartitionPlan::for_region(region)?;
    if plan.is_chunked() {
        grid_hierarchical(region, plan.chunk_side, plan.patch_side)
    } else {
        grid_direct(region, plan.patch_side)
    }
}

/// Keeps patches whose clipped area fraction is at least `min_fraction`.
pub fn area_filter(patches: Vec<CandidatePatch>, min_fraction: f64) -> Vec<CandidatePatch> {
    patches.into_iter().filter(|p| p.area_fraction >= min_fraction).collect()
}

pub fn write_patch_index<'a, W: Write>(
    mut w: W,
    rows: impl IntoIterator<Item = (&'a str, ClassLabel, PatchBox, f64)>,
) -> std::io::Result<()> {
    writeln!(w, "wsi_id,class,x,y,side,area_fraction")?;
    for (wsi, class, b, frac) in rows {
        writeln!(w, "{wsi},{class},{},{},{},{frac:.6}", b.x, b.y, b.side)?;
    }
    Ok(())
}
