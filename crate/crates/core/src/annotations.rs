//! Per-annotator region annotations and their resolution into considered
//! regions.
//!
//! Two annotations from different annotators agree when their labels match
//! and their polygons overlap with IoU at or above the threshold. Agreement is
//! closed transitively (connected components), which keeps the result
//! independent of input order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::error::{Error, Result};
use crate::geometry::{self, Point, Polygon, Shape, AREA_EPS};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Magnification {
    X20,
    X40,
}

impl Magnification {
    pub fn value(self) -> u32 {
        match self {
            Magnification::X20 => 20,
            Magnification::X40 => 40,
        }
    }

    /// Raw patch side cut at this magnification.
    pub fn patch_side(self) -> u32 {
        match self {
            Magnification::X20 => 256,
            Magnification::X40 => 512,
        }
    }
}

impl TryFrom<u32> for Magnification {
    type Error = Error;

    fn try_from(m: u32) -> Result<Self> {
        match m {
            20 => Ok(Magnification::X20),
            40 => Ok(Magnification::X40),
            other => Err(Error::InvalidInput(format!("magnification must be 20 or 40, got {other}"))),
        }
    }
}

impl From<Magnification> for u32 {
    fn from(m: Magnification) -> u32 {
        m.value()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionAnnotation {
    pub wsi_id: String,
    pub annotator: String,
    pub class_label: ClassLabel,
    pub polygon: Polygon,
    pub magnification: Magnification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsideredRegion {
    pub wsi_id: String,
    pub class_label: ClassLabel,
    pub shape: Shape,
    pub magnification: Magnification,
    pub concordant: bool,
    pub supporting_annotators: BTreeSet<String>,
    /// Annotations merged into this region, in canonical order.
    pub sources: Vec<RegionAnnotation>,
}

impl ConsideredRegion {
    /// Region made from a single annotation.
    pub fn single(a: RegionAnnotation) -> Self {
        ConsideredRegion {
            wsi_id: a.wsi_id.clone(),
            class_label: a.class_label,
            shape: Shape::from(a.polygon.clone()),
            magnification: a.magnification,
            concordant: false,
            supporting_annotators: BTreeSet::from([a.annotator.clone()]),
            sources: vec![a],
        }
    }
}

#[derive(Debug, Deserialize)]
struct WsiDocument {
    wsi_id: String,
    magnification: u32,
    annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Deserialize)]
struct AnnotationRecord {
    annotator: String,
    class: String,
    polygon: Vec<[i64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DocumentBody {
    One(WsiDocument),
    Many(Vec<WsiDocument>),
}

/// Parses an annotation document: one WSI object, or an array of them.
pub fn parse_annotations(document: &str) -> Result<Vec<RegionAnnotation>> {
    // Parse to a Value first so syntax errors keep serde's line/column.
    let value: serde_json::Value = serde_json::from_str(document).map_err(|e| Error::Parse {
        context: format!("annotation document (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let body: DocumentBody = serde_json::from_value(value)
        .map_err(|e| Error::Parse { context: "annotation document".into(), message: e.to_string() })?;
    let docs = match body {
        DocumentBody::One(d) => vec![d],
        DocumentBody::Many(v) => v,
    };

    let mut out = Vec::new();
    for (doc_idx, doc) in docs.into_iter().enumerate() {
        let magnification = Magnification::try_from(doc.magnification).map_err(|e| Error::Validation {
            record: format!("document {doc_idx} ({})", doc.wsi_id),
            message: e.to_string(),
        })?;
        for (i, rec) in doc.annotations.into_iter().enumerate() {
            let record = format!("{} record {i} (annotator {})", doc.wsi_id, rec.annotator);
            let class_label: ClassLabel = rec
                .class
                .parse()
                .map_err(|e: Error| Error::Validation { record: record.clone(), message: e.to_string() })?;
            if let Some(bad) = rec.polygon.iter().find(|c| c[0] < 0 || c[1] < 0) {
                return Err(Error::Validation { record, message: format!("negative coordinate {bad:?}") });
            }
            let polygon = Polygon::new(rec.polygon.iter().map(|c| Point::new(c[0] as f64, c[1] as f64)).collect());
            validate_polygon(&polygon).map_err(|message| Error::Validation { record, message })?;
            out.push(RegionAnnotation {
                wsi_id: doc.wsi_id.clone(),
                annotator: rec.annotator,
                class_label,
                polygon,
                magnification,
            });
        }
    }
    Ok(out)
}

fn validate_polygon(p: &Polygon) -> std::result::Result<(), String> {
    if p.len() < 3 {
        return Err(format!("polygon has {} vertices, need at least 3", p.len()));
    }
    if !p.is_simple() {
        return Err("polygon is self-intersecting".into());
    }
    if p.area() <= 0.0 {
        return Err("polygon has zero area".into());
    }
    Ok(())
}

fn canonical_key(a: &RegionAnnotation) -> (String, ClassLabel, String, Vec<(i64, i64)>) {
    (
        a.wsi_id.clone(),
        a.class_label,
        a.annotator.clone(),
        a.polygon.vertices().iter().map(|p| (p.x as i64, p.y as i64)).collect(),
    )
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut j = i;
        while self.0[j] != r {
            let next = self.0[j];
            self.0[j] = r;
            j = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Groups agreeing annotations into considered regions.
///
/// A concordant region's shape is the intersection of all its supporting
/// polygons. If a component's polygons have no common area (possible through
/// transitive chains), its members are emitted as separate non-concordant
/// regions.
pub fn resolve_concordance(annotations: &[RegionAnnotation], iou_threshold: f64) -> Result<Vec<ConsideredRegion>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!("iou_threshold must be in (0, 1], got {iou_threshold}")));
    }
    let mut sorted: Vec<RegionAnnotation> = annotations.to_vec();
    sorted.sort_by_key(canonical_key);

    let n = sorted.len();
    let mut ds = DisjointSet((0..n).collect());
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&sorted[i], &sorted[j]);
            if a.wsi_id != b.wsi_id || a.class_label != b.class_label || a.annotator == b.annotator {
                continue;
            }
            if !a.polygon.bbox().intersects(&b.polygon.bbox()) {
                continue;
            }
            if geometry::iou(&a.polygon, &b.polygon) >= iou_threshold {
                ds.union(i, j);
            }
        }
    }

    let mut components: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = ds.find(i);
        components[r].push(i);
    }

    let mut regions = Vec::new();
    for members in components.into_iter().filter(|c| !c.is_empty()) {
        if members.len() == 1 {
            regions.push(ConsideredRegion::single(sorted[members[0]].clone()));
            continue;
        }
        let first = &sorted[members[0]];
        let mut shape = Shape::from(first.polygon.clone());
        for &m in &members[1..] {
            shape = shape.intersect(&sorted[m].polygon);
        }
        if shape.area() <= AREA_EPS {
            regions.extend(members.iter().map(|&m| ConsideredRegion::single(sorted[m].clone())));
            continue;
        }
        let supporters: BTreeSet<String> = members.iter().map(|&m| sorted[m].annotator.clone()).collect();
        regions.push(ConsideredRegion {
            wsi_id: first.wsi_id.clone(),
            class_label: first.class_label,
            shape,
            magnification: first.magnification,
            concordant: supporters.len() >= 2,
            supporting_annotators: supporters,
            sources: members.iter().map(|&m| sorted[m].clone()).collect(),
        });
    }
    Ok(regions)
}
