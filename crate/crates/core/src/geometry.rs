//! Planar polygon primitives used by concordance resolution and tiling.
//!
//! Polygons are simple, closed implicitly (the last vertex connects back to
//! the first) and stored in level-0 pixel coordinates. Intersections between
//! arbitrary simple polygons are expressed as a [`Shape`]: a set of pieces with
//! pairwise-disjoint interiors, obtained by clipping against the triangles of
//! an ear-clipping triangulation.

use serde::{Deserialize, Serialize};

/// Area below which a clipped piece is treated as degenerate (touch-only).
pub const AREA_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
#[inline]
fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn square(x: f64, y: f64, side: f64) -> Self {
        Rect::new(x, y, x + side, y + side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(self.x0.min(other.x0), self.y0.min(other.y0), self.x1.max(other.x1), self.y1.max(other.y1))
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Self {
        Polygon::new(coords.iter().map(|c| Point::new(c[0], c[1])).collect())
    }

    pub fn rect(r: Rect) -> Self {
        Polygon::new(vec![
            Point::new(r.x0, r.y0),
            Point::new(r.x1, r.y0),
            Point::new(r.x1, r.y1),
            Point::new(r.x0, r.y1),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace signed area; positive for counter-clockwise winding in a
    /// y-up frame.
    pub fn signed_area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        let twice: f64 = self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        twice / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        r
    }

    /// Same polygon with counter-clockwise winding.
    pub fn to_ccw(&self) -> Polygon {
        let mut v = self.vertices.clone();
        if self.signed_area() < 0.0 {
            v.reverse();
        }
        Polygon::new(v)
    }

    /// True when no two non-adjacent edges touch and no adjacent edges fold
    /// back onto each other. O(n²).
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if a == b {
                return false;
            }
            for j in (i + 1)..n {
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Shared endpoint is fine; overlapping collinear edges are not.
                    let shared = if j == i + 1 { b } else { a };
                    let (p, q) = if j == i + 1 { (a, d) } else { (b, c) };
                    if cross(shared, p, q) == 0.0 {
                        let dot = (p.x - shared.x) * (q.x - shared.x) + (p.y - shared.y) * (q.y - shared.y);
                        if dot > 0.0 {
                            return false;
                        }
                    }
                    continue;
                }
                if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Sutherland–Hodgman clip against an axis-aligned rectangle. Boundary
    /// crossings land exactly on the rectangle edges, so areas of the pieces of
    /// a grid partition sum to the source area up to rounding.
    pub fn clip_to_rect(&self, r: &Rect) -> Polygon {
        let mut out = self.vertices.clone();
        out = clip_half_plane(&out, |p| p.x >= r.x0, |a, b| lerp_x(a, b, r.x0));
        out = clip_half_plane(&out, |p| p.x <= r.x1, |a, b| lerp_x(a, b, r.x1));
        out = clip_half_plane(&out, |p| p.y >= r.y0, |a, b| lerp_y(a, b, r.y0));
        out = clip_half_plane(&out, |p| p.y <= r.y1, |a, b| lerp_y(a, b, r.y1));
        Polygon::new(out)
    }

    /// Clip against a convex, counter-clockwise window.
    pub fn clip_convex(&self, window: &[Point]) -> Polygon {
        let mut out = self.vertices.clone();
        let m = window.len();
        for i in 0..m {
            if out.is_empty() {
                break;
            }
            let (e0, e1) = (window[i], window[(i + 1) % m]);
            out = clip_half_plane(
                &out,
                |p| cross(e0, e1, p) >= 0.0,
                |a, b| {
                    let ca = cross(e0, e1, a);
                    let cb = cross(e0, e1, b);
                    let t = ca / (ca - cb);
                    Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
                },
            );
        }
        Polygon::new(out)
    }

    /// Ear-clipping triangulation. Triangles are counter-clockwise and their
    /// interiors are disjoint; their areas sum to the polygon area.
    pub fn triangulate(&self) -> Vec<[Point; 3]> {
        let poly = self.to_ccw();
        let pts = poly.vertices;
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let mut tris = Vec::with_capacity(pts.len().saturating_sub(2));
        let mut guard = 0usize;
        while idx.len() > 3 {
            let n = idx.len();
            let mut clipped = false;
            for k in 0..n {
                let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
                let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
                let turn = cross(a, b, c);
                if turn == 0.0 {
                    // Collinear vertex contributes no area.
                    idx.remove(k);
                    clipped = true;
                    break;
                }
                if turn < 0.0 {
                    continue;
                }
                let blocked = idx.iter().any(|&j| {
                    j != ia && j != ib && j != ic && {
                        let p = pts[j];
                        p != a && p != b && p != c && point_in_triangle(p, a, b, c)
                    }
                });
                if !blocked {
                    tris.push([a, b, c]);
                    idx.remove(k);
                    clipped = true;
                    break;
                }
            }
            if !clipped {
                guard += 1;
                // Numerically stuck on a near-degenerate input: drop the
                // flattest vertex and continue.
                let n = idx.len();
                let k = (0..n)
                    .min_by(|&p, &q| {
                        let fp = cross(pts[idx[(p + n - 1) % n]], pts[idx[p]], pts[idx[(p + 1) % n]]).abs();
                        let fq = cross(pts[idx[(q + n - 1) % n]], pts[idx[q]], pts[idx[(q + 1) % n]]).abs();
                        fp.total_cmp(&fq)
                    })
                    .unwrap_or(0);
                idx.remove(k);
                if guard > pts.len() {
                    break;
                }
            }
        }
        if idx.len() == 3 {
            let (a, b, c) = (pts[idx[0]], pts[idx[1]], pts[idx[2]]);
            if cross(a, b, c) > 0.0 {
                tris.push([a, b, c]);
            }
        }
        tris
    }
}

fn lerp_x(a: Point, b: Point, x: f64) -> Point {
    let t = (x - a.x) / (b.x - a.x);
    Point::new(x, a.y + t * (b.y - a.y))
}

fn lerp_y(a: Point, b: Point, y: f64) -> Point {
    let t = (y - a.y) / (b.y - a.y);
    Point::new(a.x + t * (b.x - a.x), y)
}

fn clip_half_plane(
    input: &[Point],
    inside: impl Fn(Point) -> bool,
    intersect: impl Fn(Point, Point) -> Point,
) -> Vec<Point> {
    let n = input.len();
    let mut out = Vec::with_capacity(n + 4);
    for i in 0..n {
        let cur = input[i];
        let prev = input[(i + n - 1) % n];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(intersect(prev, cur)),
            (false, true) => {
                out.push(intersect(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out
}

fn point_in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including collinear overlap and touching.
fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// A planar region made of pieces with pairwise-disjoint interiors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pieces: Vec<Polygon>,
}

impl Shape {
    pub fn new(pieces: Vec<Polygon>) -> Self {
        Shape { pieces: pieces.into_iter().filter(|p| p.area() > AREA_EPS).collect() }
    }

    pub fn pieces(&self) -> &[Polygon] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.pieces.iter().map(Polygon::area).sum()
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.pieces.iter().map(Polygon::bbox).reduce(|a, b| a.union(&b))
    }

    pub fn clip_to_rect(&self, r: &Rect) -> Shape {
        Shape::new(self.pieces.iter().filter(|p| p.bbox().intersects(r)).map(|p| p.clip_to_rect(r)).collect())
    }

    /// Intersection with a simple polygon.
    pub fn intersect(&self, other: &Polygon) -> Shape {
        let tris = other.triangulate();
        let other_box = other.bbox();
        let mut out = Vec::new();
        for piece in &self.pieces {
            let pb = piece.bbox();
            if !pb.intersects(&other_box) {
                continue;
            }
            for t in &tris {
                let tb = Polygon::new(t.to_vec()).bbox();
                if !pb.intersects(&tb) {
                    continue;
                }
                let clipped = piece.clip_convex(t);
                if clipped.area() > AREA_EPS {
                    out.push(clipped);
                }
            }
        }
        Shape::new(out)
    }
}

impl From<Polygon> for Shape {
    fn from(p: Polygon) -> Self {
        Shape::new(vec![p])
    }
}

/// Area of the intersection of two simple polygons.
pub fn intersection_area(a: &Polygon, b: &Polygon) -> f64 {
    Shape::from(a.clone()).intersect(b).area()
}

/// Intersection-over-union of two simple polygons; touch-only overlaps give 0.
pub fn iou(a: &Polygon, b: &Polygon) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= AREA_EPS {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(x: f64, y: f64, s: f64) -> Polygon {
        Polygon::rect(Rect::square(x, y, s))
    }

    #[test]
    fn shoelace_square_and_triangle() {
        assert_eq!(sq(0.0, 0.0, 4.0).area(), 16.0);
        let tri = Polygon::from_coords(&[[0.0, 0.0], [512.0, 0.0], [0.0, 512.0]]);
        assert_eq!(tri.area(), 512.0 * 512.0 / 2.0);
    }

    #[test]
    fn simple_polygon_detection() {
        assert!(sq(0.0, 0.0, 1.0).is_simple());
        let bowtie = Polygon::from_coords(&[[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]]);
        assert!(!bowtie.is_simple());
        let two = Polygon::from_coords(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(!two.is_simple());
        let spike = Polygon::from_coords(&[[0.0, 0.0], [4.0, 0.0], [2.0, 0.0], [2.0, 3.0]]);
        assert!(!spike.is_simple());
    }

    #[test]
    fn half_overlapping_unit_squares_iou_is_one_third() {
        let a = sq(0.0, 0.0, 1.0);
        let b = sq(0.5, 0.0, 1.0);
        assert!((intersection_area(&a, &b) - 0.5).abs() < 1e-12);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_squares_have_zero_iou() {
        let a = sq(0.0, 0.0, 1.0);
        let b = sq(1.0, 0.0, 1.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn triangulation_preserves_area_of_concave_polygon() {
        let l = Polygon::from_coords(&[[0.0, 0.0], [4.0, 0.0], [4.0, 1.0], [1.0, 1.0], [1.0, 4.0], [0.0, 4.0]]);
        let tris = l.triangulate();
        assert_eq!(tris.len(), 4);
        let sum: f64 = tris.iter().map(|t| Polygon::new(t.to_vec()).area()).sum();
        assert!((sum - l.area()).abs() < 1e-12);
    }

    #[test]
    fn rect_clip_of_triangle() {
        let tri = Polygon::from_coords(&[[0.0, 0.0], [512.0, 0.0], [0.0, 512.0]]);
        let c = tri.clip_to_rect(&Rect::square(0.0, 0.0, 256.0));
        // Lower-left 256 square lies fully under the hypotenuse except a corner triangle.
        assert!((c.area() - (256.0 * 256.0)).abs() < 1e-9);
        let c = tri.clip_to_rect(&Rect::square(256.0, 256.0, 256.0));
        assert!(c.area() < 1e-9);
    }
}
