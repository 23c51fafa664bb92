//! Geometry of a sampled path that is computed once and reused by every query: the convex
//! hull, diameter, bounding box and a coarse chord representation.
//!
//! The path is cut into groups of `stride` steps; each group's samples lie within an exactly
//! computed radius of the chord joining its end samples. A group whose chord stadium lies
//! strictly inside the hull of the chord points cannot contribute hull vertices, and the union
//! of stadiums contains the whole polyline, which makes it a sound exterior certificate.

use crate::geometry::{Point, Rect};

pub const CHORD_STRIDE: usize = 16;

#[derive(Debug, Clone)]
pub struct ShapeGeometry {
    pub hull: Vec<Point>,
    pub diameter: f64,
    pub bbox: Rect,
    pub chord_pts: Vec<Point>,
    /// `radii[k]` bounds the distance from samples of group k to chord k.
    pub radii: Vec<f64>,
}

impl ShapeGeometry {
    pub fn of_path(path: &[Point]) -> Self {
        Self::with_stride(path, CHORD_STRIDE)
    }

    pub fn with_stride(path: &[Point], stride: usize) -> Self {
        let n = path.len() - 1;
        let mut chord_pts = Vec::with_capacity(n / stride + 2);
        let mut radii = Vec::with_capacity(n / stride + 1);
        let mut a = 0;
        while a < n {
            let b = (a + stride).min(n);
            chord_pts.push(path[a]);
            radii.push(group_radius(&path[a..=b]));
            a = b;
        }
        chord_pts.push(path[n]);
        let coarse = andrew(chord_pts.clone());
        let edges = edge_lines(&coarse);
        // Points strictly inside the hull of a subset are never vertices of the full hull.
        let outside = |p: Point, r: f64| edges.iter().any(|&(nx, ny, c)| c - (nx * p.re + ny * p.im) <= r);
        let mut cand = coarse.clone();
        for (k, &r) in radii.iter().enumerate() {
            if edges.len() >= 3 && !outside(chord_pts[k], r) && !outside(chord_pts[k + 1], r) {
                continue;
            }
            let a = k * stride;
            let b = (a + stride).min(n);
            cand.extend(path[a + 1..b].iter().filter(|&&p| edges.len() < 3 || outside(p, 0.0)));
        }
        let hull = andrew(cand);
        let diameter = hull_diameter(&hull);
        let bbox = Rect::of_points(hull.iter());
        ShapeGeometry { hull, diameter, bbox, chord_pts, radii }
    }

    /// Largest distance from `z` to the path (attained at a hull vertex).
    pub fn reach(&self, z: Point) -> f64 {
        self.hull.iter().map(|v| (v - z).norm_sqr()).fold(0.0, f64::max).sqrt()
    }
}

/// Max distance from the samples of a group to the chord between its end samples.
fn group_radius(g: &[Point]) -> f64 {
    let (a, b) = (g[0], g[g.len() - 1]);
    let ab = b - a;
    let l2 = ab.norm_sqr();
    let mut best = 0.0f64;
    for p in &g[1..g.len() - 1] {
        let ap = p - a;
        let t = if l2 > 0.0 { ((ap.re * ab.re + ap.im * ab.im) / l2).clamp(0.0, 1.0) } else { 0.0 };
        let dx = ap.re - t * ab.re;
        let dy = ap.im - t * ab.im;
        best = best.max(dx * dx + dy * dy);
    }
    best.sqrt()
}

/// Outward unit normals and offsets `(nx, ny, c)` of a counter-clockwise convex polygon, so
/// that `c − n·p` is the distance of an interior point p to the edge's line.
fn edge_lines(h: &[Point]) -> Vec<(f64, f64, f64)> {
    if h.len() < 3 {
        return Vec::new();
    }
    (0..h.len())
        .map(|k| {
            let (a, b) = (h[k], h[(k + 1) % h.len()]);
            let e = b - a;
            let l = e.norm();
            let (nx, ny) = (e.im / l, -e.re / l);
            (nx, ny, nx * a.re + ny * a.im)
        })
        .collect()
}

const DIRS: usize = 8;

/// Extreme projections on eight directions; the widest gives bounds `(w, w/cos(π/16))` on the
/// diameter of the points seen so far.
#[derive(Debug, Clone)]
pub struct Extremes {
    dirs: [(f64, f64); DIRS],
    lo: [f64; DIRS],
    hi: [f64; DIRS],
}

impl Default for Extremes {
    fn default() -> Self {
        let dirs = std::array::from_fn(|k| {
            let t = std::f64::consts::PI * k as f64 / DIRS as f64;
            (t.cos(), t.sin())
        });
        Extremes { dirs, lo: [f64::INFINITY; DIRS], hi: [f64::NEG_INFINITY; DIRS] }
    }
}

impl Extremes {
    #[inline]
    pub fn add(&mut self, p: Point) {
        for k in 0..DIRS {
            let v = p.re * self.dirs[k].0 + p.im * self.dirs[k].1;
            self.lo[k] = self.lo[k].min(v);
            self.hi[k] = self.hi[k].max(v);
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        let w = (0..DIRS).map(|k| self.hi[k] - self.lo[k]).fold(0.0, f64::max);
        (w, w / (std::f64::consts::PI / (2 * DIRS) as f64).cos())
    }
}

pub fn diameter_bounds(pts: impl Iterator<Item = Point>) -> (f64, f64) {
    let mut e = Extremes::default();
    pts.for_each(|p| e.add(p));
    e.bounds()
}

/// Andrew's monotone chain; counter-clockwise, no repeated endpoint.
pub fn andrew(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_unstable_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn hull_diameter(h: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in h.iter().enumerate() {
        for b in &h[i + 1..] {
            best = best.max((a - b).norm_sqr());
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loops::bridge::LazyShape;

    #[test]
    fn pruned_hull_matches_full_hull() {
        let mut sh = LazyShape::new(4096, 0);
        for seed in 0..50 {
            sh.reset(seed);
            let p = sh.full().to_vec();
            let g = ShapeGeometry::of_path(&p);
            let full = andrew(p.clone());
            assert_eq!(g.hull, full);
            assert_eq!(g.diameter, hull_diameter(&full));
            let z = p[1000];
            let reach = p.iter().map(|q| (q - z).norm()).fold(0.0, f64::max);
            assert!((g.reach(z) - reach).abs() < 1e-15);
        }
    }

    #[test]
    fn diameter_bounds_bracket() {
        let mut sh = LazyShape::new(1024, 0);
        for seed in 0..20 {
            sh.reset(seed);
            let p = sh.full();
            let d = hull_diameter(&andrew(p.to_vec()));
            let (lo, hi) = diameter_bounds(p.iter().copied());
            assert!(lo <= d && d <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn group_radius_bounds_samples() {
        let g = [Point::new(0.0, 0.0), Point::new(0.5, 0.3), Point::new(1.0, -0.1), Point::new(1.0, 0.0)];
        assert!((group_radius(&g) - 0.3).abs() < 1e-15);
    }
}
