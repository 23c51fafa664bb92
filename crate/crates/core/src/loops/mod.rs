//! Brownian-bridge loops, their diameters and raster hulls.

pub mod bridge;
pub mod hull;
pub mod shape;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
pub use hull::HullMask;

/// A closed sampled path; `path[0] == path[n_steps] == root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub root: Point,
    pub duration: f64,
    pub path: Vec<Point>,
    pub diameter: f64,
}

impl Loop {
    /// Build from a path whose endpoints coincide.
    pub fn from_path(duration: f64, path: Vec<Point>) -> Self {
        debug_assert_eq!(path.first(), path.last());
        let diameter = diameter(&path);
        Loop { root: path[0], duration, path, diameter }
    }

    pub fn n_steps(&self) -> usize {
        self.path.len() - 1
    }

    pub fn bbox(&self) -> Rect {
        Rect::of_points(self.path.iter())
    }

    pub fn translate(&self, by: Point) -> Loop {
        Loop {
            root: self.root + by,
            duration: self.duration,
            path: self.path.iter().map(|p| p + by).collect(),
            diameter: self.diameter,
        }
    }

    /// Brownian scaling about the root: space by `c`, time by `c²`.
    pub fn scale(&self, c: f64) -> Loop {
        let path: Vec<Point> = self.path.iter().map(|p| self.root + (p - self.root) * c).collect();
        Loop { root: self.root, duration: self.duration * c * c, diameter: diameter(&path), path }
    }

    /// Largest distance from `z` to a sample point.
    pub fn max_distance_from(&self, z: Point) -> f64 {
        self.path.iter().map(|p| (p - z).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn from_bool(plus: bool) -> Self {
        if plus {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarkedLoop {
    pub sign: Sign,
    pub curve: Loop,
}

/// A planar Brownian bridge of the given duration pinned at `root`.
pub fn sample_bridge<R: Rng + ?Sized>(root: Point, duration: f64, n_steps: usize, rng: &mut R) -> Result<Loop> {
    if !(duration > 0.0) {
        return Err(Error::Parameter(format!("bridge duration {duration} must be positive")));
    }
    if n_steps < 8 {
        return Err(Error::Parameter(format!("n_steps = {n_steps} must be at least 8")));
    }
    let mut path = vec![Point::new(0.0, 0.0); n_steps + 1];
    bridge::fill_unit_bridge(&mut path, rng);
    let s = duration.sqrt();
    for p in path.iter_mut() {
        *p = root + *p * s;
    }
    path[n_steps] = path[0];
    Ok(Loop::from_path(duration, path))
}

/// Hull cells across a loop diameter for an `n_steps` path, tied to the loop's own scale so the
/// raster error is the same relative amount at every scale. Path discretization shrinks the
/// filled region and a coarse raster inflates it; `3√n` cells balance the two, leaving the mean
/// filled area within about 1.5% of π/5 from 256 to 16384 steps.
pub fn balanced_cells(n_steps: usize) -> f64 {
    3.0 * (n_steps as f64).sqrt()
}

/// Default hull resolution for a loop of diameter `d` sampled with `n_steps` steps.
pub fn default_resolution(d: f64, n_steps: usize) -> f64 {
    d / balanced_cells(n_steps)
}

pub const MIN_STEPS: usize = 256;
pub const MAX_STEPS: usize = 16384;

/// Smallest power of two with expected inter-sample excursion `√(t/n)·√(2 ln n)` below ρ/2,
/// clamped to `[MIN_STEPS, MAX_STEPS]`.
pub fn default_n_steps(duration: f64, rho: f64) -> usize {
    let mut n = MIN_STEPS;
    while n < MAX_STEPS && (duration / n as f64).sqrt() * (2.0 * (n as f64).ln()).sqrt() > rho / 2.0 {
        n *= 2;
    }
    n
}

/// Maximal pairwise distance. Points strictly inside the octagon of directional extremes are
/// discarded before the convex hull is built.
pub fn diameter(pts: &[Point]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let hull = convex_hull(pts);
    let mut best = 0.0f64;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max((a - b).norm_sqr());
        }
    }
    best.sqrt()
}

pub fn convex_hull(pts: &[Point]) -> Vec<Point> {
    let dirs: [(f64, f64); 8] =
        [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 0.0), (-1.0, -1.0), (0.0, -1.0), (1.0, -1.0)];
    let mut ext = [pts[0]; 8];
    let mut best = [f64::NEG_INFINITY; 8];
    for p in pts {
        for (k, d) in dirs.iter().enumerate() {
            let v = p.re * d.0 + p.im * d.1;
            if v > best[k] {
                best[k] = v;
                ext[k] = *p;
            }
        }
    }
    let cross = |o: Point, a: Point, b: Point| (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re);
    let mut cand: Vec<Point> = pts
        .iter()
        .copied()
        .filter(|&p| (0..8).any(|k| cross(ext[k], ext[(k + 1) % 8], p) <= 0.0))
        .collect();
    cand.extend_from_slice(&ext);
    shape::andrew(cand)
}

pub fn hull_mask(lp: &Loop, rho: f64) -> Result<HullMask> {
    if !(rho > 0.0) || lp.diameter < 2.0 * rho {
        return Err(Error::Resolution { rho, diameter: lp.diameter });
    }
    Ok(HullMask::build(&lp.path, &lp.bbox(), rho))
}

/// Membership of `z` in the hull represented by `mask`.
pub fn hull_contains(lp: &Loop, mask: &HullMask, z: Point) -> bool {
    let b = lp.bbox();
    if !b.contains(z) {
        return false;
    }
    mask.contains(z)
}

/// Winding number of the loop around `z`; points within `tol` of the path are refused.
pub fn winding_number(lp: &Loop, z: Point, tol: f64) -> Result<i32> {
    hull::angle_winding(&lp.path, z, tol)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoopDumpRecord {
    pub loop_id: u64,
    pub root: Point,
    pub t: f64,
    pub n_steps: usize,
    pub seed: u64,
}

/// Write `(loop_id, step, x, y)` rows to `<stem>.csv` and per-loop metadata to `<stem>.json`.
pub fn write_loop_dump(dir: &Path, stem: &str, loops: &[(u64, u64, &Loop)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["loop_id", "step", "x", "y"])?;
    let mut meta = Vec::with_capacity(loops.len());
    for &(id, seed, lp) in loops {
        for (k, p) in lp.path.iter().enumerate() {
            w.write_record(&[id.to_string(), k.to_string(), format!("{:e}", p.re), format!("{:e}", p.im)])?;
        }
        meta.push(LoopDumpRecord { loop_id: id, root: lp.root, t: lp.duration, n_steps: lp.n_steps(), seed });
    }
    w.flush()?;
    let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, stream};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn bridge_is_pinned() {
        let mut rng = stream(3, 0, "bridge");
        let lp = sample_bridge(Point::new(0.2, -0.1), 0.7, 512, &mut rng).unwrap();
        assert_eq!(lp.path[0], lp.path[512]);
        assert_eq!(lp.root, Point::new(0.2, -0.1));
        assert!(sample_bridge(Point::new(0.0, 0.0), 0.0, 512, &mut rng).is_err());
        assert!(sample_bridge(Point::new(0.0, 0.0), 1.0, 4, &mut rng).is_err());
    }

    #[test]
    fn bridge_variances() {
        // Var at the midpoint is t/4 per coordinate; one-step increments have variance ≈ t/n.
        let (t, n, reps) = (2.0, 64usize, 100_000);
        let mut rng = stream(11, 0, "bridge-var");
        let (mut mid, mut inc) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
        for _ in 0..reps {
            let lp = sample_bridge(Point::new(0.0, 0.0), t, n, &mut rng).unwrap();
            mid.push(lp.path[n / 2].re);
            inc.push((lp.path[1].im - lp.path[0].im).powi(2));
        }
        let v = crate::estimate::Estimate::variance_of(&mid);
        assert!(v.within(t / 4.0, 3.0), "midpoint variance {v:?}");
        let m = crate::estimate::Estimate::from_samples(&inc);
        // Exact first-step variance is (t/n)(1 − 1/n).
        assert!(m.within(t / n as f64 * (1.0 - 1.0 / n as f64), 3.0), "increment {m:?}");
    }

    #[test]
    fn step_rule() {
        assert_eq!(default_n_steps(1e-8, 1.0), MIN_STEPS);
        assert_eq!(default_n_steps(1.0, 1e-4), MAX_STEPS);
        let n = default_n_steps(1e-3, 1e-2);
        assert!(((1e-3 / n as f64).sqrt() * (2.0 * (n as f64).ln()).sqrt()) <= 5e-3);
    }

    #[test]
    fn sealed_pocket_share_is_small_on_average() {
        let mut total = 0.0;
        for seed in 0..200u64 {
            let lp = random_loop(seed);
            let rho = lp.diameter / 64.0;
            let (coarse, fine) = (hull_mask(&lp, rho).unwrap(), hull_mask(&lp, rho / 2.0).unwrap());
            let excess = coarse
                .iter_hull()
                .filter(|&(i, j)| {
                    !coarse.cell_on_trace(i, j)
                        && !(2 * i - 1..=2 * i + 2).any(|a| (2 * j - 1..=2 * j + 2).any(|b| fine.cell_in_hull(a, b)))
                })
                .count();
            total += excess as f64 / coarse.hull_cells() as f64;
        }
        assert!(total / 200.0 < 0.01, "mean excess share {}", total / 200.0);
    }

    #[test]
    fn balanced_raster_area() {
        // Mean filled area of a unit-time loop is π/5; the balanced raster lands within 3%.
        let mut rng = path_rng(11);
        let xs: Vec<f64> = (0..600)
            .map(|_| {
                let lp = sample_bridge(Point::new(0.0, 0.0), 1.0, 1024, &mut rng).unwrap();
                hull_mask(&lp, default_resolution(lp.diameter, 1024)).unwrap().area() / std::f64::consts::PI
            })
            .collect();
        let e = crate::Estimate::from_samples(&xs);
        assert!((e.value - 0.2).abs() < 0.006 + 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn diameter_of_square_and_polygon() {
        let sq = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        assert!((diameter(&sq) - 2f64.sqrt()).abs() < 1e-15);
        let mut rng = path_rng(5);
        let pts: Vec<Point> = (0..500).map(|_| Point::new(rng.gen(), rng.gen::<f64>() * 0.3)).collect();
        let mut brute = 0.0f64;
        for a in &pts {
            for b in &pts {
                brute = brute.max((a - b).norm());
            }
        }
        assert_eq!(diameter(&pts), brute);
    }

    fn random_loop(seed: u64) -> Loop {
        let mut rng = path_rng(seed);
        sample_bridge(Point::new(0.1, 0.2), 0.5, 1024, &mut rng).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn hull_refinement_consistency(seed in any::<u64>()) {
            let lp = random_loop(seed);
            let rho = lp.diameter / 64.0;
            let coarse = hull_mask(&lp, rho).unwrap();
            let fine = hull_mask(&lp, rho / 2.0).unwrap();
            for p in &lp.path {
                prop_assert!(hull_contains(&lp, &coarse, *p));
            }
            // Coarse trace cells meet the fine trace dilated by one cell; coarse hull cells that
            // are farther from the fine hull than one cell come only from channels sealed at the
            // coarse resolution. Their share is heavy-tailed (p99 ≈ 2.5%, worst of 3000 loops
            // ≈ 11%), so single loops get a loose bound and the mean a tight one below.
            let mut excess = 0usize;
            for (i, j) in coarse.iter_hull() {
                let near = |f: &dyn Fn(i64, i64) -> bool| {
                    (2 * i - 1..=2 * i + 2).any(|a| (2 * j - 1..=2 * j + 2).any(|b| f(a, b)))
                };
                if coarse.cell_on_trace(i, j) {
                    prop_assert!(near(&|a, b| fine.cell_on_trace(a, b)));
                } else if !near(&|a, b| fine.cell_in_hull(a, b)) {
                    excess += 1;
                }
            }
            prop_assert!((excess as f64) < 0.15 * coarse.hull_cells() as f64, "excess {excess}");
            // And the fine hull never leaves the coarse one.
            for (a, b) in fine.iter_hull() {
                prop_assert!(coarse.cell_in_hull(a.div_euclid(2), b.div_euclid(2)));
            }
        }

        #[test]
        fn winding_implies_hull(seed in any::<u64>(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
            let lp = random_loop(seed);
            let b = lp.bbox();
            let z = Point::new(b.x0 + u * b.width(), b.y0 + v * b.height());
            let rho = lp.diameter / 128.0;
            let mask = hull_mask(&lp, rho).unwrap();
            if hull::crossing_winding(&lp.path, z) != 0 {
                prop_assert!(hull_contains(&lp, &mask, z));
            }
            prop_assert_eq!(hull::covers(&lp.path, rho, z), hull_contains(&lp, &mask, z));
            let zs: Vec<Point> = (0..64)
                .map(|k| Point::new(b.x0 + ((k % 8) as f64 + u) / 8.0 * b.width(), b.y0 + ((k / 8) as f64 + v) / 8.0 * b.height()))
                .collect();
            let geo = shape::ShapeGeometry::of_path(&lp.path);
            let many = hull::covers_many(&lp.path, &geo, rho, &zs);
            for (z, hit) in zs.iter().zip(many) {
                prop_assert_eq!(hit, hull_contains(&lp, &mask, *z));
            }
        }

        #[test]
        fn diameter_equivariance(seed in any::<u64>(), sx in -3.0..3.0f64, sy in -3.0..3.0f64, c in 0.1..10.0f64) {
            let lp = random_loop(seed);
            let moved = lp.translate(Point::new(sx, sy));
            prop_assert!((moved.diameter - lp.diameter).abs() <= 1e-12 * lp.diameter.max(1.0) * 10.0);
            let scaled = lp.scale(c);
            prop_assert!((scaled.diameter - c * lp.diameter).abs() <= 1e-12 * c * lp.diameter * 10.0);
        }
    }
}
