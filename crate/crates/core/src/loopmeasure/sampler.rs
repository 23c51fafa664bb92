//! Poisson sampling of the loop measure restricted to a diameter window.
//!
//! Rooted loops are parametrised by root `x`, diameter `d` and a unit-duration bridge shape
//! `S` with diameter `D₁(S)`; the loop is `x + (d/D₁)·S`, of duration `(d/D₁)²`. Changing
//! variables `t = d²/D₁²` in `dx · dt/(2πt²) · P(dS)` gives the intensity
//!
//! ```text
//!     dx · (D₁²/π) · dd/d³ · P(dS),
//! ```
//!
//! so shapes are drawn from the bridge law and kept with probability `D₁²/M₂` against a cap
//! `M₂`, and candidates `(x, d)` arrive at rate `(M₂/π)·dx·dd/d³`. The window `[a, b)` on
//! the diameter is imposed exactly; nothing is truncated in time.
//!
//! With focus points, only loops that can cover one of them are generated: such a loop has its
//! root within distance `d` of the point, so roots are drawn in the focus bounding box grown
//! by `d` and thinned to the union of balls.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CutoffConfig;
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point, Rect};
use crate::loops::{bridge::LazyShape, hull, shape, shape::{Extremes, ShapeGeometry}, Loop, Sign};

/// Where loops are needed.
#[derive(Debug, Clone)]
pub enum Region {
    /// Every loop of the window inside the domain.
    Everywhere,
    /// Only loops rooted within their diameter of one of these points.
    Near(Vec<Point>),
}

impl Region {
    pub fn focus(&self) -> &[Point] {
        match self {
            Region::Everywhere => &[],
            Region::Near(p) => p,
        }
    }
}

/// Per-loop record of a covered focus point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub point: u32,
    /// Largest distance from the point to the loop.
    pub reach: f64,
}

/// A sampled loop kept in compact form; the path is regenerated from `seed` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub root: Point,
    pub diameter: f64,
    pub seed: u64,
    pub sign: Sign,
    /// Bounding box of the path (conservative when `exact_bbox` is false).
    pub bbox: Rect,
    pub exact_bbox: bool,
    pub covers: Vec<Cover>,
}

impl LoopRecord {
    /// Rebuild the full path.
    pub fn materialize(&self, n_steps: usize) -> Loop {
        let mut shape = LazyShape::new(n_steps, self.seed);
        let unit = shape.full();
        let s = self.diameter / ShapeGeometry::of_path(unit).diameter;
        let mut path: Vec<Point> = unit.iter().map(|p| self.root + p * s).collect();
        path[n_steps] = path[0];
        Loop { root: self.root, duration: s * s, diameter: self.diameter, path }
    }

    /// Hull membership of arbitrary points (indices into `zs`), decided exactly as the sampler
    /// decides focus points.
    pub fn covers_points(&self, cutoffs: &CutoffConfig, zs: &[Point]) -> Vec<Cover> {
        if !zs.iter().any(|z| self.bbox.contains(*z)) {
            return Vec::new();
        }
        let mut shape = LazyShape::new(cutoffs.n_steps, self.seed);
        let unit = shape.full();
        let geo = ShapeGeometry::of_path(unit);
        let s = self.diameter / geo.diameter;
        let ub = &geo.bbox;
        let root = self.root;
        let bbox = Rect::new(root.re + s * ub.x0, root.im + s * ub.y0, root.re + s * ub.x1, root.im + s * ub.y1);
        unit_frame_covers(unit, &geo, root, s, cutoffs.cells(), zs, &bbox)
    }

    pub fn covers_point(&self, idx: u32) -> Option<&Cover> {
        self.covers.iter().find(|c| c.point == idx)
    }
}

/// Work counters, useful for budgeting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub candidates: u64,
    pub shapes_kept: u64,
    pub in_domain: u64,
    pub materialized: u64,
}

/// Envelope of the candidate intensity along the diameter, `Σ_k c_k d^{−p_k}` for p = 3, 2, 1.
struct Envelope {
    mass: [f64; 3],
    a: f64,
    b: f64,
}

impl Envelope {
    fn new(w: f64, h: f64, grow: bool, a: f64, b: f64) -> Self {
        let coef = if grow { [w * h, 2.0 * (w + h), 4.0] } else { [w * h, 0.0, 0.0] };
        let mass = [
            coef[0] * 0.5 * (a.powi(-2) - b.powi(-2)),
            coef[1] * (1.0 / a - 1.0 / b),
            coef[2] * (b / a).ln(),
        ];
        Envelope { mass, a, b }
    }

    fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let t = u * self.total();
        let (a, b) = (self.a, self.b);
        if t < self.mass[0] {
            let (lo, hi) = (b.powi(-2), a.powi(-2));
            (lo + v * (hi - lo)).sqrt().recip()
        } else if t < self.mass[0] + self.mass[1] {
            let (lo, hi) = (1.0 / b, 1.0 / a);
            (lo + v * (hi - lo)).recip()
        } else {
            a * (b / a).powf(v)
        }
    }
}

/// Sampler settings shared by every replica.
#[derive(Debug, Clone)]
pub struct LoopSampler {
    pub domain: Domain,
    pub cutoffs: CutoffConfig,
    pub region: Region,
}

const FIRST_LEVEL: u32 = 4;

impl LoopSampler {
    pub fn new(domain: Domain, cutoffs: CutoffConfig, region: Region) -> Result<Self> {
        cutoffs.validate(&domain)?;
        Ok(LoopSampler { domain, cutoffs, region })
    }

    /// Upper end of the diameter window.
    pub fn upper(&self) -> f64 {
        self.cutoffs.r.unwrap_or_else(|| self.domain.diameter()).min(self.domain.diameter())
    }

    pub fn resolution(&self, d: f64) -> f64 {
        d / self.cutoffs.cells()
    }

    /// Expected number of candidates per unit intensity.
    pub fn candidate_mass(&self) -> f64 {
        let (a, b) = (self.cutoffs.delta, self.upper());
        if a >= b {
            return 0.0;
        }
        self.envelope(a, b).0.total() * self.cutoffs.shape_cap / std::f64::consts::PI
    }

    fn envelope(&self, a: f64, b: f64) -> (Envelope, Rect) {
        match &self.region {
            Region::Everywhere => {
                let bb = self.domain.bbox;
                (Envelope::new(bb.width(), bb.height(), false, a, b), bb)
            }
            Region::Near(pts) => {
                let bb = Rect::of_points(pts.iter());
                (Envelope::new(bb.width(), bb.height(), true, a, b), bb)
            }
        }
    }

    /// One Poisson realization at intensity `lambda`.
    pub fn sample<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R, stats: &mut SamplerStats) -> Vec<LoopRecord> {
        let (a, b) = (self.cutoffs.delta, self.upper());
        if a >= b || lambda <= 0.0 {
            return Vec::new();
        }
        let n_steps = self.cutoffs.n_steps;
        let cap = self.cutoffs.shape_cap;
        let (env, base) = self.envelope(a, b);
        let mean = lambda * cap / std::f64::consts::PI * env.total();
        let count = poisson(mean, rng);
        let focus = self.region.focus();
        let grow = matches!(self.region, Region::Near(_));
        let mut shape = LazyShape::new(n_steps, 0);
        let mut out = Vec::new();
        for _ in 0..count {
            stats.candidates += 1;
            let d = env.draw(rng);
            let bb = if grow { base.expand(d) } else { base };
            let root = Point::new(bb.x0 + rng.gen::<f64>() * bb.width(), bb.y0 + rng.gen::<f64>() * bb.height());
            let seed: u64 = rng.gen();
            let plus: bool = rng.gen();
            let u: f64 = rng.gen();
            if grow && !focus.iter().any(|z| (z - root).norm() < d) {
                continue;
            }
            if !self.domain.contains(root) {
                continue;
            }
            shape.reset(seed);
            let Some((level, lo_d1)) = accept_shape(&mut shape, u * cap) else { continue };
            stats.shapes_kept += 1;
            let rec = self.place(&mut shape, level, lo_d1, root, d, seed, Sign::from_bool(plus), focus, stats);
            if let Some(rec) = rec {
                stats.in_domain += 1;
                out.push(rec);
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn place(
        &self,
        shape: &mut LazyShape,
        level: u32,
        lo_d1: f64,
        root: Point,
        d: f64,
        seed: u64,
        sign: Sign,
        focus: &[Point],
        stats: &mut SamplerStats,
    ) -> Option<LoopRecord> {
        // Scale d/D₁ is bounded above by d over a lower bound on D₁; the unit bbox contains the
        // origin, so shrinking the scale keeps the path inside the scaled box.
        let s_hi = d / lo_d1;
        let ub = shape.level_bbox(level).expand(shape.margin(level));
        let cbox = Rect::new(root.re + s_hi * ub.x0, root.im + s_hi * ub.y0, root.re + s_hi * ub.x1, root.im + s_hi * ub.y1);
        let safe = self.domain.signed_distance(root) > d || rect_inside(&self.domain, &cbox);
        let relevant = focus.iter().any(|z| cbox.contains(*z));
        if safe && !relevant {
            return Some(LoopRecord { root, diameter: d, seed, sign, bbox: cbox, exact_bbox: false, covers: Vec::new() });
        }
        stats.materialized += 1;
        let unit = shape.full();
        let geo = ShapeGeometry::of_path(unit);
        let s = d / geo.diameter;
        // Domains are convex, so the hull vertices decide containment of the whole trace.
        if !safe && !geo.hull.iter().all(|p| self.domain.contains(root + p * s)) {
            return None;
        }
        let ub = &geo.bbox;
        let bbox = Rect::new(root.re + s * ub.x0, root.im + s * ub.y0, root.re + s * ub.x1, root.im + s * ub.y1);
        let covers = unit_frame_covers(unit, &geo, root, s, self.cutoffs.cells(), focus, &bbox);
        Some(LoopRecord { root, diameter: d, seed, sign, bbox, exact_bbox: true, covers })
    }
}

/// Covered points among `zs` with their reach, decided in the frame of the unit shape where
/// the lattice is `D₁/cells`; `bbox` is the placed path's box.
fn unit_frame_covers(
    unit: &[Point],
    geo: &ShapeGeometry,
    root: Point,
    s: f64,
    cells: f64,
    zs: &[Point],
    bbox: &Rect,
) -> Vec<Cover> {
    let idx: Vec<usize> = (0..zs.len()).filter(|&k| bbox.contains(zs[k])).collect();
    if idx.is_empty() {
        return Vec::new();
    }
    let us: Vec<Point> = idx.iter().map(|&k| (zs[k] - root) / s).collect();
    let hits = hull::covers_many(unit, geo, geo.diameter / cells, &us);
    idx.into_iter()
        .zip(hits)
        .zip(us)
        .filter(|((_, hit), _)| *hit)
        .map(|((k, _), u)| Cover { point: k as u32, reach: s * geo.reach(u) })
        .collect()
}

/// Corners inside a convex domain imply the whole rectangle is.
fn rect_inside(domain: &Domain, r: &Rect) -> bool {
    [Point::new(r.x0, r.y0), Point::new(r.x1, r.y0), Point::new(r.x0, r.y1), Point::new(r.x1, r.y1)]
        .iter()
        .all(|p| domain.contains(*p))
}

/// Keep the shape with probability `min(1, D₁²/cap)` given `threshold = u·cap`, refining only
/// until the decision is certain. Returns the level reached.
fn accept_shape(shape: &mut LazyShape, threshold: f64) -> Option<(u32, f64)> {
    let mut level = FIRST_LEVEL.min(shape.max_level());
    let mut ext = Extremes::default();
    let mut seen = 0;
    loop {
        shape.refine_to(level);
        // Only samples new since the previous level are projected.
        let (n, step) = (shape.n_steps(), shape.n_steps() >> level);
        let old = if seen == 0 { 1 } else { n >> seen };
        let buf = shape.samples();
        (0..=n).step_by(step).filter(|i| seen == 0 || i & (old - 1) != 0).for_each(|i| ext.add(buf[i]));
        seen = level;
        let m = 2.0 * shape.margin(level);
        let (w, w_hi) = ext.bounds();
        if threshold < w * w {
            return Some((level, w));
        }
        if threshold >= (w_hi + m).powi(2) {
            return None;
        }
        let pts: Vec<Point> = shape.level_points(level).collect();
        let lo = shape::hull_diameter(&shape::andrew(pts));
        if threshold < lo * lo {
            return Some((level, lo));
        }
        if threshold >= (lo + m).powi(2) || level == shape.max_level() {
            return None;
        }
        level = (level + 2).min(shape.max_level());
    }
}

/// Poisson variate.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = rand_distr::Poisson::new(mean).expect("finite positive mean");
    rng.sample::<f64, _>(dist) as u64
}

/// Relative mass lost by capping the shape weight `D₁²` at `cap`, bounded through the Kuiper
/// tail of the bridge range: `P(D₁ > x) ≤ 8(2x² − 1)e^{−x²}` (two coordinates, factor 2).
pub fn shape_cap_bias(cap: f64) -> f64 {
    let c2 = cap;
    let tail = |x2: f64| 8.0 * (2.0 * x2 - 1.0) * (-x2).exp();
    // E[D₁² 1{D₁ > c}] ≤ c²P(D₁ > c) + ∫_c^∞ 2x P(D₁ > x) dx; E[D₁²] ≥ 1.
    c2 * tail(c2) + 16.0 * (c2 + 1.0) * (-c2).exp()
}

impl CutoffConfig {
    pub(crate) fn validate(&self, domain: &Domain) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("sampling cutoff δ = {} must be positive", self.delta)));
        }
        if let Some(r) = self.r {
            if !(r > self.delta) {
                return Err(Error::Config(format!("IR cutoff R = {r} must exceed δ = {}", self.delta)));
            }
        }
        if !self.n_steps.is_power_of_two() || self.n_steps < 8 {
            return Err(Error::Config(format!("n_steps = {} must be a power of two ≥ 8", self.n_steps)));
        }
        let bias = self.bias_bound(domain);
        if bias > self.eps_mass {
            return Err(Error::Config(format!("truncation bias bound {bias:.3e} exceeds ε_mass = {:.3e}", self.eps_mass)));
        }
        Ok(())
    }
}
