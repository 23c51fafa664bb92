//! Brownian-bridge paths by midpoint bisection.
//!
//! Points are filled breadth-first: every interval `[a, b]` gets its midpoint `m` drawn from
//! the exact conditional law, `N((P_a + P_b)/2 + ..., (m−a)(b−m)/(b−a))` per coordinate.
//! With `n` a power of two the breadth-first order is exactly level order, so a path can be
//! refined lazily level by level and still agree bit for bit with the eager sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Point, Rect};
use crate::rng::{path_rng, PathRng};

/// Fill `buf` (length `n + 1`) with a unit-duration bridge from 0 to 0.
pub fn fill_unit_bridge<R: Rng + ?Sized>(buf: &mut [Point], rng: &mut R) {
    let n = buf.len() - 1;
    buf[0] = Point::new(0.0, 0.0);
    buf[n] = Point::new(0.0, 0.0);
    if n.is_power_of_two() {
        let mut h = n;
        while h > 1 {
            let half = h / 2;
            let sd = (half as f64 / (2.0 * n as f64)).sqrt();
            let mut a = 0;
            while a < n {
                let mid = (buf[a] + buf[a + h]) * 0.5;
                buf[a + half] = mid + normal_pair(rng) * sd;
                a += h;
            }
            h = half;
        }
        return;
    }
    let mut queue = vec![(0usize, n)];
    let mut head = 0;
    while head < queue.len() {
        let (a, b) = queue[head];
        head += 1;
        if b - a < 2 {
            continue;
        }
        let m = (a + b) / 2;
        let (l, r, w) = ((m - a) as f64, (b - m) as f64, (b - a) as f64);
        let sd = (l * r / (w * n as f64)).sqrt();
        let mean = buf[a] + (buf[b] - buf[a]) * (l / w);
        buf[m] = mean + normal_pair(rng) * sd;
        queue.push((a, m));
        queue.push((m, b));
    }
}

#[inline]
fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Point::new(x, y)
}

/// Deviation bound (in units of √(interval duration)) for the finer path around a coarse
/// polyline. A planar bridge of duration h leaves the disk of radius c√h around its chord with
/// probability at most 4e^{−c²}; c = 6.5 puts the total over 2^14 intervals below 1e-13.
pub const MARGIN_SIGMAS: f64 = 6.5;

/// A unit-duration bridge on `n = 2^k` steps, refined on demand.
pub struct LazyShape {
    n: usize,
    max_level: u32,
    filled: u32,
    buf: Vec<Point>,
    rng: PathRng,
}

impl LazyShape {
    pub fn new(n: usize, seed: u64) -> Self {
        assert!(n.is_power_of_two() && n >= 2, "lazy shapes need a power-of-two step count");
        let mut buf = vec![Point::new(0.0, 0.0); n + 1];
        buf[0] = Point::new(0.0, 0.0);
        LazyShape { n, max_level: n.trailing_zeros(), filled: 0, buf, rng: path_rng(seed) }
    }

    /// Reuse the buffer for a new shape.
    pub fn reset(&mut self, seed: u64) {
        self.filled = 0;
        self.buf[0] = Point::new(0.0, 0.0);
        self.buf[self.n] = Point::new(0.0, 0.0);
        self.rng = path_rng(seed);
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn refine_to(&mut self, level: u32) {
        let level = level.min(self.max_level);
        let n = self.n;
        while self.filled < level {
            let h = n >> self.filled;
            let half = h / 2;
            let sd = (half as f64 / (2.0 * n as f64)).sqrt();
            let mut a = 0;
            while a < n {
                let mid = (self.buf[a] + self.buf[a + h]) * 0.5;
                self.buf[a + half] = mid + normal_pair(&mut self.rng) * sd;
                a += h;
            }
            self.filled += 1;
        }
    }

    pub fn full(&mut self) -> &[Point] {
        self.refine_to(self.max_level);
        &self.buf
    }

    /// Raw sample buffer; only multiples of `n / 2^filled_level` are meaningful.
    pub fn samples(&self) -> &[Point] {
        &self.buf
    }

    /// The filled points of `level` (stride `n / 2^level`).
    pub fn level_points(&self, level: u32) -> impl Iterator<Item = Point> + '_ {
        assert!(level <= self.filled);
        self.buf.iter().step_by(self.n >> level).copied()
    }

    pub fn filled_level(&self) -> u32 {
        self.filled
    }

    /// Bound on the distance from any finer sample to the level-`level` polyline.
    pub fn margin(&self, level: u32) -> f64 {
        if level >= self.max_level {
            0.0
        } else {
            MARGIN_SIGMAS * (0.5f64).powi(level as i32).sqrt()
        }
    }

    pub fn level_bbox(&self, level: u32) -> Rect {
        let pts: Vec<Point> = self.level_points(level).collect();
        Rect::of_points(pts.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn lazy_matches_eager() {
        for n in [8usize, 256, 4096] {
            let mut eager = vec![Point::new(0.0, 0.0); n + 1];
            fill_unit_bridge(&mut eager, &mut path_rng(99));
            let mut lazy = LazyShape::new(n, 99);
            lazy.refine_to(3);
            lazy.refine_to(lazy.max_level());
            assert_eq!(lazy.full(), &eager[..]);
        }
    }

    #[test]
    fn general_n_is_pinned() {
        let mut rng = stream(1, 0, "t");
        let mut buf = vec![Point::new(1.0, 1.0); 301];
        fill_unit_bridge(&mut buf, &mut rng);
        assert_eq!(buf[0], Point::new(0.0, 0.0));
        assert_eq!(buf[300], Point::new(0.0, 0.0));
        assert!(buf.iter().all(|p| p.re.is_finite() && p.im.is_finite()));
    }
}
