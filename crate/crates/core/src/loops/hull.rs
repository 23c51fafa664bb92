//! Raster hulls: conservative (supercover) rasterization of the polyline, exterior flood fill
//! from a padded border, complement.
//!
//! Cells live on the global lattice `ρ·ℤ²`, so grids at ρ and 2ρ nest. Because the
//! rasterization marks every cell whose closure meets the polyline, an exterior cell at any
//! resolution is joined to infinity by a path avoiding the polyline, hence exterior at every
//! finer resolution as well. Non-zero winding certifies the opposite. Both facts make the
//! certified shortcuts in [`covers_many`] answer exactly as the finest mask would.

use crate::error::{Error, Result};
use super::shape::ShapeGeometry;
use crate::geometry::{Point, Rect};

const FREE: u8 = 0;
const TRACE: u8 = 1;
const OUTSIDE: u8 = 2;

#[derive(Debug, Clone)]
pub struct HullMask {
    pub rho: f64,
    /// Lattice index of cell (0, 0).
    pub ix0: i64,
    pub iy0: i64,
    pub nx: usize,
    pub ny: usize,
    cells: Vec<u8>,
}

impl HullMask {
    /// Rasterize a closed polyline and fill its hull.
    pub fn build(path: &[Point], bbox: &Rect, rho: f64) -> Self {
        let mut m = HullMask::build_trace(path, bbox, rho);
        m.fill_exterior();
        m
    }

    /// Rasterized trace only; no cell is marked exterior yet.
    fn build_trace(path: &[Point], bbox: &Rect, rho: f64) -> Self {
        let ix0 = (bbox.x0 / rho).floor() as i64 - 1;
        let iy0 = (bbox.y0 / rho).floor() as i64 - 1;
        let nx = ((bbox.x1 / rho).floor() as i64 - ix0 + 2) as usize;
        let ny = ((bbox.y1 / rho).floor() as i64 - iy0 + 2) as usize;
        let mut m = HullMask { rho, ix0, iy0, nx, ny, cells: vec![FREE; nx * ny] };
        m.rasterize(path);
        m
    }

    fn rasterize(&mut self, path: &[Point]) {
        let (ox, oy) = (self.ix0 as f64, self.iy0 as f64);
        let inv = 1.0 / self.rho;
        // Grid coordinates are positive (one padding cell), so truncation is floor.
        let mut prev = (path[0].re * inv - ox, path[0].im * inv - oy);
        self.mark(prev.0 as i64, prev.1 as i64);
        for p in &path[1..] {
            let cur = (p.re * inv - ox, p.im * inv - oy);
            self.segment(prev, cur);
            prev = cur;
        }
    }

    #[inline]
    fn mark(&mut self, i: i64, j: i64) {
        if i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny {
            self.cells[j as usize * self.nx + i as usize] = TRACE;
        }
    }

    /// Grid traversal that also marks both neighbours when the segment passes (numerically)
    /// through a cell corner, and the neighbour across a grid line the endpoint sits on.
    fn segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        const EPS: f64 = 1e-9;
        let (mut i, mut j) = (a.0 as i64, a.1 as i64);
        let (ti, tj) = (b.0 as i64, b.1 as i64);
        self.mark(i, j);
        self.mark_grid_line_neighbours(b);
        if i == ti && j == tj {
            return;
        }
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let sx = if dx > 0.0 { 1 } else { -1 };
        let sy = if dy > 0.0 { 1 } else { -1 };
        let tdx = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let tdy = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut tmx = if dx > 0.0 {
            ((i + 1) as f64 - a.0) * tdx
        } else if dx < 0.0 {
            (a.0 - i as f64) * tdx
        } else {
            f64::INFINITY
        };
        let mut tmy = if dy > 0.0 {
            ((j + 1) as f64 - a.1) * tdy
        } else if dy < 0.0 {
            (a.1 - j as f64) * tdy
        } else {
            f64::INFINITY
        };
        let budget = (ti - i).abs() + (tj - j).abs() + 4;
        for _ in 0..budget {
            if i == ti && j == tj {
                break;
            }
            if (tmx - tmy).abs() < EPS {
                self.mark(i + sx, j);
                self.mark(i, j + sy);
                i += sx;
                j += sy;
                tmx += tdx;
                tmy += tdy;
            } else if tmx < tmy {
                i += sx;
                tmx += tdx;
            } else {
                j += sy;
                tmy += tdy;
            }
            self.mark(i, j);
        }
        self.mark(ti, tj);
    }

    fn mark_grid_line_neighbours(&mut self, p: (f64, f64)) {
        const EPS: f64 = 1e-9;
        let (i, j) = (p.0 as i64, p.1 as i64);
        let on_x = p.0 - i as f64 <= EPS;
        let on_y = p.1 - j as f64 <= EPS;
        if on_x {
            self.mark(i - 1, j);
        }
        if on_y {
            self.mark(i, j - 1);
        }
        if on_x && on_y {
            self.mark(i - 1, j - 1);
        }
    }

    fn fill_exterior(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let mut stack: Vec<usize> = Vec::with_capacity(4 * (nx + ny));
        let seed = |k: usize, cells: &mut Vec<u8>, stack: &mut Vec<usize>| {
            if cells[k] == FREE {
                cells[k] = OUTSIDE;
                stack.push(k);
            }
        };
        for i in 0..nx {
            seed(i, &mut self.cells, &mut stack);
            seed((ny - 1) * nx + i, &mut self.cells, &mut stack);
        }
        for j in 0..ny {
            seed(j * nx, &mut self.cells, &mut stack);
            seed(j * nx + nx - 1, &mut self.cells, &mut stack);
        }
        let cells = &mut self.cells;
        while let Some(k) = stack.pop() {
            let (i, j) = (k % nx, k / nx);
            if i > 0 && cells[k - 1] == FREE {
                cells[k - 1] = OUTSIDE;
                stack.push(k - 1);
            }
            if i + 1 < nx && cells[k + 1] == FREE {
                cells[k + 1] = OUTSIDE;
                stack.push(k + 1);
            }
            if j > 0 && cells[k - nx] == FREE {
                cells[k - nx] = OUTSIDE;
                stack.push(k - nx);
            }
            if j + 1 < ny && cells[k + nx] == FREE {
                cells[k + nx] = OUTSIDE;
                stack.push(k + nx);
            }
        }
    }

    pub fn cell_of(&self, z: Point) -> (i64, i64) {
        ((z.re / self.rho).floor() as i64, (z.im / self.rho).floor() as i64)
    }

    /// Whether lattice cell `(i, j)` belongs to the hull.
    pub fn cell_in_hull(&self, i: i64, j: i64) -> bool {
        let (a, b) = (i - self.ix0, j - self.iy0);
        if a < 0 || b < 0 || a as usize >= self.nx || b as usize >= self.ny {
            return false;
        }
        self.cells[b as usize * self.nx + a as usize] != OUTSIDE
    }

    pub fn cell_on_trace(&self, i: i64, j: i64) -> bool {
        let (a, b) = (i - self.ix0, j - self.iy0);
        if a < 0 || b < 0 || a as usize >= self.nx || b as usize >= self.ny {
            return false;
        }
        self.cells[b as usize * self.nx + a as usize] == TRACE
    }

    pub fn contains(&self, z: Point) -> bool {
        let (i, j) = self.cell_of(z);
        self.cell_in_hull(i, j)
    }

    pub fn hull_cells(&self) -> usize {
        self.cells.iter().filter(|&&c| c != OUTSIDE).count()
    }

    pub fn area(&self) -> f64 {
        self.hull_cells() as f64 * self.rho * self.rho
    }

    /// Lattice indices of all hull cells.
    pub fn iter_hull(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c != OUTSIDE).map(move |(k, _)| {
            ((k % self.nx) as i64 + self.ix0, (k / self.nx) as i64 + self.iy0)
        })
    }
}

/// Winding number by signed crossings of the rightward ray (exact for points off the path).
pub fn crossing_winding(path: &[Point], z: Point) -> i32 {
    let mut w = 0;
    for s in path.windows(2) {
        let (a, b) = (s[0] - z, s[1] - z);
        if a.im <= 0.0 {
            if b.im > 0.0 && a.re * b.im - a.im * b.re > 0.0 {
                w += 1;
            }
        } else if b.im <= 0.0 && a.re * b.im - a.im * b.re < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Distance from `z` to the polyline.
pub fn path_distance(path: &[Point], z: Point) -> f64 {
    let mut best = f64::INFINITY;
    for s in path.windows(2) {
        let (a, b) = (s[0], s[1]);
        let ab = b - a;
        let l2 = ab.norm_sqr();
        let t = if l2 > 0.0 { (((z - a) * ab.conj()).re / l2).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((z - (a + ab * t)).norm());
    }
    best
}

/// Winding number from the accumulated turning angle; refuses points within `tol` of the path.
pub fn angle_winding(path: &[Point], z: Point, tol: f64) -> Result<i32> {
    if path_distance(path, z) < tol {
        return Err(Error::Proximity { tol });
    }
    let total: f64 = path.windows(2).map(|s| ((s[1] - z) / (s[0] - z)).arg()).sum();
    Ok((total / std::f64::consts::TAU).round() as i32)
}

/// Factor between the target resolution and the chord certificate's resolution.
const CERT_FACTOR: f64 = 16.0;

impl HullMask {
    /// Mask whose trace contains every cell within `radii[k]` of chord `k`; since those
    /// stadiums contain the polyline, exterior cells of this mask are exterior at any finer
    /// resolution.
    pub fn build_thick(geo: &ShapeGeometry, rho: f64) -> Self {
        let reach = geo.radii.iter().fold(0.0f64, |m, &r| m.max(r)) + rho;
        let bb = geo.bbox.expand(reach);
        let ix0 = (bb.x0 / rho).floor() as i64 - 1;
        let iy0 = (bb.y0 / rho).floor() as i64 - 1;
        let nx = ((bb.x1 / rho).floor() as i64 - ix0 + 2) as usize;
        let ny = ((bb.y1 / rho).floor() as i64 - iy0 + 2) as usize;
        let mut m = HullMask { rho, ix0, iy0, nx, ny, cells: vec![FREE; nx * ny] };
        let half_diag = rho * std::f64::consts::FRAC_1_SQRT_2;
        for (k, &r) in geo.radii.iter().enumerate() {
            let (a, b) = (geo.chord_pts[k], geo.chord_pts[k + 1]);
            let t = r + half_diag;
            let t2 = t * t;
            let seg = Rect::of_points([a, b].iter()).expand(t);
            let (i0, i1) = ((seg.x0 / rho).floor() as i64, (seg.x1 / rho).floor() as i64);
            let (j0, j1) = ((seg.y0 / rho).floor() as i64, (seg.y1 / rho).floor() as i64);
            let ab = b - a;
            let l2 = ab.norm_sqr();
            for j in j0..=j1 {
                let cy = (j as f64 + 0.5) * rho;
                for i in i0..=i1 {
                    let cx = (i as f64 + 0.5) * rho;
                    let (px, py) = (cx - a.re, cy - a.im);
                    let s = if l2 > 0.0 { ((px * ab.re + py * ab.im) / l2).clamp(0.0, 1.0) } else { 0.0 };
                    let (dx, dy) = (px - s * ab.re, py - s * ab.im);
                    if dx * dx + dy * dy <= t2 {
                        m.mark(i - ix0, j - iy0);
                    }
                }
            }
        }
        m.fill_exterior();
        m
    }
}

/// Whether the free component of `z`'s cell at resolution `rho` is enclosed. Equivalent to
/// `HullMask::build(path, bbox, rho).contains(z)` but explores only that component.
pub fn component_enclosed(path: &[Point], bbox: &Rect, rho: f64, z: Point) -> bool {
    let mut m = HullMask::build_trace(path, bbox, rho);
    let (i, j) = m.cell_of(z);
    let (a, b) = (i - m.ix0, j - m.iy0);
    if a < 0 || b < 0 || a as usize >= m.nx || b as usize >= m.ny {
        return false;
    }
    let (nx, ny) = (m.nx, m.ny);
    let start = b as usize * nx + a as usize;
    if m.cells[start] == TRACE {
        return true;
    }
    let cells = &mut m.cells;
    cells[start] = OUTSIDE;
    let mut stack = vec![start];
    while let Some(k) = stack.pop() {
        let (i, j) = (k % nx, k / nx);
        if i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
            return false;
        }
        for nb in [k - 1, k + 1, k - nx, k + nx] {
            if cells[nb] == FREE {
                cells[nb] = OUTSIDE;
                stack.push(nb);
            }
        }
    }
    true
}

/// Whether `z` lies in the hull of `path` at resolution `rho`. Agrees with
/// `HullMask::build(path, bbox, rho).contains(z)`.
pub fn covers(path: &[Point], rho: f64, z: Point) -> bool {
    covers_many(path, &ShapeGeometry::of_path(path), rho, &[z])[0]
}

/// Hull membership of many points at resolution `rho`, answered as the fine mask would: bbox,
/// then the chord certificate (exterior there is exterior), then winding (non-zero is inside),
/// and only the remaining points go to the fine raster.
pub fn covers_many(path: &[Point], geo: &ShapeGeometry, rho: f64, zs: &[Point]) -> Vec<bool> {
    let mut out = vec![false; zs.len()];
    let bbox = &geo.bbox;
    let mut open: Vec<usize> = (0..zs.len()).filter(|&k| bbox.contains(zs[k])).collect();
    if open.is_empty() {
        return out;
    }
    let coarse = rho * CERT_FACTOR;
    if bbox.width().max(bbox.height()) >= 8.0 * coarse {
        let cert = HullMask::build_thick(geo, coarse);
        open.retain(|&k| cert.contains(zs[k]));
    }
    if open.len() <= 8 {
        open.retain(|&k| {
            let inside = crossing_winding(path, zs[k]) != 0;
            out[k] = inside;
            !inside
        });
    }
    if open.len() <= 2 {
        for k in open {
            out[k] = component_enclosed(path, bbox, rho, zs[k]);
        }
    } else {
        let fine = HullMask::build(path, bbox, rho);
        for k in open {
            out[k] = fine.contains(zs[k]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn polygon(n: usize, turns: usize) -> Vec<Point> {
        (0..=n * turns).map(|k| Point::from_polar(1.0, TAU * k as f64 / n as f64)).collect()
    }

    #[test]
    fn circle_hull() {
        let p = polygon(64, 1);
        let b = Rect::of_points(p.iter());
        let m = HullMask::build(&p, &b, 1.0 / 64.0);
        assert!(m.contains(Point::new(0.0, 0.0)));
        assert!(m.contains(Point::new(0.99, 0.0)));
        assert!(!m.contains(Point::new(2.0, 0.0)));
        assert!((m.area() - PI).abs() < 0.05 * PI);
    }

    #[test]
    fn windings() {
        let once = polygon(64, 1);
        let twice = polygon(64, 2);
        assert_eq!(crossing_winding(&once, Point::new(0.0, 0.0)), 1);
        assert_eq!(crossing_winding(&once, Point::new(3.0, 0.0)), 0);
        assert_eq!(crossing_winding(&twice, Point::new(0.0, 0.0)), 2);
        assert_eq!(angle_winding(&twice, Point::new(0.0, 0.0), 0.01).unwrap(), 2);
        assert!(matches!(angle_winding(&once, Point::new(1.0, 0.0), 0.01), Err(Error::Proximity { .. })));
    }

    #[test]
    fn figure_eight_lobes_are_hull() {
        let p: Vec<Point> = (0..=256)
            .map(|k| {
                let t = TAU * k as f64 / 256.0;
                Point::new((2.0 * t).sin(), t.sin())
            })
            .collect();
        let b = Rect::of_points(p.iter());
        let z = Point::new(0.5, 0.5);
        let m = HullMask::build(&p, &b, 1.0 / 64.0);
        let fine = HullMask::build(&p, &b, 1.0 / 256.0);
        assert!(m.contains(z) && fine.contains(z));
        let out = Point::new(0.9, 0.1);
        assert!(!m.contains(out) && !fine.contains(out));
        assert!(covers(&p, 1.0 / 64.0, z));
        assert!(!covers(&p, 1.0 / 64.0, out));
    }
}
