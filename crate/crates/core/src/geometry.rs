//! Planar domains, boundary distances and the registered conformal maps.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Complex64;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

    pub fn around(p: Point, r: f64) -> Self {
        Rect::new(p.re - r, p.im - r, p.re + r, p.im + r)
    }

    pub fn of_points<'a, I: IntoIterator<Item = &'a Point>>(pts: I) -> Self {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            if p.re < r.x0 {
                r.x0 = p.re;
            }
            if p.re > r.x1 {
                r.x1 = p.re;
            }
            if p.im < r.y0 {
                r.y0 = p.im;
            }
            if p.im > r.y1 {
                r.y1 = p.im;
            }
        }
        r
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

    pub fn contains(&self, p: Point) -> bool {
        p.re >= self.x0 && p.re <= self.x1 && p.im >= self.y0 && p.im <= self.y1
    }

    pub fn expand(&self, m: f64) -> Self {
        Rect::new(self.x0 - m, self.y0 - m, self.x1 + m, self.y1 + m)
    }

    pub fn intersect(&self, o: &Rect) -> Self {
        Rect::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1))
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.re).max(p.re - self.x1).max(0.0);
        let dy = (self.y0 - p.im).max(p.im - self.y1).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum ConformalMap {
    Identity,
    /// Disk automorphism `z ↦ (z − a)/(1 − ā z)`.
    Mobius { a: Point },
    /// Disk onto upper half-plane, `w ↦ i(1 + w)/(1 − w)`.
    Cayley,
    /// `z ↦ scale·z + shift`.
    Affine { scale: Point, shift: Point },
}

impl ConformalMap {
    pub fn mobius(a: Point) -> Result<Self> {
        if !(a.norm() < 1.0) {
            return Err(Error::Parameter(format!("Möbius parameter |a| = {} must be < 1", a.norm())));
        }
        Ok(ConformalMap::Mobius { a })
    }

    pub fn eval(&self, z: Point) -> Point {
        match *self {
            ConformalMap::Identity => z,
            ConformalMap::Mobius { a } => (z - a) / (Point::new(1.0, 0.0) - a.conj() * z),
            ConformalMap::Cayley => Point::i() * (1.0 + z) / (1.0 - z),
            ConformalMap::Affine { scale, shift } => scale * z + shift,
        }
    }

    pub fn inverse(&self, w: Point) -> Point {
        match *self {
            ConformalMap::Identity => w,
            ConformalMap::Mobius { a } => (w + a) / (Point::new(1.0, 0.0) + a.conj() * w),
            ConformalMap::Cayley => (w - Point::i()) / (w + Point::i()),
            ConformalMap::Affine { scale, shift } => (w - shift) / scale,
        }
    }

    pub fn deriv_modulus(&self, z: Point) -> f64 {
        match *self {
            ConformalMap::Identity => 1.0,
            ConformalMap::Mobius { a } => {
                (1.0 - a.norm_sqr()) / (Point::new(1.0, 0.0) - a.conj() * z).norm_sqr()
            }
            ConformalMap::Cayley => 2.0 / (1.0 - z).norm_sqr(),
            ConformalMap::Affine { scale, .. } => scale.norm(),
        }
    }
}

/// `(1 − |a|²)/|1 − ā z|²`, the stretch factor of the disk automorphism moving `a` to 0.
pub fn mobius_derivative_modulus(a: Point, z: Point) -> Result<f64> {
    let f = ConformalMap::mobius(a)?;
    if !(z.norm() < 1.0) {
        return Err(Error::OutsideDomain(z));
    }
    Ok(f.deriv_modulus(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    UnitDisk,
    Square { center: Point, side: f64 },
    /// Image of the unit disk under a registered map.
    MappedDisk { map: ConformalMap },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub bbox: Rect,
}

impl Domain {
    pub fn unit_disk() -> Self {
        Domain { kind: DomainKind::UnitDisk, bbox: Rect::new(-1.0, -1.0, 1.0, 1.0) }
    }

    pub fn square(center: Point, side: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::Parameter(format!("square side {side} must be positive")));
        }
        let h = side / 2.0;
        Ok(Domain { kind: DomainKind::Square { center, side }, bbox: Rect::around(center, h) })
    }

    pub fn mapped_disk(map: ConformalMap) -> Result<Self> {
        let bbox = match map {
            ConformalMap::Identity | ConformalMap::Mobius { .. } => Rect::new(-1.0, -1.0, 1.0, 1.0),
            ConformalMap::Affine { scale, shift } => Rect::around(shift, scale.norm()),
            ConformalMap::Cayley => {
                return Err(Error::Parameter(
                    "the Cayley image of the disk is unbounded and cannot be a sampling domain".into(),
                ))
            }
        };
        if let ConformalMap::Affine { scale, .. } = map {
            if !(scale.norm() > 0.0) {
                return Err(Error::Parameter("affine scale must be non-zero".into()));
            }
        }
        Ok(Domain { kind: DomainKind::MappedDisk { map }, bbox })
    }

    /// Center and radius when the domain is a round disk.
    fn as_disk(&self) -> Option<(Point, f64)> {
        match self.kind {
            DomainKind::UnitDisk => Some((Point::new(0.0, 0.0), 1.0)),
            DomainKind::MappedDisk { map: ConformalMap::Affine { scale, shift } } => Some((shift, scale.norm())),
            DomainKind::MappedDisk { .. } => Some((Point::new(0.0, 0.0), 1.0)),
            DomainKind::Square { .. } => None,
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn signed_distance(&self, z: Point) -> f64 {
        match self.as_disk() {
            Some((c, r)) => r - (z - c).norm(),
            None => {
                let DomainKind::Square { center, side } = self.kind else { unreachable!() };
                let h = side / 2.0;
                let dx = h - (z.re - center.re).abs();
                let dy = h - (z.im - center.im).abs();
                if dx >= 0.0 && dy >= 0.0 {
                    dx.min(dy)
                } else {
                    -(dx.min(0.0).hypot(dy.min(0.0)))
                }
            }
        }
    }

    pub fn contains(&self, z: Point) -> bool {
        self.signed_distance(z) > 0.0
    }

    pub fn boundary_distance(&self, z: Point) -> Result<f64> {
        let d = self.signed_distance(z);
        if d >= 0.0 {
            Ok(d)
        } else {
            Err(Error::OutsideDomain(z))
        }
    }

    /// Whether the open ball `B(z, r)` lies inside the domain.
    pub fn contains_ball(&self, z: Point, r: f64) -> bool {
        self.signed_distance(z) >= r
    }

    pub fn diameter(&self) -> f64 {
        match self.as_disk() {
            Some((_, r)) => 2.0 * r,
            None => self.bbox.width() * std::f64::consts::SQRT_2,
        }
    }

    pub fn area(&self) -> f64 {
        match self.as_disk() {
            Some((_, r)) => std::f64::consts::PI * r * r,
            None => self.bbox.area(),
        }
    }
}

/// Uniform midpoint-rule grid: square cells lying entirely inside the domain. The measure of
/// the dropped boundary cells is reported as `deficit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub domain: Domain,
    pub h: f64,
    pub centers: Vec<Point>,
    pub deficit: f64,
}

impl QuadGrid {
    /// `n` cells across the longer side of the domain's bounding box.
    pub fn uniform(domain: &Domain, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("quadrature grid needs at least one cell".into()));
        }
        let b = domain.bbox;
        let h = b.width().max(b.height()) / n as f64;
        let (nx, ny) = ((b.width() / h).round() as usize, (b.height() / h).round() as usize);
        let mut centers = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (x0, y0) = (b.x0 + i as f64 * h, b.y0 + j as f64 * h);
                // Domains are convex: four corners inside means the cell is.
                let corners = [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h)];
                if corners.iter().all(|&(x, y)| domain.signed_distance(Point::new(x, y)) >= 0.0) {
                    centers.push(Point::new(x0 + 0.5 * h, y0 + 0.5 * h));
                }
            }
        }
        if centers.is_empty() {
            return Err(Error::GridMismatch(format!("no cell of side {h} fits inside the domain")));
        }
        let deficit = domain.area() - centers.len() as f64 * h * h;
        Ok(QuadGrid { domain: *domain, h, centers, deficit })
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Midpoint rule `Σ f(z_k)·h²`.
    pub fn integrate<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        self.centers.iter().map(|&z| f(z)).sum::<f64>() * self.cell_area()
    }
}

/// A pair of points with the truncated separations used by two-point formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub z: Point,
    pub w: Point,
    pub d_zw: f64,
    pub d_wz: f64,
}

impl PointPair {
    pub fn new(domain: &Domain, z: Point, w: Point) -> Result<Self> {
        let sep = (z - w).norm();
        if sep == 0.0 {
            return Err(Error::Diagonal);
        }
        let dz = domain.boundary_distance(z)?;
        let dw = domain.boundary_distance(w)?;
        Ok(PointPair { z, w, d_zw: sep.min(dz), d_wz: sep.min(dw) })
    }

    pub fn separation(&self) -> f64 {
        (self.z - self.w).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Point {
        Point::new(re, im)
    }

    #[test]
    fn quad_grid_covers_disk() {
        let g = QuadGrid::uniform(&Domain::unit_disk(), 64).unwrap();
        assert!(g.deficit > 0.0 && g.deficit < 0.15);
        assert!((g.integrate(|_| 1.0) + g.deficit - std::f64::consts::PI).abs() < 1e-12);
        let sq = QuadGrid::uniform(&Domain::square(Point::new(0.0, 0.0), 2.0).unwrap(), 10).unwrap();
        assert_eq!(sq.len(), 100);
        assert!(sq.deficit.abs() < 1e-12);
        assert!((sq.integrate(|z| z.re * z.re) - 4.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn boundary_distances() {
        let d = Domain::unit_disk();
        assert_eq!(d.boundary_distance(c(0.0, 0.0)).unwrap(), 1.0);
        assert!((d.boundary_distance(c(0.6, 0.0)).unwrap() - 0.4).abs() < 1e-15);
        let s = Domain::square(c(0.0, 0.0), 2.0).unwrap();
        assert!((s.boundary_distance(c(0.3, 0.1)).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(d.boundary_distance(c(1.5, 0.0)), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn mobius_modulus_values() {
        assert_eq!(mobius_derivative_modulus(c(0.0, 0.0), c(0.3, -0.2)).unwrap(), 1.0);
        assert!((mobius_derivative_modulus(c(0.5, 0.0), c(0.0, 0.0)).unwrap() - 0.75).abs() < 1e-15);
        assert!((mobius_derivative_modulus(c(0.5, 0.0), c(0.5, 0.0)).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!(mobius_derivative_modulus(c(1.0, 0.0), c(0.0, 0.0)).is_err());
    }

    #[test]
    fn cayley_maps_disk_to_half_plane() {
        let f = ConformalMap::Cayley;
        assert!((f.eval(c(0.0, 0.0)) - c(0.0, 1.0)).norm() < 1e-15);
        let w = f.eval(c(0.3, -0.5));
        assert!(w.im > 0.0);
        assert!((f.inverse(w) - c(0.3, -0.5)).norm() < 1e-14);
        assert!(Domain::mapped_disk(f).is_err());
    }

    #[test]
    fn point_pair_truncations() {
        let d = Domain::unit_disk();
        let p = PointPair::new(&d, c(0.9, 0.0), c(0.5, 0.0)).unwrap();
        assert!((p.d_zw - 0.1).abs() < 1e-15);
        assert!((p.d_wz - 0.4).abs() < 1e-15);
        assert!(matches!(PointPair::new(&d, c(0.1, 0.0), c(0.1, 0.0)), Err(Error::Diagonal)));
    }

    fn disk_point() -> impl Strategy<Value = Point> {
        (0.0..0.999f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| Point::from_polar(r, t))
    }

    proptest! {
        #[test]
        fn mobius_preserves_disk(a in disk_point(), z in disk_point()) {
            let f = ConformalMap::mobius(a).unwrap();
            prop_assert!(f.eval(z).norm() < 1.0 + 1e-12);
            prop_assert!((f.inverse(f.eval(z)) - z).norm() < 1e-9);
        }

        #[test]
        fn chain_rule(a in disk_point(), b in disk_point(), z in disk_point()) {
            let f = ConformalMap::mobius(a).unwrap();
            let g = ConformalMap::mobius(b).unwrap();
            // g∘f is a rotation of the automorphism sending f⁻¹(b) to 0.
            let c = f.inverse(b);
            let direct = ConformalMap::mobius(c).unwrap().deriv_modulus(z);
            let chained = g.deriv_modulus(f.eval(z)) * f.deriv_modulus(z);
            prop_assert!((direct - chained).abs() <= 1e-12 * direct.max(1.0));
        }

        #[test]
        fn pair_truncations_bounded(z in disk_point(), w in disk_point()) {
            prop_assume!((z - w).norm() > 1e-9);
            let p = PointPair::new(&Domain::unit_disk(), z, w).unwrap();
            prop_assert!(p.d_zw <= p.separation() && p.d_zw <= 1.0 - z.norm() + 1e-15);
            prop_assert!(p.d_wz <= p.separation());
        }
    }
}
