//! Closed-form correlation functions of the layering field, evaluated from table masses.
//!
//! Every formula is an exponential of a linear combination of masses of disjoint loop families,
//! whose Monte Carlo counts are independent; errors are propagated to first order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{exp_of_sum, Estimate};
use crate::geometry::{ConformalMap, Domain, Point, PointPair};
use crate::loopmeasure::AlphaTable;
use crate::soup::{scaling_exponent, FieldParams};

/// `10·Δ(λ, β) = λ(cosh β − 1)`, the coefficient of masses in the exponents.
fn rate(lambda: f64, beta: f64) -> f64 {
    10.0 * scaling_exponent(lambda, beta)
}

/// `⟨V_β(z)⟩ = d_z^{2Δ}·exp(10Δ·α_{d_z}(z))`.
pub fn one_point_limit(domain: &Domain, z: Point, params: &FieldParams, table: &AlphaTable) -> Result<Estimate> {
    let dz = domain.boundary_distance(z)?;
    let i = table.require_index(z)?;
    let a = table.alpha(i, dz)?;
    Ok(exp_of_sum(dz.powf(2.0 * params.delta()), &[(rate(params.lambda, params.beta), a)]))
}

/// `E[V^δ_β(z)·V^{δ′}_{β′}(w)]` for cutoffs below the separation.
#[allow(clippy::too_many_arguments)]
pub fn two_point_cutoff(
    z: Point,
    w: Point,
    delta: f64,
    delta_p: f64,
    beta: f64,
    beta_p: f64,
    lambda: f64,
    table: &AlphaTable,
) -> Result<Estimate> {
    let sep = (z - w).norm();
    if sep == 0.0 {
        return Err(Error::Diagonal);
    }
    if delta >= sep || delta_p >= sep {
        return Err(Error::Parameter(format!("cutoffs ({delta}, {delta_p}) must be below the separation {sep}")));
    }
    let (i, j) = (table.require_index(z)?, table.require_index(w)?);
    let terms = [
        (rate(lambda, beta), table.alpha_excl(i, j, delta)?),
        (rate(lambda, beta + beta_p), table.alpha_pair(i, j)?),
        (rate(lambda, beta_p), table.alpha_excl(j, i, delta_p)?),
    ];
    Ok(exp_of_sum(1.0, &terms))
}

/// `⟨V_β(z)V_β(w)⟩`.
pub fn two_point_limit(domain: &Domain, z: Point, w: Point, params: &FieldParams, table: &AlphaTable) -> Result<Estimate> {
    let pp = PointPair::new(domain, z, w)?;
    let (i, j) = (table.require_index(z)?, table.require_index(w)?);
    let (l, b) = (params.lambda, params.beta);
    let terms = [
        (rate(l, 2.0 * b), table.alpha_pair(i, j)?),
        (rate(l, b), table.alpha_excl(i, j, pp.d_zw)?),
        (rate(l, b), table.alpha_excl(j, i, pp.d_wz)?),
    ];
    Ok(exp_of_sum((pp.d_zw * pp.d_wz).powf(2.0 * params.delta()), &terms))
}

/// Points with exponents for n-point functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NPointSpec {
    pub points: Vec<Point>,
    pub betas: Vec<f64>,
    /// Smallest pairwise or boundary distance.
    pub m: f64,
}

/// Largest supported number of points (2ⁿ − 1 cover patterns).
pub const MAX_POINTS: usize = 4;

impl NPointSpec {
    pub fn new(domain: &Domain, points: Vec<Point>, betas: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != betas.len() {
            return Err(Error::Parameter(format!("{} points with {} exponents", points.len(), betas.len())));
        }
        if points.len() > MAX_POINTS {
            return Err(Error::Parameter(format!("at most {MAX_POINTS} points are supported, got {}", points.len())));
        }
        let mut m = f64::INFINITY;
        for (k, z) in points.iter().enumerate() {
            m = m.min(domain.boundary_distance(*z)?);
            for w in &points[..k] {
                let d = (z - w).norm();
                if d == 0.0 {
                    return Err(Error::Diagonal);
                }
                m = m.min(d);
            }
        }
        if !(m > 0.0) {
            return Err(Error::Parameter("points must be interior".into()));
        }
        Ok(NPointSpec { points, betas, m })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Masses of loops covering exactly the pattern `mask` among the spec's points (bit k ↔ point
/// k). Multi-point patterns have diameter at least `m` automatically; singleton entries are
/// taken at cutoff `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverPatternMasses {
    pub n: usize,
    pub delta: f64,
    pub masses: Vec<(u32, Estimate)>,
}

impl CoverPatternMasses {
    pub fn from_table(spec: &NPointSpec, table: &AlphaTable) -> Result<Self> {
        let idx: Vec<usize> = spec.points.iter().map(|z| table.require_index(*z)).collect::<Result<_>>()?;
        let masses = table.pattern_masses(&idx, spec.m)?;
        Ok(CoverPatternMasses { n: spec.len(), delta: spec.m, masses })
    }

    pub fn get(&self, mask: u32) -> Result<&Estimate> {
        self.masses
            .iter()
            .find(|(m, _)| *m == mask)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::MissingEntry(format!("cover pattern {mask:#b}")))
    }

    /// `Σ` over patterns containing point k, i.e. the total mass of loops covering it.
    pub fn covering(&self, k: usize) -> Estimate {
        let mut acc = Estimate::exact(0.0);
        for (m, e) in &self.masses {
            if m & (1 << k) != 0 {
                acc = acc.add(e);
            }
        }
        acc
    }
}

/// `φ_D(z₁..z_n; β⃗)`.
pub fn n_point_limit(spec: &NPointSpec, lambda: f64, masses: &CoverPatternMasses) -> Result<Estimate> {
    if masses.n != spec.len() {
        return Err(Error::Parameter(format!("pattern masses for {} points, spec has {}", masses.n, spec.len())));
    }
    let total_delta: f64 = spec.betas.iter().map(|&b| scaling_exponent(lambda, b)).sum();
    let mut terms = Vec::new();
    for mask in 1u32..(1 << spec.len()) {
        let beta: f64 = (0..spec.len()).filter(|k| mask & (1 << k) != 0).map(|k| spec.betas[k]).sum();
        terms.push((rate(lambda, beta), *masses.get(mask)?));
    }
    Ok(exp_of_sum(spec.m.powf(2.0 * total_delta), &terms))
}

/// Measured and predicted ratios for conformal covariance under a disk automorphism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub original: Estimate,
    pub mapped: Estimate,
    pub ratio: Estimate,
    /// `Π_j |f′(z_j)|^{2Δ(β_j)}`.
    pub predicted: f64,
    /// Smallest separation scale of each configuration; small values mean large variance.
    pub m_original: f64,
    pub m_mapped: f64,
}

impl CovarianceReport {
    pub fn relative_gap(&self) -> f64 {
        (self.ratio.value / self.predicted - 1.0).abs()
    }
}

/// `φ_D(f(z⃗))/φ_D(z⃗)` against `Π|f′(z_j)|^{2Δ(β_j)}` for `f` a Möbius automorphism of the
/// unit disk; each configuration is evaluated from its own table.
pub fn conformal_covariance_check(
    map: &ConformalMap,
    spec: &NPointSpec,
    lambda: f64,
    table: &AlphaTable,
    mapped_table: &AlphaTable,
) -> Result<CovarianceReport> {
    if !matches!(map, ConformalMap::Identity | ConformalMap::Mobius { .. }) {
        return Err(Error::Parameter("covariance checks use disk automorphisms".into()));
    }
    let domain = *table.domain();
    let images: Vec<Point> = spec.points.iter().map(|&z| map.eval(z)).collect();
    let mapped = NPointSpec::new(&domain, images, spec.betas.clone()).map_err(|e| match e {
        Error::Diagonal | Error::OutsideDomain(_) | Error::Parameter(_) => {
            Error::Parameter(format!("degenerate mapped configuration: {e}"))
        }
        other => other,
    })?;
    let original = n_point_limit(spec, lambda, &CoverPatternMasses::from_table(spec, table)?)?;
    let image = n_point_limit(&mapped, lambda, &CoverPatternMasses::from_table(&mapped, mapped_table)?)?;
    let predicted: f64 = spec
        .points
        .iter()
        .zip(&spec.betas)
        .map(|(&z, &b)| map.deriv_modulus(z).powf(2.0 * scaling_exponent(lambda, b)))
        .product();
    let ratio = if spec.points == mapped.points && std::ptr::eq(table, mapped_table) {
        Estimate::exact(1.0)
    } else {
        image.ratio(&original)
    };
    Ok(CovarianceReport { original, mapped: image, ratio, predicted, m_original: spec.m, m_mapped: mapped.m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopmeasure::{Budget, CutoffConfig, TableSpec};

    fn table(points: Vec<Point>, n_rep: usize, seed: u64) -> AlphaTable {
        AlphaTable::build(TableSpec {
            domain: Domain::unit_disk(),
            points,
            delta_list: vec![0.2],
            cutoffs: CutoffConfig::new(0.1).with_steps(2048),
            budget: Budget { lambda: 20.0, n_rep, seed },
        })
        .unwrap()
    }

    fn pts() -> Vec<Point> {
        vec![Point::new(-0.3, 0.0), Point::new(0.3, 0.0), Point::new(0.0, 0.4)]
    }

    #[test]
    fn zero_beta_gives_one() {
        let d = Domain::unit_disk();
        let t = table(pts(), 4, 1);
        let p = FieldParams::new(1.0, 0.0).unwrap();
        assert_eq!(one_point_limit(&d, pts()[0], &p, &t).unwrap().value, 1.0);
        assert_eq!(two_point_limit(&d, pts()[0], pts()[1], &p, &t).unwrap().value, 1.0);
        let spec = NPointSpec::new(&d, pts(), vec![0.0; 3]).unwrap();
        let m = CoverPatternMasses::from_table(&spec, &t).unwrap();
        assert_eq!(n_point_limit(&spec, 1.0, &m).unwrap().value, 1.0);
    }

    #[test]
    fn reductions_and_symmetries() {
        let d = Domain::unit_disk();
        let t = table(pts(), 4, 2);
        let (z, w) = (pts()[0], pts()[1]);
        let (i, _j) = (t.require_index(z).unwrap(), t.require_index(w).unwrap());
        // β′ = 0 merges the first two factors into the one-point cutoff mean.
        let two = two_point_cutoff(z, w, 0.15, 0.15, 1.0, 0.0, 1.0, &t).unwrap();
        let one = (t.alpha(i, 0.15).unwrap().value * (1f64.cosh() - 1.0)).exp();
        assert!((two.value - one).abs() < 1e-12 * one);
        // β′ = −β kills the middle factor.
        let anti = two_point_cutoff(z, w, 0.15, 0.15, 0.7, -0.7, 1.0, &t).unwrap();
        let a1 = t.alpha_excl(0, 1, 0.15).unwrap().value;
        let a2 = t.alpha_excl(1, 0, 0.15).unwrap().value;
        assert!((anti.value - ((a1 + a2) * (0.7f64.cosh() - 1.0)).exp()).abs() < 1e-12);
        assert!(matches!(two_point_cutoff(z, w, 0.7, 0.1, 1.0, 1.0, 1.0, &t), Err(Error::Parameter(_))));
        let p = FieldParams::new(1.0, 0.8).unwrap();
        let zw = two_point_limit(&d, z, w, &p, &t).unwrap().value;
        let wz = two_point_limit(&d, w, z, &p, &t).unwrap().value;
        assert_eq!(zw, wz);
    }

    #[test]
    fn n_point_reduces_and_is_exchangeable() {
        let d = Domain::unit_disk();
        let t = table(pts(), 4, 3);
        let p = FieldParams::new(1.0, 0.9).unwrap();
        let z = pts()[2];
        let s1 = NPointSpec::new(&d, vec![z], vec![0.9]).unwrap();
        let m1 = CoverPatternMasses::from_table(&s1, &t).unwrap();
        let one = one_point_limit(&d, z, &p, &t).unwrap();
        assert!((n_point_limit(&s1, 1.0, &m1).unwrap().value - one.value).abs() < 1e-12 * one.value);

        let spec = NPointSpec::new(&d, pts(), vec![0.3, 0.9, -0.4]).unwrap();
        let perm = NPointSpec::new(&d, vec![pts()[2], pts()[0], pts()[1]], vec![-0.4, 0.3, 0.9]).unwrap();
        let a = n_point_limit(&spec, 1.0, &CoverPatternMasses::from_table(&spec, &t).unwrap()).unwrap();
        let b = n_point_limit(&perm, 1.0, &CoverPatternMasses::from_table(&perm, &t).unwrap()).unwrap();
        assert!((a.value - b.value).abs() < 1e-12 * a.value);
        assert!(a.value > 0.0);
        let pair = NPointSpec::new(&d, pts()[..2].to_vec(), vec![0.9, 0.9]).unwrap();
        let np = n_point_limit(&pair, 1.0, &CoverPatternMasses::from_table(&pair, &t).unwrap()).unwrap();
        let tp = two_point_limit(&d, pts()[0], pts()[1], &p, &t).unwrap();
        assert!(crate::estimate::agree(&np, &tp, 3.0), "{np:?} vs {tp:?}");
        assert!(NPointSpec::new(&d, vec![z; 2], vec![1.0; 2]).is_err());
        assert!(NPointSpec::new(&d, vec![z; 5], vec![1.0; 5]).is_err());
    }

    #[test]
    fn pattern_sums_match_point_masses() {
        let d = Domain::unit_disk();
        let t = table(pts(), 4, 4);
        let spec = NPointSpec::new(&d, pts(), vec![1.0; 3]).unwrap();
        let m = CoverPatternMasses::from_table(&spec, &t).unwrap();
        for k in 0..3 {
            let direct = t.alpha(k, spec.m).unwrap();
            assert!((m.covering(k).value - direct.value).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_map_ratio_is_exact() {
        let d = Domain::unit_disk();
        let t = table(pts(), 2, 5);
        let spec = NPointSpec::new(&d, pts()[..2].to_vec(), vec![0.8, 0.8]).unwrap();
        let r = conformal_covariance_check(&ConformalMap::mobius(Point::new(0.0, 0.0)).unwrap(), &spec, 1.0, &t, &t).unwrap();
        assert_eq!(r.ratio.value, 1.0);
        assert_eq!(r.predicted, 1.0);
    }

    #[test]
    fn mobius_factor_at_origin() {
        let f = ConformalMap::mobius(Point::new(0.5, 0.0)).unwrap();
        let delta = scaling_exponent(1.0, 0.7);
        assert!((f.deriv_modulus(Point::new(0.0, 0.0)).powf(2.0 * delta) - 0.75f64.powf(2.0 * delta)).abs() < 1e-15);
    }
}
