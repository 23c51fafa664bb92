//! The Gaussian layering field: white noise on loop space with control measure the loop
//! measure, evaluated on cover sets `A_δ(z)`, together with its GMC normalization.
//!
//! Values on a finite family of cover sets are sampled jointly from the covariance
//! `μ(A ∩ B)`, read from an [`AlphaTable`], via a symmetric eigen-factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{exp_of_sum, Estimate};
use crate::geometry::{Domain, Point, PointPair};
use crate::loopmeasure::AlphaTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussParams {
    pub xi: f64,
}

impl GaussParams {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::Parameter(format!("ξ = {xi} must be non-negative and finite")));
        }
        Ok(GaussParams { xi })
    }

    /// `Δ_ξ = ξ²/20`.
    pub fn delta(&self) -> f64 {
        self.xi * self.xi / 20.0
    }

    pub fn subcritical(&self) -> bool {
        self.xi < 2.0
    }

    pub fn square_integrable(&self) -> bool {
        self.xi < std::f64::consts::SQRT_2
    }

    pub fn correlator_regime(&self) -> bool {
        self.delta() < 0.25
    }
}

/// A cover set `A_δ(z_i)`: table point index and cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverSet {
    pub point: usize,
    pub delta: f64,
}

/// Covariance of the field on a family of cover sets, with its factor.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub sets: Vec<CoverSet>,
    pub points: Vec<Point>,
    pub matrix: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    /// Eigenvalues clipped to zero by the repair.
    pub clipped: usize,
    factor: DMatrix<f64>,
}

/// `μ(A_{δ_i}(z_i) ∩ A_{δ_j}(z_j))`: loops covering both with diameter at least the larger cutoff.
pub fn covariance_of_sets(table: &AlphaTable, sets: &[CoverSet]) -> Result<Covariance> {
    let n = sets.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let (s, t) = (sets[a], sets[b]);
            let cut = s.delta.max(t.delta);
            let est = if s.point == t.point { table.alpha(s.point, cut)? } else { table.alpha_pair_cut(s.point, t.point, cut)? };
            m[(a, b)] = est.value;
            m[(b, a)] = est.value;
            e[(a, b)] = est.stderr;
            e[(b, a)] = est.stderr;
        }
    }
    let points = sets.iter().map(|s| table.points()[s.point]).collect();
    let (factor, clipped) = factorize(&m, 3.0 * e.max())?;
    Ok(Covariance { sets: sets.to_vec(), points, matrix: m, stderr: e, clipped, factor })
}

/// Covariance of `G(A_δ(z_i))` over the given table points. Points closer than δ are rejected:
/// the joint law there is not needed and not exercised.
pub fn covariance_matrix(table: &AlphaTable, points: &[Point], delta: f64) -> Result<Covariance> {
    for (k, z) in points.iter().enumerate() {
        for w in &points[..k] {
            if (z - w).norm() < delta {
                return Err(Error::GridMismatch(format!(
                    "points ({}, {}) and ({}, {}) are closer than δ = {delta}",
                    z.re, z.im, w.re, w.im
                )));
            }
        }
    }
    let sets: Vec<CoverSet> =
        points.iter().map(|z| Ok(CoverSet { point: table.require_index(*z)?, delta })).collect::<Result<_>>()?;
    covariance_of_sets(table, &sets)
}

/// Symmetric factor `V·√Λ`, clipping negative eigenvalues no larger than `tol` in magnitude.
fn factorize(m: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let eig = SymmetricEigen::new(m.clone());
    let mut clipped = 0;
    let mut root = DVector::zeros(m.nrows());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::Factorization);
        }
        if l < 0.0 {
            if -l > tol {
                return Err(Error::TableQuality(format!(
                    "covariance eigenvalue {l:.3e} is below −3 × table stderr ({:.3e})",
                    -tol
                )));
            }
            clipped += 1;
        } else {
            root[k] = l.sqrt();
        }
    }
    Ok((&eig.eigenvectors * DMatrix::from_diagonal(&root), clipped))
}

impl Covariance {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Copy with every entry multiplied by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Covariance {
            matrix: &self.matrix * c,
            stderr: &self.stderr * c,
            factor: &self.factor * c.sqrt(),
            ..self.clone()
        }
    }
}

/// One joint draw of the field on the covariance's cover sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFieldSample {
    pub points: Vec<Point>,
    pub sets: Vec<CoverSet>,
    pub values: Vec<f64>,
}

pub fn sample_gaussian_field<R: Rng + ?Sized>(cov: &Covariance, rng: &mut R) -> GaussFieldSample {
    let n = cov.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let g = &cov.factor * z;
    GaussFieldSample { points: cov.points.clone(), sets: cov.sets.clone(), values: g.iter().copied().collect() }
}

/// `e^{ξG_i}`, or `δ^{2Δ_ξ}·e^{ξG_i}` when renormalized.
pub fn glf_value(sample: &GaussFieldSample, i: usize, gauss: &GaussParams, delta: f64, renormalize: bool) -> f64 {
    let v = (gauss.xi * sample.values[i]).exp();
    if renormalize {
        delta.powf(2.0 * gauss.delta()) * v
    } else {
        v
    }
}

/// `⟨W_ξ(z)⟩ = d_z^{2Δ_ξ}·e^{(ξ²/2)α_{d_z}(z)}`.
pub fn glf_one_point(domain: &Domain, z: Point, gauss: &GaussParams, table: &AlphaTable) -> Result<Estimate> {
    let dz = domain.boundary_distance(z)?;
    let a = table.alpha(table.require_index(z)?, dz)?;
    Ok(exp_of_sum(dz.powf(2.0 * gauss.delta()), &[(gauss.xi * gauss.xi / 2.0, a)]))
}

/// `⟨W_ξ(z)W_ξ(w)⟩`. With `α_{d_{z,w}}(z) = α_{d_{z,w}}(z|w) + α(z,w)` the exponent splits
/// into masses of disjoint families.
pub fn glf_two_point(domain: &Domain, z: Point, w: Point, gauss: &GaussParams, table: &AlphaTable) -> Result<Estimate> {
    let pp = PointPair::new(domain, z, w)?;
    let (i, j) = (table.require_index(z)?, table.require_index(w)?);
    let x2 = gauss.xi * gauss.xi;
    let terms = [
        (x2 / 2.0, table.alpha_excl(i, j, pp.d_zw)?),
        (x2 / 2.0, table.alpha_excl(j, i, pp.d_wz)?),
        (2.0 * x2, table.alpha_pair(i, j)?),
    ];
    Ok(exp_of_sum((pp.d_zw * pp.d_wz).powf(2.0 * gauss.delta()), &terms))
}

/// `e^{ξG_i − (ξ²/2)α_δ(z_i)}`, the normalized GMC density on the sample's set i.
pub fn gmc_density_factor(
    sample: &GaussFieldSample,
    i: usize,
    gauss: &GaussParams,
    delta: f64,
    table: &AlphaTable,
) -> Result<f64> {
    let a = table.alpha(sample.sets[i].point, delta)?;
    Ok((gauss.xi * sample.values[i] - gauss.xi * gauss.xi / 2.0 * a.value).exp())
}

/// `Θ_D(z) = (1/5)ln d_z + α_{d_z}(z)`.
pub fn theta(domain: &Domain, z: Point, table: &AlphaTable) -> Result<Estimate> {
    let dz = domain.boundary_distance(z)?;
    let a = table.alpha(table.require_index(z)?, dz)?;
    Ok(Estimate::new(0.2 * dz.ln() + a.value, a.stderr, a.n))
}

/// `Θ_δ(z) = (1/5)ln δ + α_δ(z)`.
pub fn theta_cutoff(z_index: usize, delta: f64, table: &AlphaTable) -> Result<Estimate> {
    let a = table.alpha(z_index, delta)?;
    Ok(Estimate::new(0.2 * delta.ln() + a.value, a.stderr, a.n))
}
