//! Signed loop soups and the Poisson layering field with diameter cutoffs.
//!
//! A soup is sampled once at a cutoff δ₀ and then serves every query with δ ≥ δ₀. Loops are
//! kept as compact records; the sign of each loop is a fair coin independent of everything
//! else, which is the single-soup form of the two-soup construction at half intensity.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point, QuadGrid};
use crate::loopmeasure::{CutoffConfig, LoopRecord, LoopSampler, Region, SamplerStats};
use crate::loops::MarkedLoop;
use crate::rng::stream;

/// `Δ(λ, β) = (λ/10)(cosh β − 1)`.
pub fn scaling_exponent(lambda: f64, beta: f64) -> f64 {
    lambda / 10.0 * (beta.cosh() - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub lambda: f64,
    pub beta: f64,
}

impl FieldParams {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("intensity λ = {lambda} must be positive and finite")));
        }
        if !beta.is_finite() {
            return Err(Error::Parameter(format!("β = {beta} must be finite")));
        }
        Ok(FieldParams { lambda, beta })
    }

    /// `Δ(λ, β)`.
    pub fn delta(&self) -> f64 {
        scaling_exponent(self.lambda, self.beta)
    }

    /// `Δ(λ, 2β)`; limit fields need it below 1.
    pub fn delta_double(&self) -> f64 {
        scaling_exponent(self.lambda, 2.0 * self.beta)
    }

    pub fn in_limit_regime(&self) -> bool {
        self.delta_double() < 1.0
    }

    pub fn require_limit_regime(&self) -> Result<()> {
        if self.in_limit_regime() {
            Ok(())
        } else {
            Err(Error::Regime(format!(
                "Δ(λ, 2β) = {:.4} ≥ 1 at λ = {}, β = {}",
                self.delta_double(),
                self.lambda,
                self.beta
            )))
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        FieldParams { beta, ..*self }
    }
}

/// Diameter window `[δ, R)` of a query; `r = None` leaves it open above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub delta: f64,
    pub r: Option<f64>,
}

impl Window {
    pub fn new(delta: f64, r: Option<f64>) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("cutoff δ = {delta} must be positive")));
        }
        if let Some(r) = r {
            if !(r > delta) {
                return Err(Error::Parameter(format!("window needs δ < R, got δ = {delta}, R = {r}")));
            }
        }
        Ok(Window { delta, r })
    }

    pub fn above(delta: f64) -> Self {
        Window { delta, r: None }
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.delta && self.r.is_none_or(|r| d < r)
    }
}

/// One realization of the signed soup.
#[derive(Debug, Clone)]
pub struct SignedSoup {
    pub domain: Domain,
    pub lambda: f64,
    pub cutoffs: CutoffConfig,
    pub region: Region,
    /// `(master seed, replica)` when sampled from a keyed stream.
    pub stream: Option<(u64, u64)>,
    pub loops: Vec<LoopRecord>,
    pub stats: SamplerStats,
}

/// Sample a signed soup at intensity `params.lambda`, restricted to `region`.
pub fn sample_signed_soup<R: Rng + ?Sized>(
    domain: &Domain,
    params: &FieldParams,
    cutoffs: &CutoffConfig,
    region: Region,
    rng: &mut R,
) -> Result<SignedSoup> {
    let sampler = LoopSampler::new(*domain, cutoffs.clone(), region)?;
    Ok(sample_with(&sampler, params.lambda, rng, None))
}

fn sample_with<R: Rng + ?Sized>(sampler: &LoopSampler, lambda: f64, rng: &mut R, id: Option<(u64, u64)>) -> SignedSoup {
    let mut stats = SamplerStats::default();
    let loops = sampler.sample(lambda, rng, &mut stats);
    SignedSoup {
        domain: sampler.domain,
        lambda,
        cutoffs: sampler.cutoffs.clone(),
        region: sampler.region.clone(),
        stream: id,
        loops,
        stats,
    }
}

/// `n_rep` independent soups on the keyed streams `(seed, r, tag)`, in replica order.
pub fn replica_soups(
    domain: &Domain,
    params: &FieldParams,
    cutoffs: &CutoffConfig,
    region: Region,
    n_rep: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<SignedSoup>> {
    let sampler = LoopSampler::new(*domain, cutoffs.clone(), region)?;
    Ok((0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r, tag);
            sample_with(&sampler, params.lambda, &mut rng, Some((seed, r)))
        })
        .collect())
}

impl SignedSoup {
    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn sampling_cutoff(&self) -> f64 {
        self.cutoffs.delta
    }

    /// Full path and sign of loop `k`.
    pub fn marked_loop(&self, k: usize) -> MarkedLoop {
        let rec = &self.loops[k];
        MarkedLoop { sign: rec.sign, curve: rec.materialize(self.cutoffs.n_steps) }
    }

    pub fn focus_index(&self, z: Point) -> Option<usize> {
        self.region.focus().iter().position(|p| *p == z)
    }

    fn check(&self, w: &Window) -> Result<()> {
        let a = self.sampling_cutoff();
        if w.delta < a * (1.0 - 1e-12) {
            return Err(Error::CutoffMismatch { requested: w.delta, sampled: a });
        }
        Ok(())
    }

    /// Indices of the loops with diameter in the window whose hull contains `z`.
    pub fn counted(&self, z: Point, w: &Window) -> Result<Vec<usize>> {
        self.check(w)?;
        self.domain.boundary_distance(z)?;
        if let Some(i) = self.focus_index(z) {
            return Ok((0..self.loops.len())
                .filter(|&k| w.contains(self.loops[k].diameter) && self.loops[k].covers_point(i as u32).is_some())
                .collect());
        }
        if matches!(self.region, Region::Near(_)) {
            return Err(Error::MissingEntry(format!(
                "point ({}, {}) is not a focus point of this soup; only loops near the focus were sampled",
                z.re, z.im
            )));
        }
        Ok((0..self.loops.len())
            .filter(|&k| {
                let l = &self.loops[k];
                w.contains(l.diameter) && l.bbox.contains(z) && !l.covers_points(&self.cutoffs, &[z]).is_empty()
            })
            .collect())
    }

    /// Counts of plus- and minus-signed loops in the window covering `z`.
    pub fn sign_counts(&self, z: Point, w: &Window) -> Result<(u64, u64)> {
        let ks = self.counted(z, w)?;
        let plus = ks.iter().filter(|&&k| self.loops[k].sign.value() > 0).count() as u64;
        Ok((plus, ks.len() as u64 - plus))
    }

    /// Layering numbers at every focus point at once.
    pub fn focus_numbers(&self, w: &Window) -> Result<Vec<i64>> {
        self.check(w)?;
        let mut n = vec![0i64; self.region.focus().len()];
        for l in self.loops.iter().filter(|l| w.contains(l.diameter)) {
            for c in &l.covers {
                n[c.point as usize] += l.sign.value() as i64;
            }
        }
        Ok(n)
    }
}

/// `N(z)`: signed count of loops with diameter in the window whose hull contains `z`.
pub fn layering_number(soup: &SignedSoup, z: Point, w: &Window) -> Result<i64> {
    let ks = soup.counted(z, w)?;
    Ok(ks.iter().map(|&k| soup.loops[k].sign.value() as i64).sum())
}

fn check_params(soup: &SignedSoup, params: &FieldParams) -> Result<()> {
    if params.lambda != soup.lambda {
        return Err(Error::Parameter(format!(
            "field intensity λ = {} differs from the soup's λ = {}",
            params.lambda, soup.lambda
        )));
    }
    Ok(())
}

/// `e^{βN}`, or `δ^{2Δ(λ,β)}·e^{βN}` when renormalized.
pub fn field_from_number(n: i64, delta: f64, params: &FieldParams, renormalize: bool) -> f64 {
    let v = (params.beta * n as f64).exp();
    if renormalize {
        delta.powf(2.0 * params.delta()) * v
    } else {
        v
    }
}

pub fn field_value(soup: &SignedSoup, z: Point, w: &Window, params: &FieldParams, renormalize: bool) -> Result<f64> {
    check_params(soup, params)?;
    let n = layering_number(soup, z, w)?;
    Ok(field_from_number(n, w.delta, params, renormalize))
}

/// Midpoint quadrature `Σ φ(z_k)·Ṽ^δ(z_k)·h²` of the renormalized field over the grid.
pub fn field_integral<F: Fn(Point) -> f64>(
    soup: &SignedSoup,
    phi: F,
    grid: &QuadGrid,
    delta: f64,
    params: &FieldParams,
) -> Result<f64> {
    check_params(soup, params)?;
    if grid.domain != soup.domain {
        return Err(Error::GridMismatch("quadrature grid and soup live on different domains".into()));
    }
    let w = Window::above(delta);
    let numbers: Vec<i64> = if soup.region.focus() == grid.centers.as_slice() {
        soup.focus_numbers(&w)?
    } else {
        grid.centers.iter().map(|&z| layering_number(soup, z, &w)).collect::<Result<_>>()?
    };
    let sum: f64 = grid
        .centers
        .iter()
        .zip(numbers)
        .map(|(&z, n)| phi(z) * field_from_number(n, delta, params, true))
        .sum();
    Ok(sum * grid.cell_area())
}

/// One row of the per-replica field output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub replica: u64,
    pub z_re: f64,
    pub z_im: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "N")]
    pub n: i64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "V_tilde")]
    pub v_tilde: f64,
}

impl FieldRow {
    pub fn new(replica: u64, z: Point, w: &Window, n: i64, params: &FieldParams) -> Self {
        FieldRow {
            replica,
            z_re: z.re,
            z_im: z.im,
            delta: w.delta,
            r: w.r,
            n,
            v: field_from_number(n, w.delta, params, false),
            v_tilde: field_from_number(n, w.delta, params, true),
        }
    }
}

pub fn write_field_rows(path: &Path, rows: &[FieldRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopmeasure::alpha_exact_annulus;
    use crate::stats::{chi2_gof, skellam_pmf};
    use crate::Estimate;

    fn origin() -> Point {
        Point::new(0.0, 0.0)
    }

    #[test]
    fn exponent_values() {
        let p = FieldParams::new(1.0, 1.0).unwrap();
        assert!((p.delta() - 0.0543081).abs() < 5e-8);
        assert!((5f64.powf(2.0 * p.delta()) - 1.19102).abs() < 5e-6);
        assert_eq!(FieldParams::new(3.0, 0.0).unwrap().delta(), 0.0);
        assert!(FieldParams::new(0.0, 1.0).is_err());
        assert!(!FieldParams::new(10.0, 2.0).unwrap().in_limit_regime());
    }

    #[test]
    fn tiny_intensity_gives_empty_soups() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(1e-6, 1.0).unwrap();
        let soups = replica_soups(&d, &p, &CutoffConfig::new(0.05), Region::Everywhere, 200, 3, "t").unwrap();
        assert!(soups.iter().filter(|s| s.is_empty()).count() >= 199);
        let w = Window::above(0.1);
        assert_eq!(layering_number(&soups[0], origin(), &w).unwrap(), 0);
    }

    #[test]
    fn cutoff_below_sampling_is_rejected() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(1.0, 1.0).unwrap();
        let soup = sample_signed_soup(&d, &p, &CutoffConfig::new(0.1), Region::Near(vec![origin()]), &mut stream(1, 0, "t")).unwrap();
        assert!(matches!(layering_number(&soup, origin(), &Window::above(0.05)), Err(Error::CutoffMismatch { .. })));
        assert!(Window::new(0.2, Some(0.1)).is_err());
        assert!(layering_number(&soup, Point::new(0.2, 0.0), &Window::above(0.1)).is_err());
        assert!(field_value(&soup, origin(), &Window::above(0.1), &FieldParams::new(2.0, 1.0).unwrap(), true).is_err());
    }

    #[test]
    fn zero_beta_field_is_one() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(1.0, 0.0).unwrap();
        let soups = replica_soups(&d, &p, &CutoffConfig::new(0.1), Region::Near(vec![origin()]), 20, 8, "t").unwrap();
        for s in &soups {
            assert_eq!(field_value(s, origin(), &Window::above(0.1), &p, true).unwrap(), 1.0);
        }
    }

    #[test]
    fn counted_sets_shrink_with_delta() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(3.0, 1.0).unwrap();
        let soups = replica_soups(&d, &p, &CutoffConfig::new(0.05), Region::Near(vec![origin()]), 30, 5, "t").unwrap();
        for s in &soups {
            let lo = s.counted(origin(), &Window::above(0.05)).unwrap();
            let hi = s.counted(origin(), &Window::above(0.2)).unwrap();
            assert!(hi.iter().all(|k| lo.contains(k)));
        }
    }

    #[test]
    fn everywhere_soup_agrees_with_focus_records() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(2.0, 1.0).unwrap();
        let z = Point::new(0.1, -0.2);
        let soup = sample_signed_soup(&d, &p, &CutoffConfig::new(0.1), Region::Everywhere, &mut stream(4, 0, "t")).unwrap();
        let w = Window::above(0.1);
        let direct = soup.counted(z, &w).unwrap();
        for (k, l) in soup.loops.iter().enumerate() {
            let m = soup.marked_loop(k);
            let inside = crate::loops::winding_number(&m.curve, z, 0.0).map(|n| n != 0).unwrap_or(false);
            if inside && w.contains(l.diameter) {
                assert!(direct.contains(&k), "non-zero winding but not counted");
            }
        }
    }

    #[test]
    fn skellam_law_at_small_budget() {
        let d = Domain::unit_disk();
        let p = FieldParams::new(2.0, 1.0).unwrap();
        let c = CutoffConfig::new(0.1).with_r(0.5);
        let soups = replica_soups(&d, &p, &c, Region::Near(vec![origin()]), 1500, 11, "t").unwrap();
        let w = Window::new(0.1, Some(0.5)).unwrap();
        let ns: Vec<i64> = soups.iter().map(|s| layering_number(s, origin(), &w).unwrap()).collect();
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let mean = Estimate::from_samples(&xs);
        let var = Estimate::variance_of(&xs);
        let target = 2.0 * alpha_exact_annulus(0.1, 0.5).unwrap();
        assert!(mean.within(0.0, 3.0), "{mean:?}");
        assert!(var.within(target, 3.0), "{var:?} vs {target}");
        let pmf = skellam_pmf(target / 2.0, target / 2.0, 8);
        assert!(chi2_gof(&ns, -8, &pmf).p_value > 0.001);
    }

    #[test]
    fn field_integral_is_linear_and_trivial_at_zero_beta() {
        let d = Domain::unit_disk();
        let grid = QuadGrid::uniform(&d, 8).unwrap();
        let p = FieldParams::new(1.0, 0.0).unwrap();
        let soup =
            sample_signed_soup(&d, &p, &CutoffConfig::new(0.1), Region::Near(grid.centers.clone()), &mut stream(2, 0, "t")).unwrap();
        let one = field_integral(&soup, |_| 1.0, &grid, 0.1, &p).unwrap();
        assert!((one - grid.integrate(|_| 1.0)).abs() < 1e-12);
        let q = p.with_beta(0.7);
        let f1 = field_integral(&soup, |z| z.re, &grid, 0.1, &q).unwrap();
        let f2 = field_integral(&soup, |z| 1.0 + z.im, &grid, 0.1, &q).unwrap();
        let f12 = field_integral(&soup, |z| z.re + 1.0 + z.im, &grid, 0.1, &q).unwrap();
        assert!((f1 + f2 - f12).abs() < 1e-12 * f12.abs().max(1.0));
    }

    #[test]
    fn replica_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = FieldParams::new(1.0, 0.5).unwrap();
        let w = Window::new(0.1, Some(0.5)).unwrap();
        let rows = vec![FieldRow::new(0, origin(), &w, 2, &p), FieldRow::new(1, origin(), &Window::above(0.1), -1, &p)];
        let path = dir.path().join("rows.csv");
        write_field_rows(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("replica,z_re,z_im,delta,R,N,V,V_tilde"));
        let back: Vec<FieldRow> = csv::Reader::from_path(&path).unwrap().deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, rows);
    }
}
