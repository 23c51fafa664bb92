//! Loop-measure masses: exact annulus values, Monte Carlo estimates and the persisted table.

pub mod sampler;
pub mod table;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::geometry::{Domain, Point};
use crate::loops::{balanced_cells, MAX_STEPS};
use crate::rng::stream;
pub use sampler::{Cover, LoopRecord, LoopSampler, Region, SamplerStats};
pub use table::{AlphaTable, TableSpec};

/// Diameter window and discretisation of a sampling run.
///
/// Loops are generated with diameter in `[delta, R)` (R defaults to the domain diameter, above
/// which no loop fits). The only truncation is the cap on the shape weight, whose bias is
/// bounded by [`CutoffConfig::bias_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub delta: f64,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "default_eps_mass")]
    pub eps_mass: f64,
    #[serde(default = "default_shape_cap")]
    pub shape_cap: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    /// Raster cells across a loop diameter; `None` balances against `n_steps`.
    #[serde(default)]
    pub diameter_cells: Option<f64>,
}

fn default_eps_mass() -> f64 {
    1e-4
}
fn default_shape_cap() -> f64 {
    25.0
}
fn default_n_steps() -> usize {
    MAX_STEPS
}

impl CutoffConfig {
    pub fn new(delta: f64) -> Self {
        CutoffConfig {
            delta,
            r: None,
            eps_mass: default_eps_mass(),
            shape_cap: default_shape_cap(),
            n_steps: default_n_steps(),
            diameter_cells: None,
        }
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn cells(&self) -> f64 {
        self.diameter_cells.unwrap_or_else(|| balanced_cells(self.n_steps))
    }

    /// Bound on the mass (per covered point) lost to the shape-weight cap: a loop of the window
    /// covering z has hull area at most `πd²/4`, so the deficit is at most
    /// `¼·E[D₁²·1{D₁² > cap}]·ln(b/a)`.
    pub fn bias_bound(&self, domain: &Domain) -> f64 {
        let b = self.r.unwrap_or(domain.diameter()).min(domain.diameter());
        if b <= self.delta {
            return 0.0;
        }
        0.25 * sampler::shape_cap_bias(self.shape_cap) * (b / self.delta).ln()
    }
}

/// Intensity, replica count and master seed for Monte Carlo mass estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub lambda: f64,
    pub n_rep: usize,
    pub seed: u64,
}

/// `(1/5)·ln(R/δ)`, the mass of loops covering z with diameter in `[δ, R)` when `B(z, R) ⊂ D`.
pub fn alpha_exact_annulus(delta: f64, r: f64) -> Result<f64> {
    if !(delta > 0.0) || delta > r {
        return Err(Error::Parameter(format!("annulus needs 0 < δ ≤ R, got δ = {delta}, R = {r}")));
    }
    Ok(0.2 * (r / delta).ln())
}

/// `(1/5)·ln(d(D)/δ)`, an upper bound on `α_δ(z)` over the domain (0 once δ ≥ d(D)).
pub fn alpha_upper_bound(domain: &Domain, delta: f64) -> f64 {
    let d = domain.diameter();
    if delta >= d {
        0.0
    } else {
        0.2 * (d / delta).ln()
    }
}

/// Mass estimate from per-replica counts: mean count over λ, with the larger of the Poisson and
/// the empirical replica standard error.
pub fn count_estimate(counts: &[u64], lambda: f64) -> Estimate {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    let scale = lambda * n as f64;
    let value = total as f64 / scale;
    let poisson = (total as f64).sqrt() / scale;
    let empirical = if n > 1 {
        let xs: Vec<f64> = counts.iter().map(|&c| c as f64 / lambda).collect();
        Estimate::from_samples(&xs).stderr
    } else {
        0.0
    };
    Estimate::new(value, poisson.max(empirical), n as u64)
}

/// Run `n_rep` replicas in parallel and reduce each to a value; output order is replica order.
pub fn replicate<T, F>(sampler: &LoopSampler, budget: &Budget, tag: &str, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Vec<LoopRecord>) -> T + Sync,
{
    (0..budget.n_rep as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(budget.seed, rep, tag);
            let mut stats = SamplerStats::default();
            let loops = sampler.sample(budget.lambda, &mut rng, &mut stats);
            f(rep, loops)
        })
        .collect()
}

/// `α_{δ,R}(z)`; with `r = None` the window is `[δ, d(D))`, i.e. `α_δ(z)`.
pub fn estimate_alpha_window(
    domain: &Domain,
    z: Point,
    cutoffs: &CutoffConfig,
    budget: &Budget,
) -> Result<Estimate> {
    domain.boundary_distance(z)?;
    if cutoffs.delta >= domain.diameter() {
        return Ok(Estimate::new(0.0, 0.0, budget.n_rep as u64));
    }
    let sampler = LoopSampler::new(*domain, cutoffs.clone(), Region::Near(vec![z]))?;
    let counts = replicate(&sampler, budget, "alpha", |_, loops| {
        loops.iter().filter(|l| !l.covers.is_empty()).count() as u64
    });
    Ok(count_estimate(&counts, budget.lambda))
}

/// `α_δ(z)`: mean number of covering loops with diameter ≥ δ per unit intensity.
pub fn estimate_alpha(domain: &Domain, z: Point, delta: f64, budget: &Budget) -> Result<Estimate> {
    estimate_alpha_window(domain, z, &CutoffConfig::new(delta), budget)
}

/// `α(z, w)`: mass of loops covering both points (their diameter is at least `|z − w|`).
pub fn estimate_alpha_pair(domain: &Domain, z: Point, w: Point, cutoffs: &CutoffConfig, budget: &Budget) -> Result<Estimate> {
    let sep = (z - w).norm();
    if sep == 0.0 {
        return Err(Error::Diagonal);
    }
    domain.boundary_distance(z)?;
    domain.boundary_distance(w)?;
    if sep >= domain.diameter() {
        return Ok(Estimate::new(0.0, 0.0, budget.n_rep as u64));
    }
    let mut c = cutoffs.clone();
    c.delta = sep;
    c.r = None;
    let sampler = LoopSampler::new(*domain, c, Region::Near(vec![z, w]))?;
    let counts = replicate(&sampler, budget, "alpha-pair", |_, loops| {
        loops.iter().filter(|l| l.covers.len() == 2).count() as u64
    });
    Ok(count_estimate(&counts, budget.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_values() {
        assert!((alpha_exact_annulus(0.1, 0.5).unwrap() - 0.32189).abs() < 5e-6);
        assert!((alpha_exact_annulus(0.25, 0.5).unwrap() - 0.13863).abs() < 5e-6);
        assert_eq!(alpha_exact_annulus(0.5, 0.5).unwrap(), 0.0);
        assert!(alpha_exact_annulus(0.6, 0.5).is_err());
    }

    #[test]
    fn upper_bound_values() {
        let d = Domain::unit_disk();
        assert!((alpha_upper_bound(&d, 0.2) - 0.46052).abs() < 5e-6);
        assert_eq!(alpha_upper_bound(&d, 2.0), 0.0);
    }

    #[test]
    fn count_estimates() {
        let e = count_estimate(&[3, 5, 4, 4], 2.0);
        assert_eq!(e.value, 2.0);
        assert!(e.stderr >= (16f64).sqrt() / 8.0);
    }

    #[test]
    fn inadmissible_cap_is_rejected() {
        let mut c = CutoffConfig::new(0.01);
        c.shape_cap = 2.0;
        assert!(matches!(LoopSampler::new(Domain::unit_disk(), c, Region::Everywhere), Err(Error::Config(_))));
    }

    #[test]
    fn diameter_beyond_domain_gives_zero() {
        let b = Budget { lambda: 1.0, n_rep: 2, seed: 1 };
        let e = estimate_alpha(&Domain::unit_disk(), Point::new(0.0, 0.0), 2.0, &b).unwrap();
        assert_eq!(e.value, 0.0);
    }
}
