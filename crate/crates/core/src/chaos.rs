//! Wiener–Itô chaos kernels of the Poisson and Gaussian layering fields.
//!
//! Every kernel has product form `a(z)·Π c(ε_i)1{z ∈ hull_i}` integrated over z, so the
//! q-fold inner product of two kernels reduces to a double quadrature
//! `(1/q!²)∬ a₁(z)a₂(t)·(s·α(z,t))^q` with the pair coefficient `s = ½Σ_ε c(ε)c′(ε)`.

use serde::{Deserialize, Serialize};

use crate::correlators::one_point_limit;
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::gaussfield::{glf_one_point, GaussParams};
use crate::geometry::{Point, QuadGrid};
use crate::loopmeasure::AlphaTable;
use crate::soup::{field_integral, scaling_exponent, FieldParams, SignedSoup};

/// Iterated difference `D_{x₁}…D_{x_q} Y(η)` of `Y(η) = exp(β·Σ_{a∈η} h(a))`, evaluated from
/// the definition `D_x F(η) = F(η + δ_x) − F(η)`.
pub fn difference_operator<T: Clone, H: Fn(&T) -> f64>(h: &H, beta: f64, xs: &[T], eta: &[T]) -> f64 {
    match xs.split_first() {
        None => (beta * eta.iter().map(h).sum::<f64>()).exp(),
        Some((x, rest)) => {
            let mut plus = eta.to_vec();
            plus.push(x.clone());
            difference_operator(h, beta, rest, &plus) - difference_operator(h, beta, rest, eta)
        }
    }
}

/// Closed form `Y(η)·Π(e^{βh(x_i)} − 1)` of the iterated difference.
pub fn difference_product<T, H: Fn(&T) -> f64>(h: &H, beta: f64, xs: &[T], eta: &[T]) -> f64 {
    let y = (beta * eta.iter().map(h).sum::<f64>()).exp();
    xs.iter().fold(y, |acc, x| acc * (beta * h(x)).exp_m1())
}

/// Kernel family; the Poisson kernels carry the `λ^{q/2}` scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Flavor {
    Poisson { lambda: f64, beta: f64 },
    Gaussian { xi: f64 },
}

impl Flavor {
    /// Sign coefficient `c(ε)`.
    pub fn coefficient(&self, eps: f64) -> f64 {
        match *self {
            Flavor::Poisson { lambda, beta } => lambda.sqrt() * (beta * eps).exp_m1(),
            Flavor::Gaussian { xi } => xi * eps,
        }
    }
}

/// `s = ½Σ_{ε=±1} c(ε)c′(ε)`.
pub fn pair_coefficient(a: &Flavor, b: &Flavor) -> f64 {
    0.5 * (a.coefficient(1.0) * b.coefficient(1.0) + a.coefficient(-1.0) * b.coefficient(-1.0))
}

/// `s_VV = λ(cosh 2β − 2cosh β + 1)`.
pub fn s_vv(lambda: f64, beta: f64) -> f64 {
    lambda * ((2.0 * beta).cosh() - 2.0 * beta.cosh() + 1.0)
}

/// `s_VW = √λ·ξ·sinh β`.
pub fn s_vw(lambda: f64, beta: f64, xi: f64) -> f64 {
    lambda.sqrt() * xi * beta.sinh()
}

pub fn s_ww(xi: f64) -> f64 {
    xi * xi
}

/// Order-q kernel with its weight `a(z)` tabulated on the cells of a quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub flavor: Flavor,
    pub weights: Vec<f64>,
    pub q: u32,
}

fn grid_indices(grid: &QuadGrid, table: &AlphaTable) -> Result<Vec<usize>> {
    if grid.domain != *table.domain() {
        return Err(Error::GridMismatch("quadrature grid and table live on different domains".into()));
    }
    grid.centers.iter().map(|&z| table.require_index(z)).collect()
}

impl KernelSpec {
    fn check_q(q: u32) -> Result<()> {
        if q == 0 {
            return Err(Error::Parameter("kernel order q must be at least 1".into()));
        }
        Ok(())
    }

    /// `a(z) = φ(z)·⟨V_{λ,β}(z)⟩`.
    pub fn poisson<F: Fn(Point) -> f64>(
        params: &FieldParams,
        phi: F,
        grid: &QuadGrid,
        table: &AlphaTable,
        q: u32,
    ) -> Result<Self> {
        Self::check_q(q)?;
        grid_indices(grid, table)?;
        let weights = grid
            .centers
            .iter()
            .map(|&z| Ok(phi(z) * one_point_limit(&grid.domain, z, params, table)?.value))
            .collect::<Result<_>>()?;
        Ok(KernelSpec { flavor: Flavor::Poisson { lambda: params.lambda, beta: params.beta }, weights, q })
    }

    /// `a(z) = φ(z)·⟨W_ξ(z)⟩`.
    pub fn gaussian<F: Fn(Point) -> f64>(
        gauss: &GaussParams,
        phi: F,
        grid: &QuadGrid,
        table: &AlphaTable,
        q: u32,
    ) -> Result<Self> {
        Self::check_q(q)?;
        grid_indices(grid, table)?;
        let weights = grid
            .centers
            .iter()
            .map(|&z| Ok(phi(z) * glf_one_point(&grid.domain, z, gauss, table)?.value))
            .collect::<Result<_>>()?;
        Ok(KernelSpec { flavor: Flavor::Gaussian { xi: gauss.xi }, weights, q })
    }

    /// Kernel of `Ṽ^δ(φ)`: `a(z) = φ(z)·δ^{2Δ}·e^{λ(cosh β − 1)α_δ(z)} = φ(z)·E[Ṽ^δ(z)]`.
    pub fn poisson_cutoff<F: Fn(Point) -> f64>(
        params: &FieldParams,
        delta: f64,
        phi: F,
        grid: &QuadGrid,
        table: &AlphaTable,
        q: u32,
    ) -> Result<Self> {
        Self::check_q(q)?;
        let idx = grid_indices(grid, table)?;
        let weights = cutoff_weights(params, delta, &phi, grid, table, &idx)?;
        Ok(KernelSpec { flavor: Flavor::Poisson { lambda: params.lambda, beta: params.beta }, weights, q })
    }

    pub fn with_order(&self, q: u32) -> Self {
        KernelSpec { q, ..self.clone() }
    }
}

fn cutoff_weights<F: Fn(Point) -> f64>(
    params: &FieldParams,
    delta: f64,
    phi: &F,
    grid: &QuadGrid,
    table: &AlphaTable,
    idx: &[usize],
) -> Result<Vec<f64>> {
    let pre = delta.powf(2.0 * params.delta());
    let rate = 10.0 * params.delta();
    grid.centers
        .iter()
        .zip(idx)
        .map(|(&z, &i)| Ok(phi(z) * pre * (rate * table.alpha(i, delta)?.value).exp()))
        .collect()
}

/// Which pair mass the quadrature integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairLaw {
    /// `α(z,t)`: all loops covering both points; log-singular on the diagonal.
    Limit,
    /// `α_δ(z,t)`: loops of diameter at least δ covering both; bounded.
    Cutoff(f64),
}

/// A double quadrature value with the part contributed by the diagonal cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerProduct {
    pub value: f64,
    pub diagonal: f64,
}

/// Gauss–Legendre nodes and weights on [0, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            (0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Cell-average nodes `(r, weight)` for a square cell of side `h` centred on the singularity,
/// in polar coordinates over the eight symmetric triangles; `r = R(θ)u²` tames the origin.
fn cell_nodes(h: f64) -> Vec<(f64, f64)> {
    let (gt, gu) = (gauss_legendre(24), gauss_legendre(64));
    let span = std::f64::consts::FRAC_PI_4;
    let mut out = Vec::with_capacity(gt.len() * gu.len());
    for &(xt, wt) in &gt {
        let rmax = 0.5 * h / (span * xt).cos();
        for &(u, wu) in &gu {
            // (8/h²)·∫∫ f(r) r dr dθ with r = R u², r dr = 2R²u³ du.
            out.push((rmax * u * u, 8.0 / (h * h) * 2.0 * rmax * rmax * u.powi(3) * wu * wt * span));
        }
    }
    out
}

/// Average of `f(|x|)` over the square `[−h/2, h/2]²`, for `f` with at most an integrable
/// singularity at the origin.
pub fn cell_average<F: Fn(f64) -> f64>(h: f64, f: F) -> f64 {
    cell_nodes(h).into_iter().map(|(r, w)| w * f(r)).sum()
}

/// Pair masses between the cells of a quadrature grid, ready for `∬ a₁a₂α^q`.
#[derive(Debug, Clone)]
pub struct PairQuadrature {
    pub law: PairLaw,
    pub h: f64,
    n: usize,
    alpha: Vec<f64>,
    /// Offset g of the log law `α ≈ (1/5)ln(1/|z−t|) + g` per cell (limit law only).
    pub offsets: Vec<f64>,
    nodes: Vec<(f64, f64)>,
}

impl PairQuadrature {
    pub fn new(table: &AlphaTable, grid: &QuadGrid, law: PairLaw) -> Result<Self> {
        let idx = grid_indices(grid, table)?;
        let h = grid.h;
        let cut = match law {
            PairLaw::Limit => {
                // Neighbouring cells are a distance h apart; their masses need every loop
                // of diameter ≥ h.
                if table.sampling_cutoff() > h * (1.0 + 1e-12) {
                    return Err(Error::CutoffMismatch { requested: h, sampled: table.sampling_cutoff() });
                }
                table.sampling_cutoff()
            }
            PairLaw::Cutoff(d) => d,
        };
        let (full, _) = table.pair_matrix(cut)?;
        let m = table.points().len();
        let n = idx.len();
        let mut alpha = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                alpha[a * n + b] = full[idx[a] * m + idx[b]];
            }
        }
        let mut offsets = Vec::new();
        if law == PairLaw::Limit {
            let base = 0.2 * (1.0 / h).ln();
            for a in 0..n {
                let nb: Vec<f64> = (0..n)
                    .filter(|&b| ((grid.centers[a] - grid.centers[b]).norm() - h).abs() < 1e-9 * h)
                    .map(|b| alpha[a * n + b] - base)
                    .collect();
                if nb.is_empty() {
                    return Err(Error::GridMismatch(format!("cell {a} has no neighbour to fix the diagonal log law")));
                }
                offsets.push(nb.iter().sum::<f64>() / nb.len() as f64);
            }
        }
        let nodes = if law == PairLaw::Limit { cell_nodes(h) } else { Vec::new() };
        Ok(PairQuadrature { law, h, n, alpha, offsets, nodes })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn alpha(&self, a: usize, b: usize) -> f64 {
        self.alpha[a * self.n + b]
    }

    /// Diagonal cell value of `α^q` for cell `a`.
    fn diagonal_power(&self, a: usize, q: u32) -> f64 {
        match self.law {
            PairLaw::Cutoff(_) => self.alpha(a, a).powi(q as i32),
            PairLaw::Limit => {
                let g = self.offsets[a];
                self.nodes.iter().map(|&(r, w)| w * (0.2 * (1.0 / r).ln() + g).powi(q as i32)).sum()
            }
        }
    }

    /// `∬ a₁(z)a₂(t)α(z,t)^q dz dt`, symmetric in `(a₁, a₂)` to the last bit.
    pub fn moment(&self, q: u32, a1: &[f64], a2: &[f64]) -> Result<InnerProduct> {
        if a1.len() != self.n || a2.len() != self.n {
            return Err(Error::GridMismatch(format!("weights of length {}/{} on {} cells", a1.len(), a2.len(), self.n)));
        }
        let qi = q as i32;
        let mut off = 0.0;
        for a in 0..self.n {
            for b in a + 1..self.n {
                let v = self.alpha(a, b);
                if v != 0.0 {
                    off += v.powi(qi) * (a1[a] * a2[b] + a1[b] * a2[a]);
                }
            }
        }
        let diag: f64 = (0..self.n).map(|a| a1[a] * a2[a] * self.diagonal_power(a, q)).sum();
        let h4 = self.h.powi(4);
        Ok(InnerProduct { value: (off + diag) * h4, diagonal: diag * h4 })
    }
}

fn factorial(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

/// `⟨k₁, k₂⟩ = (1/q!²)∬ a₁(z)a₂(t)·(s₁₂·α(z,t))^q`.
pub fn kernel_inner_product(k1: &KernelSpec, k2: &KernelSpec, quad: &PairQuadrature) -> Result<InnerProduct> {
    if k1.q != k2.q {
        return Err(Error::Parameter(format!("kernel orders differ: {} vs {}", k1.q, k2.q)));
    }
    let q = k1.q;
    let c = pair_coefficient(&k1.flavor, &k2.flavor).powi(q as i32) / factorial(q).powi(2);
    let m = quad.moment(q, &k1.weights, &k2.weights)?;
    Ok(InnerProduct { value: c * m.value, diagonal: c * m.diagonal })
}

/// `q!·‖k‖²`.
pub fn kernel_norm(k: &KernelSpec, quad: &PairQuadrature) -> Result<f64> {
    Ok(factorial(k.q) * kernel_inner_product(k, k, quad)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub q: u32,
    pub lambda: f64,
    pub beta: f64,
    pub xi: f64,
    /// `q!·‖w_q‖²`.
    pub w_norm: f64,
    /// `q!·‖λ^{q/2}f_q‖²`.
    pub f_norm: f64,
    /// `q!·‖λ^{q/2}f_q − w_q‖²`.
    pub gap: f64,
}

impl GapReport {
    pub fn relative(&self) -> f64 {
        self.gap / self.w_norm
    }
}

/// `q!·‖λ^{q/2}f_q − w_q‖²`, expanded bilinearly.
pub fn kernel_gap(v: &KernelSpec, w: &KernelSpec, quad: &PairQuadrature) -> Result<GapReport> {
    let (Flavor::Poisson { lambda, beta }, Flavor::Gaussian { xi }) = (v.flavor, w.flavor) else {
        return Err(Error::Parameter("kernel_gap takes a Poisson and a Gaussian kernel".into()));
    };
    let params = FieldParams::new(lambda, beta)?;
    params.require_limit_regime()?;
    let gauss = GaussParams::new(xi)?;
    if !gauss.square_integrable() {
        return Err(Error::Regime(format!("ξ = {xi} is not below √2")));
    }
    let qf = factorial(v.q);
    let vv = kernel_inner_product(v, v, quad)?.value;
    let vw = kernel_inner_product(v, w, quad)?.value;
    let ww = kernel_inner_product(w, w, quad)?.value;
    Ok(GapReport { q: v.q, lambda, beta, xi, w_norm: qf * ww, f_norm: qf * vv, gap: qf * (vv - 2.0 * vw + ww) })
}

/// Convenience: the gap at order q for `φ` on the grid, building both kernels.
pub fn kernel_gap_for<F: Fn(Point) -> f64 + Copy>(
    q: u32,
    params: &FieldParams,
    xi: f64,
    phi: F,
    quad: &PairQuadrature,
    grid: &QuadGrid,
    table: &AlphaTable,
) -> Result<GapReport> {
    let v = KernelSpec::poisson(params, phi, grid, table, q)?;
    let w = KernelSpec::gaussian(&GaussParams::new(xi)?, phi, grid, table, q)?;
    kernel_gap(&v, &w, quad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub n: u32,
    /// `(q, q!·‖λ^{q/2}f_q‖²)` for `q > n` until the terms become negligible.
    pub terms: Vec<(u32, f64)>,
    pub sum: f64,
}

const Q_CAP: u32 = 400;

/// `Σ_{q>N} q!·‖λ^{q/2}f_q‖²`, stopping once a term falls below 1e-12 of the running sum.
pub fn tail_norm(n: u32, v: &KernelSpec, quad: &PairQuadrature) -> Result<TailReport> {
    let Flavor::Poisson { lambda, beta } = v.flavor else {
        return Err(Error::Parameter("tail_norm takes a Poisson kernel".into()));
    };
    let eta = lambda * beta.abs().exp_m1().powi(2);
    if eta >= 5.0 {
        return Err(Error::Regime(format!("λ(e^|β| − 1)² = {eta:.4} is not below 5")));
    }
    let s = s_vv(lambda, beta);
    let mut terms = Vec::new();
    let mut sum = 0.0;
    let mut coef = s.powi(n as i32) / factorial(n);
    for q in n + 1..=Q_CAP {
        coef *= s / q as f64;
        let t = coef * quad.moment(q, &v.weights, &v.weights)?.value;
        sum += t;
        terms.push((q, t));
        if t <= 1e-12 * sum {
            return Ok(TailReport { n, terms, sum });
        }
    }
    Err(Error::Regime(format!("tail series did not settle within {Q_CAP} terms")))
}

/// Right side of `Σ_q q!‖w_q‖² ≤ d(D)^{8Δ_ξ}‖φ‖²_∞ ∬|z−t|^{−4Δ_ξ}` on the grid.
pub fn series_bound(gauss: &GaussParams, phi_sup: f64, grid: &QuadGrid) -> f64 {
    let p = 4.0 * gauss.delta();
    let c = &grid.centers;
    let mut off = 0.0;
    for a in 0..c.len() {
        for b in a + 1..c.len() {
            off += 2.0 * (c[a] - c[b]).norm().powf(-p);
        }
    }
    let diag = c.len() as f64 * cell_average(grid.h, |r| r.powf(-p));
    grid.domain.diameter().powf(2.0 * p) * phi_sup * phi_sup * (off + diag) * grid.h.powi(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub lambda: f64,
    pub beta: f64,
    pub delta: f64,
    /// Replica variance of `Ṽ^δ(φ)`.
    pub variance: Estimate,
    /// `S_Q = Σ_{q≤Q} q!·‖f^δ_q‖²` for `Q = 1..=q_max`.
    pub partial_sums: Vec<f64>,
    /// Batch-means standard error of `S_{q_max}` over table replicas.
    pub norm_stderr: f64,
    /// `Var − S_Q` for every Q.
    pub gaps: Vec<f64>,
    pub combined_error: f64,
    /// Empirical first chaos `I₁(f^δ₁)`: mean (zero in law) and variance (`‖f^δ₁‖²`).
    pub i1_mean: Estimate,
    pub i1_variance: Estimate,
}

impl IsometryReport {
    pub fn final_gap(&self) -> f64 {
        *self.gaps.last().expect("q_max ≥ 1")
    }

    pub fn holds(&self, k: f64) -> bool {
        self.final_gap().abs() <= k * self.combined_error
    }
}

fn partial_sums(s: f64, q_max: u32, quad: &PairQuadrature, a: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(q_max as usize);
    let (mut acc, mut coef) = (0.0, 1.0);
    for q in 1..=q_max {
        coef *= s / q as f64;
        acc += coef * quad.moment(q, a, a)?.value;
        out.push(acc);
    }
    Ok(out)
}

/// Compare the replica variance of `Ṽ^δ(φ)` with the partial chaos sums from the table.
/// The soups must be sampled near the grid centres; the table, from independent replicas,
/// is split into `batches` for the error of the norm side.
#[allow(clippy::too_many_arguments)]
pub fn isometry_check<F: Fn(Point) -> f64 + Copy>(
    soups: &[SignedSoup],
    phi: F,
    grid: &QuadGrid,
    delta: f64,
    params: &FieldParams,
    q_max: u32,
    table: &AlphaTable,
    batches: usize,
) -> Result<IsometryReport> {
    if q_max == 0 {
        return Err(Error::Parameter("q_max must be at least 1".into()));
    }
    if soups.len() < 2 {
        return Err(Error::Parameter("the variance needs at least two replicas".into()));
    }
    let idx = grid_indices(grid, table)?;
    let a = cutoff_weights(params, delta, &phi, grid, table, &idx)?;
    let quad = PairQuadrature::new(table, grid, PairLaw::Cutoff(delta))?;
    let s = s_vv(params.lambda, params.beta);
    let sums = partial_sums(s, q_max, &quad, &a)?;
    let batch_vals = table
        .batches(batches)?
        .iter()
        .map(|t| {
            let a = cutoff_weights(params, delta, &phi, grid, t, &idx)?;
            let quad = PairQuadrature::new(t, grid, PairLaw::Cutoff(delta))?;
            Ok(*partial_sums(s, q_max, &quad, &a)?.last().expect("q_max ≥ 1"))
        })
        .collect::<Result<Vec<f64>>>()?;
    let norm_stderr = Estimate::from_samples(&batch_vals).stderr;

    let mut values = Vec::with_capacity(soups.len());
    let mut i1 = Vec::with_capacity(soups.len());
    let h2 = grid.cell_area();
    let compensator = params.lambda
        * (params.beta.cosh() - 1.0)
        * idx.iter().zip(&a).map(|(&i, w)| Ok(w * table.alpha(i, delta)?.value)).sum::<Result<f64>>()?
        * h2;
    for soup in soups {
        if soup.region.focus() != grid.centers.as_slice() {
            return Err(Error::GridMismatch("isometry soups must be sampled near the grid centres".into()));
        }
        values.push(field_integral(soup, phi, grid, delta, params)?);
        let atoms: f64 = soup
            .loops
            .iter()
            .filter(|l| l.diameter >= delta)
            .map(|l| (params.beta * l.sign.value() as f64).exp_m1() * l.covers.iter().map(|c| a[c.point as usize]).sum::<f64>())
            .sum();
        i1.push(atoms * h2 - compensator);
    }
    let variance = Estimate::variance_of(&values);
    let gaps = sums.iter().map(|s| variance.value - s).collect();
    Ok(IsometryReport {
        lambda: params.lambda,
        beta: params.beta,
        delta,
        variance,
        partial_sums: sums,
        norm_stderr,
        gaps,
        combined_error: variance.stderr.hypot(norm_stderr),
        i1_mean: Estimate::from_samples(&i1),
        i1_variance: Estimate::variance_of(&i1),
    })
}

/// Mean-convergence driver: `10Δ(λ, ξ/√λ) = λ(cosh(ξ/√λ) − 1)`, tending to ξ²/2.
pub fn mean_rate(lambda: f64, xi: f64) -> f64 {
    10.0 * scaling_exponent(lambda, xi / lambda.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::loopmeasure::{Budget, CutoffConfig, TableSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    type Atom = (u8, f64);

    fn h(x: &Atom) -> f64 {
        x.1
    }

    #[test]
    fn difference_examples() {
        let b = 0.7;
        let x1: Atom = (0, 1.0);
        let x2: Atom = (1, -1.0);
        assert!((difference_operator(&h, b, &[x1], &[]) - b.exp_m1()).abs() < 1e-15);
        let two = difference_operator(&h, b, &[x1, x2], &[]);
        assert!((two - b.exp_m1() * (-b).exp_m1()).abs() < 1e-15);
    }

    #[test]
    fn difference_recursion_matches_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let eta: Vec<Atom> = (0..5).map(|k| (k, rng.gen_range(-1.0..1.0))).collect();
            let xs: Vec<Atom> = (0..3).map(|k| (10 + k, rng.gen_range(-1.0..1.0))).collect();
            let b = rng.gen_range(-1.0..1.0);
            for q in 0..=3 {
                let r = difference_operator(&h, b, &xs[..q], &eta);
                let p = difference_product(&h, b, &xs[..q], &eta);
                assert!((r - p).abs() < 1e-12, "q = {q}");
            }
        }
    }

    #[test]
    fn pair_coefficients() {
        let (l, b, xi) = (100.0, 0.1, 1.0);
        let v = Flavor::Poisson { lambda: l, beta: b };
        let w = Flavor::Gaussian { xi };
        assert!((pair_coefficient(&v, &v) - s_vv(l, b)).abs() < 1e-13);
        assert!((pair_coefficient(&v, &w) - s_vw(l, b, xi)).abs() < 1e-13);
        assert_eq!(pair_coefficient(&w, &w), s_ww(xi));
        assert!((s_vv(l, b) - 1.00584).abs() < 1e-5);
        assert!((s_vw(l, b, xi) - 1.001668).abs() < 1e-6);
        // Taylor: s_VV − 2s_VW + s_WW = ξ⁴/(4λ) + O(λ⁻²).
        let comb = |l: f64| s_vv(l, 1.0 / l.sqrt()) - 2.0 * s_vw(l, 1.0 / l.sqrt(), 1.0) + 1.0;
        assert!((comb(100.0) - 0.002504).abs() / 0.002504 < 2e-3);
        assert!((comb(1e4) - 2.5e-5).abs() / 2.5e-5 < 1e-3);
        let big: f64 = 1e8;
        let bb = 1.0 / big.sqrt();
        assert!((s_vv(big, bb) - 1.0).abs() < 1e-7);
        assert!((s_vw(big, bb, 1.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn cell_average_of_log_matches_fine_grid() {
        let h = 0.2;
        let direct = {
            let m = 2000;
            let d = h / m as f64;
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let (x, y) = ((i as f64 + 0.5) * d - h / 2.0, (j as f64 + 0.5) * d - h / 2.0);
                    s += (1.0 / x.hypot(y)).ln();
                }
            }
            s / (m * m) as f64
        };
        let rule = cell_average(h, |r| (1.0 / r).ln());
        assert!((rule - direct).abs() < 1e-6, "{rule} vs {direct}");
        assert!((cell_average(h, |_| 1.0) - 1.0).abs() < 1e-12);
    }

    fn setup() -> (QuadGrid, AlphaTable) {
        let d = Domain::unit_disk();
        let grid = QuadGrid::uniform(&d, 6).unwrap();
        let table = AlphaTable::build(TableSpec {
            domain: d,
            points: grid.centers.clone(),
            delta_list: vec![0.3],
            cutoffs: CutoffConfig::new(0.15).with_steps(1024),
            budget: Budget { lambda: 5.0, n_rep: 4, seed: 5 },
        })
        .unwrap();
        (grid, table)
    }

    #[test]
    fn inner_products_on_small_grid() {
        let (grid, table) = setup();
        let quad = PairQuadrature::new(&table, &grid, PairLaw::Limit).unwrap();
        let p = FieldParams::new(100.0, 0.1).unwrap();
        let one = |_: Point| 1.0;
        for q in 1..=3 {
            let v = KernelSpec::poisson(&p, one, &grid, &table, q).unwrap();
            let w = KernelSpec::gaussian(&GaussParams::new(1.0).unwrap(), one, &grid, &table, q).unwrap();
            assert_eq!(kernel_inner_product(&v, &w, &quad).unwrap(), kernel_inner_product(&w, &v, &quad).unwrap());
            let g = kernel_gap(&v, &w, &quad).unwrap();
            assert!(g.gap >= -1e-10 * g.w_norm, "{g:?}");
            assert!(g.relative() < 0.02);
            let zero = KernelSpec::poisson(&p.with_beta(0.0), one, &grid, &table, q).unwrap();
            assert_eq!(kernel_inner_product(&zero, &zero, &quad).unwrap().value, 0.0);
        }
        let err = KernelSpec::poisson(&p, one, &grid, &table, 0);
        assert!(err.is_err());
        let tail = tail_norm(1, &KernelSpec::poisson(&p, one, &grid, &table, 1).unwrap(), &quad).unwrap();
        for w in tail.terms.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        let hot = KernelSpec::poisson(&FieldParams::new(100.0, 0.3).unwrap(), one, &grid, &table, 1).unwrap();
        assert!(matches!(tail_norm(1, &hot, &quad), Err(Error::Regime(_))));
    }

    #[test]
    fn batches_partition_the_table() {
        let (_, table) = setup();
        let parts = table.batches(2).unwrap();
        let (full, _) = table.pair_matrix(0.3).unwrap();
        let (a, _) = parts[0].pair_matrix(0.3).unwrap();
        let (b, _) = parts[1].pair_matrix(0.3).unwrap();
        for k in 0..full.len() {
            assert!((full[k] - 0.5 * (a[k] + b[k])).abs() < 1e-12);
        }
        assert!(table.batches(5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn difference_identity(vals in proptest::collection::vec(-2.0f64..2.0, 1..7), xs in proptest::collection::vec(-2.0f64..2.0, 0..4), b in -1.0f64..1.0) {
            let eta: Vec<Atom> = vals.iter().map(|&v| (0, v)).collect();
            let xs: Vec<Atom> = xs.iter().map(|&v| (1, v)).collect();
            let r = difference_operator(&h, b, &xs, &eta);
            let p = difference_product(&h, b, &xs, &eta);
            prop_assert!((r - p).abs() <= 1e-12 * p.abs().max(1.0));
        }

        #[test]
        fn pair_coefficients_nonnegative(l in 0.1f64..1e4, b in -2.0f64..2.0) {
            prop_assert!(s_vv(l, b) >= 0.0);
        }
    }
}
