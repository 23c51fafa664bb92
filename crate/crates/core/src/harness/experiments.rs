//! The acceptance experiments. Defaults reproduce the acceptance settings; knobs in the
//! configuration override the primary stage of each experiment.

use std::fs;
use std::path::PathBuf;

use rand::Rng;
use serde::Serialize;

use super::{CriterionResult, ExperimentConfig, ExperimentId, Measure};
use crate::chaos::{
    difference_operator, difference_product, isometry_check, kernel_gap_for, kernel_norm, s_vv, s_vw, s_ww,
    series_bound, tail_norm, KernelSpec, PairLaw, PairQuadrature,
};
use crate::correlators::{conformal_covariance_check, n_point_limit, two_point_cutoff, two_point_limit, CoverPatternMasses, NPointSpec};
use crate::error::{Error, Result};
use crate::estimate::{agree, Estimate};
use crate::gaussfield::{
    covariance_matrix, covariance_of_sets, glf_one_point, glf_value, gmc_density_factor, sample_gaussian_field, theta,
    theta_cutoff, CoverSet, GaussParams,
};
use crate::geometry::{ConformalMap, Domain, DomainKind, Point, QuadGrid};
use crate::loopmeasure::{
    alpha_exact_annulus, count_estimate, replicate, AlphaTable, Budget, CutoffConfig, LoopSampler, Region, TableSpec,
};
use crate::rng::stream;
use crate::soup::{field_from_number, field_integral, replica_soups, FieldParams, FieldRow, Window};
use crate::stats::{chi2_gof, skellam_pmf};

pub(super) struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dir: PathBuf) -> Self {
        Ctx { cfg, dir, files: Vec::new() }
    }

    fn reps(&self, n: usize) -> usize {
        self.cfg.replicas.n_rep.unwrap_or_else(|| ((n as f64 * self.cfg.replicas.scale).round() as usize).max(2))
    }

    fn table_reps(&self, n: usize) -> usize {
        self.cfg.replicas.table_rep.unwrap_or_else(|| ((n as f64 * self.cfg.replicas.scale).round() as usize).max(2))
    }

    fn table_lambda(&self, l: f64) -> f64 {
        self.cfg.replicas.table_lambda.unwrap_or(l)
    }

    fn lambda(&self, l: f64) -> f64 {
        self.cfg.field.lambda.unwrap_or(l)
    }

    fn betas(&self, b: &[f64]) -> Vec<f64> {
        self.cfg.field.betas.clone().unwrap_or_else(|| b.to_vec())
    }

    fn xi(&self, x: f64) -> f64 {
        self.cfg.gauss.xi.unwrap_or(x)
    }

    fn delta(&self, d: f64) -> f64 {
        self.cfg.cutoffs.delta.unwrap_or(d)
    }

    fn points(&self, p: &[Point]) -> Vec<Point> {
        self.cfg.grid.points.clone().unwrap_or_else(|| p.to_vec())
    }

    fn cells(&self, n: usize) -> usize {
        self.cfg.grid.cells.unwrap_or(n)
    }

    fn cutoffs(&self, delta: f64, steps: usize) -> CutoffConfig {
        let mut c = CutoffConfig::new(delta).with_steps(self.cfg.cutoffs.n_steps.unwrap_or(steps));
        c.diameter_cells = self.cfg.cutoffs.diameter_cells;
        c
    }

    /// Independent seed for a named stage.
    fn seed(&self, tag: &str) -> u64 {
        stream(self.cfg.seed, 0, tag).gen()
    }

    fn domain(&self) -> Domain {
        self.cfg.domain
    }

    fn require_disk(&self) -> Result<()> {
        if self.cfg.domain.kind != DomainKind::UnitDisk {
            return Err(Error::Config(format!("experiment {} is defined on the unit disk", self.cfg.experiment)));
        }
        Ok(())
    }

    fn table(&self, tag: &str, points: Vec<Point>, cutoffs: CutoffConfig, lambda: f64, n_rep: usize) -> Result<AlphaTable> {
        let d = cutoffs.delta;
        AlphaTable::build(TableSpec {
            domain: self.domain(),
            points,
            delta_list: vec![2.0 * d],
            cutoffs,
            budget: Budget { lambda: self.table_lambda(lambda), n_rep: self.table_reps(n_rep), seed: self.seed(tag) },
        })
    }

    fn write<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub(super) fn run(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    match ctx.cfg.experiment {
        ExperimentId::Alpha => alpha(ctx),
        ExperimentId::Onepoint => onepoint(ctx),
        ExperimentId::Twopoint => twopoint(ctx),
        ExperimentId::Npoint => npoint(ctx),
        ExperimentId::Conformal => conformal(ctx),
        ExperimentId::Gauss => gauss(ctx),
        ExperimentId::ThetaBoundary => theta_boundary(ctx),
        ExperimentId::BoundaryConstants => boundary_constants(ctx),
        ExperimentId::Chaos => chaos(ctx),
        ExperimentId::Convergence => convergence(ctx),
        ExperimentId::Isometry => isometry(ctx),
    }
}

fn criterion(id: u8, name: &str, pass: bool, tolerance: &str, measured: Vec<Measure>) -> CriterionResult {
    CriterionResult { id, name: name.into(), pass, tolerance: tolerance.into(), measured }
}

const ORIGIN: Point = Point::new(0.0, 0.0);

#[derive(Serialize)]
struct EstimateRow {
    quantity: String,
    z_re: f64,
    z_im: f64,
    delta: f64,
    r: f64,
    value: f64,
    stderr: f64,
    target: f64,
}

fn alpha(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let z = ctx.points(&[ORIGIN])[0];
    let windows = [(0.1, 0.5), (0.05, 0.5), (0.1, 0.2)];
    let a = ctx.delta(0.05);
    let mut cut = ctx.cutoffs(a, 4096);
    cut.r = Some(0.5);
    let sampler = LoopSampler::new(ctx.domain(), cut, Region::Near(vec![z]))?;
    let budget = Budget { lambda: ctx.lambda(100.0), n_rep: ctx.reps(100), seed: ctx.seed("alpha-windows") };
    let counts = replicate(&sampler, &budget, "alpha-windows", |_, loops| {
        windows.map(|(d, r)| loops.iter().filter(|l| !l.covers.is_empty() && l.diameter >= d && l.diameter < r).count() as u64)
    });
    let dz = ctx.domain().boundary_distance(z)?;
    let mut rows = Vec::new();
    let mut m1 = Vec::new();
    let mut pass1 = true;
    for (k, &(d, r)) in windows.iter().enumerate() {
        if d < a {
            return Err(Error::Config(format!("window cutoff {d} is below the sampling cutoff {a}")));
        }
        let c: Vec<u64> = counts.iter().map(|c| c[k]).collect();
        let e = count_estimate(&c, budget.lambda);
        let target = if r <= dz { alpha_exact_annulus(d, r)? } else { f64::NAN };
        pass1 &= e.within(target, 3.0) && e.stderr <= 0.01;
        m1.push(Measure::est(format!("alpha[{d},{r})"), &e).target(target));
        rows.push(EstimateRow { quantity: "alpha_window".into(), z_re: z.re, z_im: z.im, delta: d, r, value: e.value, stderr: e.stderr, target });
    }
    ctx.write("alpha_windows.csv", &rows)?;
    let c1 = criterion(1, "annulus mass exactness", pass1, "|est − (1/5)ln(R/δ)| ≤ 3·stderr and stderr ≤ 0.01", m1);

    let pts = vec![ORIGIN, Point::new(0.5, 0.0), Point::new(-0.3, 0.3), Point::new(0.0, -0.7)];
    let spec = TableSpec {
        domain: ctx.domain(),
        points: pts,
        delta_list: vec![0.1, 0.2],
        cutoffs: ctx.cutoffs(0.05, 4096),
        budget: Budget { lambda: ctx.table_lambda(50.0), n_rep: ctx.table_reps(20), seed: ctx.seed("alpha-table") },
    };
    let table = AlphaTable::build(spec)?;
    table.save(&ctx.dir.join("table"))?;
    ctx.files.push("table".into());
    let rows = table.check_sandwich()?;
    #[derive(Serialize)]
    struct Row {
        point: usize,
        delta: f64,
        ball: f64,
        alpha: f64,
        ball_half: f64,
        holds: bool,
    }
    let out: Vec<Row> = rows
        .iter()
        .map(|r| Row { point: r.point, delta: r.delta, ball: r.ball.value, alpha: r.alpha.value, ball_half: r.ball_half.value, holds: r.holds })
        .collect();
    ctx.write("sandwich.csv", &out)?;
    let held = rows.iter().filter(|r| r.holds).count();
    let c4 = criterion(
        4,
        "sandwich inequality",
        held == rows.len(),
        "ᾱ_δ ≤ α_δ ≤ ᾱ_{δ/2} within 3 combined stderr at every entry",
        vec![Measure::new("entries holding", held as f64).target(rows.len() as f64)],
    );
    Ok(vec![c1, c4])
}

fn onepoint(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let z = ctx.points(&[ORIGIN])[0];
    let (delta, r) = (ctx.delta(0.1), 0.5);
    let window = Window::new(delta, Some(r))?;
    let mut cut = ctx.cutoffs(delta, 4096);
    cut.r = Some(r);
    let target_alpha = alpha_exact_annulus(delta, r)?;

    // Layering-field means at λ.
    let lambda = ctx.lambda(1.0);
    let betas = ctx.betas(&[0.5, 1.0]);
    let n_rep = ctx.reps(10_000);
    let soups = replica_soups(&ctx.domain(), &FieldParams::new(lambda, 0.0)?, &cut, Region::Near(vec![z]), n_rep, ctx.seed("onepoint-mean"), "onepoint-mean")?;
    let numbers: Vec<i64> = soups.iter().map(|s| Ok(s.focus_numbers(&window)?[0])).collect::<Result<_>>()?;
    drop(soups);
    let mut field_rows = Vec::new();
    let mut summary = Vec::new();
    let mut m2 = Vec::new();
    let mut pass2 = true;
    let trivial = betas.iter().all(|&b| b == 0.0);
    for &b in &betas {
        let p = FieldParams::new(lambda, b)?;
        let vals: Vec<f64> = numbers.iter().map(|&n| field_from_number(n, delta, &p, false)).collect();
        let e = Estimate::from_samples(&vals);
        let target = (r / delta).powf(2.0 * p.delta());
        pass2 &= if trivial { vals.iter().all(|&v| v == 1.0) } else { e.within(target, 3.0) };
        m2.push(Measure::est(format!("E V(β={b})"), &e).target(target));
        summary.push(EstimateRow { quantity: format!("mean_V_beta_{b}"), z_re: z.re, z_im: z.im, delta, r, value: e.value, stderr: e.stderr, target });
        field_rows.extend(numbers.iter().enumerate().map(|(k, &n)| FieldRow::new(k as u64, z, &window, n, &p)));
    }
    crate::soup::write_field_rows(&ctx.dir.join("field_rows.csv"), &field_rows)?;
    ctx.files.push("field_rows.csv".into());
    let tol2 = if trivial { "β = 0: every field value exactly 1" } else { "|mean − (R/δ)^{2Δ(β)}| ≤ 3·stderr" };
    let c2 = criterion(2, "one-point cutoff law", pass2, tol2, m2);

    // Layering law at λ = 2.
    let lam3 = 2.0;
    let soups = replica_soups(&ctx.domain(), &FieldParams::new(lam3, 0.0)?, &cut, Region::Near(vec![z]), ctx.reps(10_000), ctx.seed("onepoint-law"), "onepoint-law")?;
    let ns: Vec<i64> = soups.iter().map(|s| Ok(s.focus_numbers(&window)?[0])).collect::<Result<_>>()?;
    drop(soups);
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mean = Estimate::from_samples(&xs);
    let var = Estimate::variance_of(&xs);
    let mu = lam3 * target_alpha;
    let kmax = ns.iter().map(|n| n.unsigned_abs()).max().unwrap_or(0) as usize + 5;
    let gof = chi2_gof(&ns, -(kmax as i64), &skellam_pmf(mu / 2.0, mu / 2.0, kmax));
    let pass3 = mean.within(0.0, 3.0) && var.within(mu, 3.0) && gof.p_value > 0.01;
    summary.push(EstimateRow { quantity: "mean_N".into(), z_re: z.re, z_im: z.im, delta, r, value: mean.value, stderr: mean.stderr, target: 0.0 });
    summary.push(EstimateRow { quantity: "var_N".into(), z_re: z.re, z_im: z.im, delta, r, value: var.value, stderr: var.stderr, target: mu });
    summary.push(EstimateRow { quantity: "gof_p".into(), z_re: z.re, z_im: z.im, delta, r, value: gof.p_value, stderr: 0.0, target: f64::NAN });
    ctx.write("onepoint_summary.csv", &summary)?;
    let c3 = criterion(
        3,
        "Skellam layering law",
        pass3,
        "|mean| ≤ 3·stderr, |var − λα| ≤ 3·stderr, χ² p > 0.01",
        vec![Measure::est("mean N", &mean).target(0.0), Measure::est("var N", &var).target(mu), Measure::new("gof p", gof.p_value)],
    );
    Ok(vec![c2, c3])
}

fn twopoint(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let pairs = [
        (Point::new(-0.2, 0.0), Point::new(0.2, 0.0)),
        (Point::new(0.0, 0.3), Point::new(0.0, 0.65)),
        (Point::new(-0.45, -0.35), Point::new(-0.1, -0.55)),
        (Point::new(0.45, 0.25), Point::new(0.45, -0.3)),
    ];
    let pts: Vec<Point> = pairs.iter().flat_map(|&(z, w)| [z, w]).collect();
    let delta = ctx.delta(0.1);
    let lambda = ctx.lambda(1.0);
    let betas = ctx.betas(&[1.0, 1.0]);
    let (b, bp) = (betas[0], *betas.get(1).unwrap_or(&betas[0]));
    let cut = ctx.cutoffs(delta, 4096);
    let soups = replica_soups(&ctx.domain(), &FieldParams::new(lambda, b)?, &cut, Region::Near(pts.clone()), ctx.reps(3000), ctx.seed("twopoint-soup"), "twopoint-soup")?;
    let numbers: Vec<Vec<i64>> = soups.iter().map(|s| s.focus_numbers(&Window::above(delta))).collect::<Result<_>>()?;
    drop(soups);
    let table = ctx.table("twopoint-table", pts.clone(), cut, 50.0, 20)?;
    let mut rows = Vec::new();
    let mut m = Vec::new();
    let mut pass = true;
    for (k, &(z, w)) in pairs.iter().enumerate() {
        let prod: Vec<f64> = numbers.iter().map(|n| (b * n[2 * k] as f64 + bp * n[2 * k + 1] as f64).exp()).collect();
        let sim = Estimate::from_samples(&prod);
        let formula = two_point_cutoff(z, w, delta, delta, b, bp, lambda, &table)?;
        pass &= agree(&sim, &formula, 3.0);
        m.push(Measure::new(format!("pair {k} simulated"), sim.value).with_stderr(sim.stderr.hypot(formula.stderr)).target(formula.value));
        #[derive(Serialize)]
        struct Row {
            z_re: f64,
            z_im: f64,
            w_re: f64,
            w_im: f64,
            delta: f64,
            simulated: f64,
            simulated_stderr: f64,
            formula: f64,
            formula_stderr: f64,
        }
        rows.push(Row {
            z_re: z.re,
            z_im: z.im,
            w_re: w.re,
            w_im: w.im,
            delta,
            simulated: sim.value,
            simulated_stderr: sim.stderr,
            formula: formula.value,
            formula_stderr: formula.stderr,
        });
    }
    ctx.write("twopoint.csv", &rows)?;
    Ok(vec![criterion(5, "two-point formula", pass, "|sim − formula| ≤ 3·combined stderr at each pair", m)])
}

#[derive(Serialize)]
struct NPointRow {
    n: usize,
    points: String,
    betas: String,
    m: f64,
    value: f64,
    stderr: f64,
}

fn npoint_rows(ctx: &Ctx, tag: &str) -> Result<(Vec<NPointRow>, f64)> {
    let pts = ctx.points(&[Point::new(-0.3, 0.0), Point::new(0.3, 0.0), Point::new(0.0, 0.4)]);
    let betas = ctx.betas(&[0.5, 0.5, -0.5]);
    let lambda = ctx.lambda(1.0);
    let table = ctx.table(tag, pts.clone(), ctx.cutoffs(ctx.delta(0.1), 2048), 20.0, 10)?;
    let mut rows = Vec::new();
    for n in 1..=pts.len().min(betas.len()) {
        let spec = NPointSpec::new(&ctx.domain(), pts[..n].to_vec(), betas[..n].to_vec())?;
        let e = n_point_limit(&spec, lambda, &CoverPatternMasses::from_table(&spec, &table)?)?;
        let fmt = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let pfmt = spec.points.iter().map(|p| format!("{}{:+}i", p.re, p.im)).collect::<Vec<_>>().join(";");
        rows.push(NPointRow { n, points: pfmt, betas: fmt(&spec.betas), m: spec.m, value: e.value, stderr: e.stderr });
    }
    // With equal exponents the two-point case must agree with the dedicated formula.
    let gap = if pts.len() >= 2 {
        let p = FieldParams::new(lambda, betas[0])?;
        let spec = NPointSpec::new(&ctx.domain(), pts[..2].to_vec(), vec![betas[0]; 2])?;
        let n2 = n_point_limit(&spec, lambda, &CoverPatternMasses::from_table(&spec, &table)?)?;
        let tp = two_point_limit(&ctx.domain(), pts[0], pts[1], &p, &table)?;
        (n2.value / tp.value - 1.0).abs()
    } else {
        0.0
    };
    Ok((rows, gap))
}

fn npoint(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let (rows, gap) = npoint_rows(ctx, "npoint-table")?;
    ctx.write("npoint.csv", &rows)?;
    // Full recomputation from the same seed, then a byte comparison of the outputs.
    let (again, _) = npoint_rows(ctx, "npoint-table")?;
    ctx.write("npoint_rerun.csv", &again)?;
    let a = fs::read(ctx.dir.join("npoint.csv"))?;
    let b = fs::read(ctx.dir.join("npoint_rerun.csv"))?;
    Ok(vec![criterion(
        15,
        "determinism",
        a == b && gap < 1e-9,
        "re-run from identical config and seed gives byte-identical CSV",
        vec![Measure::new("identical bytes", (a == b) as u8 as f64).target(1.0), Measure::new("n=2 vs two-point relative gap", gap)],
    )])
}

fn conformal(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    ctx.require_disk()?;
    let map = ConformalMap::mobius(Point::new(0.4, 0.0))?;
    let pts = ctx.points(&[Point::new(-0.6, 0.0), Point::new(-0.3, 0.4)]);
    let betas = ctx.betas(&[1.0, 1.0]);
    let lambda = ctx.lambda(1.0);
    let spec = NPointSpec::new(&ctx.domain(), pts.clone(), betas.clone())?;
    let images: Vec<Point> = pts.iter().map(|&z| map.eval(z)).collect();
    let mapped = NPointSpec::new(&ctx.domain(), images.clone(), betas)?;
    let a = 0.5 * spec.m.min(mapped.m);
    let all: Vec<Point> = pts.iter().chain(&images).copied().collect();
    let table = ctx.table("conformal-table", all, ctx.cutoffs(ctx.delta(a), 4096), 100.0, 40)?;
    let rep = conformal_covariance_check(&map, &spec, lambda, &table, &table)?;
    let id = conformal_covariance_check(&ConformalMap::Identity, &spec, lambda, &table, &table)?;
    #[derive(Serialize)]
    struct Row {
        map: String,
        original: f64,
        original_stderr: f64,
        mapped: f64,
        mapped_stderr: f64,
        ratio: f64,
        ratio_stderr: f64,
        predicted: f64,
    }
    let row = |name: &str, r: &crate::correlators::CovarianceReport| Row {
        map: name.into(),
        original: r.original.value,
        original_stderr: r.original.stderr,
        mapped: r.mapped.value,
        mapped_stderr: r.mapped.stderr,
        ratio: r.ratio.value,
        ratio_stderr: r.ratio.stderr,
        predicted: r.predicted,
    };
    ctx.write("conformal.csv", &[row("mobius(0.4)", &rep), row("identity", &id)])?;
    let pass = rep.relative_gap() < 0.05 && id.ratio.value == 1.0 && id.predicted == 1.0;
    Ok(vec![criterion(
        6,
        "conformal covariance",
        pass,
        "Möbius ratio within 5% of Π|f′|^{2Δ}; identity ratio exactly 1",
        vec![Measure::est("mobius ratio", &rep.ratio).target(rep.predicted), Measure::new("identity ratio", id.ratio.value).target(1.0)],
    )])
}

/// Sample covariance of columns `a`, `b` with its large-sample standard error.
fn sample_cov(xs: &[Vec<f64>], a: usize, b: usize) -> Estimate {
    let n = xs.len() as f64;
    let ma = xs.iter().map(|x| x[a]).sum::<f64>() / n;
    let mb = xs.iter().map(|x| x[b]).sum::<f64>() / n;
    let prods: Vec<f64> = xs.iter().map(|x| (x[a] - ma) * (x[b] - mb)).collect();
    let e = Estimate::from_samples(&prods);
    Estimate::new(e.value * n / (n - 1.0), e.stderr, e.n)
}

fn gauss(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let xi = ctx.xi(1.0);
    let gp = GaussParams::new(xi)?;
    let pts = ctx.points(&[ORIGIN, Point::new(0.3, 0.0), Point::new(0.0, 0.35), Point::new(-0.4, -0.3)]);
    let table = ctx.table("gauss-table", pts.clone(), ctx.cutoffs(0.05, 4096), 50.0, 20)?;
    let n = ctx.reps(20_000);
    let mut rng = stream(ctx.cfg.seed, 0, "gauss-samples");
    let mut m = Vec::new();
    let mut pass = true;
    let mut rows = Vec::new();

    // Covariance fidelity at δ = 0.1.
    let cov = covariance_matrix(&table, &pts, 0.1)?;
    let draws: Vec<_> = (0..n).map(|_| sample_gaussian_field(&cov, &mut rng)).collect();
    #[derive(Serialize)]
    struct SampleRow {
        replica: usize,
        index: usize,
        z_re: f64,
        z_im: f64,
        g: f64,
        w_tilde: f64,
        gmc_density: f64,
    }
    let mut out = Vec::new();
    for (r, d) in draws.iter().enumerate().take(1000) {
        for (i, z) in d.points.iter().enumerate() {
            out.push(SampleRow {
                replica: r,
                index: i,
                z_re: z.re,
                z_im: z.im,
                g: d.values[i],
                w_tilde: glf_value(d, i, &gp, 0.1, true),
                gmc_density: gmc_density_factor(d, i, &gp, 0.1, &table)?,
            });
        }
    }
    ctx.write("gauss_samples.csv", &out)?;
    let samples: Vec<Vec<f64>> = draws.into_iter().map(|d| d.values).collect();
    for a in 0..pts.len() {
        for b in a..pts.len() {
            let s = sample_cov(&samples, a, b);
            let err = s.stderr.hypot(cov.stderr[(a, b)]);
            let ok = (s.value - cov.matrix[(a, b)]).abs() <= 3.0 * err;
            pass &= ok;
            rows.push(EstimateRow { quantity: format!("cov[{a},{b}]"), z_re: pts[a].re, z_im: pts[a].im, delta: 0.1, r: f64::NAN, value: s.value, stderr: err, target: cov.matrix[(a, b)] });
            m.push(Measure::new(format!("cov[{a},{b}]"), s.value).with_stderr(err).target(cov.matrix[(a, b)]));
        }
    }

    // One-point law of the renormalized field.
    let i0 = table.require_index(pts[0])?;
    let limit = glf_one_point(&ctx.domain(), pts[0], &gp, &table)?;
    for d in [0.1, 0.05] {
        let c = covariance_of_sets(&table, &[CoverSet { point: i0, delta: d }])?;
        let vals: Vec<f64> = (0..n).map(|_| glf_value(&sample_gaussian_field(&c, &mut rng), 0, &gp, d, true)).collect();
        let e = Estimate::from_samples(&vals);
        // The sampled variance α_δ(z) carries table error that does not cancel against α_{d_z}(z).
        let ad = table.alpha(i0, d)?;
        let err = e.stderr.hypot(limit.stderr).hypot(e.value * xi * xi / 2.0 * ad.stderr);
        let ok = (e.value - limit.value).abs() <= 3.0 * err;
        pass &= ok;
        m.push(Measure::new(format!("E W̃^{d}(z0)"), e.value).with_stderr(err).target(limit.value));
        rows.push(EstimateRow { quantity: "glf_one_point".into(), z_re: pts[0].re, z_im: pts[0].im, delta: d, r: f64::NAN, value: e.value, stderr: err, target: limit.value });
    }

    // Annulus increments G(A_{kδ}) − G(A_{(k+1)δ}) at z0.
    let base = 0.1;
    let sets: Vec<CoverSet> = (1..=4).map(|k| CoverSet { point: i0, delta: k as f64 * base }).collect();
    let c = covariance_of_sets(&table, &sets)?;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_gaussian_field(&c, &mut rng).values).collect();
    for k in 1..=3usize {
        let inc: Vec<f64> = draws.iter().map(|g| g[k - 1] - g[k]).collect();
        let v = Estimate::variance_of(&inc);
        let target = 0.2 * ((k + 1) as f64 / k as f64).ln();
        let tab = table.alpha_window(i0, k as f64 * base, (k + 1) as f64 * base)?;
        let err = v.stderr.hypot(tab.stderr);
        let ok = (v.value - target).abs() <= 3.0 * err;
        pass &= ok;
        m.push(Measure::new(format!("var increment k={k}"), v.value).with_stderr(err).target(target));
        rows.push(EstimateRow { quantity: format!("increment_var_k{k}"), z_re: pts[0].re, z_im: pts[0].im, delta: k as f64 * base, r: (k + 1) as f64 * base, value: v.value, stderr: err, target });
    }
    ctx.write("gauss.csv", &rows)?;
    Ok(vec![criterion(
        7,
        "Gaussian field fidelity",
        pass,
        "covariance entries, one-point law and annulus increments within 3 combined stderr",
        m,
    )])
}

fn theta_boundary(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    ctx.require_disk()?;
    let xi = ctx.xi(1.0);
    let gp = GaussParams::new(xi)?;
    let ds = [0.2, 0.1, 0.05, 0.025];
    let pts: Vec<Point> = ds.iter().map(|d| Point::new(1.0 - d, 0.0)).collect();
    let a = ds[3] / 4.0;
    let table = ctx.table("theta-table", pts.clone(), ctx.cutoffs(ctx.delta(a), 4096), 100.0, 20)?;
    let mut rng = stream(ctx.cfg.seed, 0, "theta-samples");
    #[derive(Serialize)]
    struct Row {
        d_z: f64,
        delta: f64,
        alpha_dz: f64,
        alpha_dz_stderr: f64,
        theta: f64,
        theta_delta: f64,
        ratio: f64,
        ratio_spread: f64,
        predicted: f64,
    }
    let mut rows = Vec::new();
    let mut m = Vec::new();
    let mut worst_dev = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut ratios = Vec::new();
    let mut alphas = Vec::new();
    for (i, &dz) in ds.iter().enumerate() {
        let th = theta(&ctx.domain(), pts[i], &table)?;
        let ad = table.alpha(i, dz)?;
        alphas.push(ad);
        ratios.push((xi * xi / 2.0 * th.value).exp());
        for delta in [dz / 2.0, dz / 4.0] {
            let td = theta_cutoff(i, delta, &table)?;
            let c = covariance_of_sets(&table, &[CoverSet { point: i, delta }])?;
            let mut rs = Vec::new();
            for _ in 0..16 {
                let g = sample_gaussian_field(&c, &mut rng);
                rs.push(glf_value(&g, 0, &gp, delta, true) / gmc_density_factor(&g, 0, &gp, delta, &table)?);
            }
            let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let predicted = (xi * xi / 2.0 * td.value).exp();
            worst_dev = worst_dev.max((hi - lo) / hi).max((rs[0] / predicted - 1.0).abs());
            // Θ_δ − Θ_D is the annulus mass α_{δ,d_z}(z) minus its exact value.
            let ann = table.alpha_window(i, delta, dz)?;
            worst_z = worst_z.max(ann.z_score(alpha_exact_annulus(delta, dz)?).abs());
            rows.push(Row {
                d_z: dz,
                delta,
                alpha_dz: ad.value,
                alpha_dz_stderr: ad.stderr,
                theta: th.value,
                theta_delta: td.value,
                ratio: rs[0],
                ratio_spread: hi - lo,
                predicted,
            });
        }
    }
    ctx.write("theta_boundary.csv", &rows)?;
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let upward = alphas
        .windows(2)
        .map(|w| (w[1].value - w[0].value) / w[0].stderr.hypot(w[1].stderr))
        .fold(f64::NEG_INFINITY, f64::max);
    m.push(Measure::new("max relative deviation of W̃/GMC ratio", worst_dev));
    m.push(Measure::new("max |z| of δ-stability", worst_z));
    m.push(Measure::flag("e^(ξ²Θ/2) strictly decreasing", decreasing));
    m.push(Measure::new("largest upward α_dz step in stderr", upward));
    for (k, &dz) in ds.iter().enumerate() {
        m.push(Measure::new(format!("e^(ξ²Θ/2) at d_z={dz}"), ratios[k]));
        m.push(Measure::est(format!("α_dz at d_z={dz}"), &alphas[k]));
    }
    Ok(vec![criterion(
        8,
        "Radon–Nikodym factor and boundary decay",
        worst_dev <= 1e-12 && worst_z <= 3.0 && decreasing && upward <= 3.0,
        "ratio deterministic to 1e-12; δ-stability within 3 stderr; strictly decreasing; no upward α step beyond 3 stderr",
        m,
    )])
}

fn boundary_constants(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    ctx.require_disk()?;
    let cayley = ConformalMap::Cayley;
    let ys = [0.5, 1.0];
    let rs = [0.5, 1.0, 2.0, 4.0];
    // A loop surrounding iy in ℍ whose diameter is at least r·y has a preimage of diameter at
    // least r·y/((r·y/2 + y + 1)(y + 1)) — above 0.1 for every (y, r) used here.
    let a = ctx.delta(0.1);
    for &y in &ys {
        let bound = rs[0] * y / ((rs[0] * y / 2.0 + y + 1.0) * (y + 1.0));
        if a > bound {
            return Err(Error::Config(format!("sampling cutoff {a} exceeds the preimage bound {bound:.4} at y = {y}")));
        }
    }
    let cut = ctx.cutoffs(a, 4096);
    let mut est = Vec::new();
    let mut rows = Vec::new();
    for &y in &ys {
        let z0 = cayley.inverse(Point::new(0.0, y));
        let z0 = Point::new(z0.re, 0.0);
        let sampler = LoopSampler::new(ctx.domain(), cut.clone(), Region::Near(vec![z0]))?;
        let tag = format!("boundary-y{y}");
        let budget = Budget { lambda: ctx.lambda(100.0), n_rep: ctx.reps(20), seed: ctx.seed(&tag) };
        let steps = cut.n_steps;
        let counts = replicate(&sampler, &budget, &tag, |_, loops| {
            let mut c = [0u64; 4];
            for l in loops.iter().filter(|l| !l.covers.is_empty()) {
                let image: Vec<Point> = l.materialize(steps).path.iter().map(|&p| cayley.eval(p)).collect();
                let d = crate::loops::diameter(&image);
                for (k, &r) in rs.iter().enumerate() {
                    if d >= r * y {
                        c[k] += 1;
                    }
                }
            }
            c
        });
        let per_r: Vec<Estimate> = (0..rs.len())
            .map(|k| count_estimate(&counts.iter().map(|c| c[k]).collect::<Vec<_>>(), budget.lambda))
            .collect();
        for (k, e) in per_r.iter().enumerate() {
            rows.push(EstimateRow { quantity: "alpha_halfplane".into(), z_re: 0.0, z_im: y, delta: rs[k] * y, r: rs[k], value: e.value, stderr: e.stderr, target: f64::NAN });
        }
        est.push(per_r);
    }
    ctx.write("boundary_constants.csv", &rows)?;
    let mut m = Vec::new();
    let mut pass = true;
    for (k, &r) in rs.iter().enumerate().take(3) {
        let ok = agree(&est[0][k], &est[1][k], 3.0);
        pass &= ok;
        let se = est[0][k].stderr.hypot(est[1][k].stderr);
        m.push(Measure::new(format!("C(r={r}) at y=0.5"), est[0][k].value).with_stderr(se).target(est[1][k].value));
    }
    for (e, y) in est.iter().zip(ys) {
        let dec = e.windows(2).all(|w| w[1].value < w[0].value);
        pass &= dec;
        m.push(Measure::flag(format!("C(r) strictly decreasing at y={y}"), dec));
    }
    Ok(vec![criterion(
        9,
        "boundary-constant scale invariance",
        pass,
        "y = 0.5 and y = 1 agree within 3 combined stderr for r ∈ {0.5, 1, 2}; strictly decreasing in r",
        m,
    )])
}

/// Grid, table and limit-law quadrature shared by the chaos-type experiments.
fn chaos_setup(ctx: &Ctx, tag: &str) -> Result<(QuadGrid, AlphaTable)> {
    let grid = QuadGrid::uniform(&ctx.domain(), ctx.cells(10))?;
    // Cells lie inside the domain, so every centre has d_z ≥ h/2 ≥ the sampling cutoff.
    let a = ctx.delta(grid.h / 2.0).min(grid.h / 2.0);
    let table = ctx.table(tag, grid.centers.clone(), ctx.cutoffs(a, 4096), 20.0, 10)?;
    Ok((grid, table))
}

fn chaos(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let xi = ctx.xi(1.0);
    let (grid, table) = chaos_setup(ctx, "chaos-table")?;
    let quad = PairQuadrature::new(&table, &grid, PairLaw::Limit)?;
    let one = |_: Point| 1.0;
    let ladder = [1e2f64, 1e3, 1e4];
    #[derive(Serialize)]
    struct Row {
        q: u32,
        lambda: f64,
        beta: f64,
        xi: f64,
        w_norm: f64,
        f_norm: f64,
        gap: f64,
        relative_gap: f64,
        coefficient_combination: f64,
    }
    let mut rows = Vec::new();
    let mut m10 = Vec::new();
    let mut pass10 = true;
    for q in 1..=2u32 {
        let mut rel = Vec::new();
        for &l in &ladder {
            let b = xi / l.sqrt();
            let g = kernel_gap_for(q, &FieldParams::new(l, b)?, xi, one, &quad, &grid, &table)?;
            let comb = s_vv(l, b).powi(q as i32) - 2.0 * s_vw(l, b, xi).powi(q as i32) + s_ww(xi).powi(q as i32);
            rows.push(Row { q, lambda: l, beta: b, xi, w_norm: g.w_norm, f_norm: g.f_norm, gap: g.gap, relative_gap: g.relative(), coefficient_combination: comb });
            rel.push(g.relative());
        }
        let dec = rel.windows(2).all(|w| w[1] < w[0]);
        pass10 &= dec && rel[2] < 0.01;
        m10.push(Measure::flag(format!("q={q} relative gap decreasing"), dec));
        m10.push(Measure::new(format!("q={q} relative gap at λ=1e4"), rel[2]));
    }
    let comb = |l: f64| {
        let b = 1.0 / l.sqrt();
        s_vv(l, b) - 2.0 * s_vw(l, b, 1.0) + s_ww(1.0)
    };
    let (c2, c4) = (comb(1e2), comb(1e4));
    pass10 &= ((c2 - 0.002504) / 0.002504).abs() < 2e-3 && ((c4 - 2.5e-5) / 2.5e-5).abs() < 1e-3;
    m10.push(Measure::new("s-combination λ=1e2", c2).target(0.002504));
    m10.push(Measure::new("s-combination λ=1e4", c4).target(2.5e-5));
    ctx.write("chaos_gaps.csv", &rows)?;
    let c10 = criterion(
        10,
        "chaos kernel convergence",
        pass10,
        "relative gap decreasing along λ, < 0.01 at λ=1e4; s-combinations within 0.2% / 0.1%",
        m10,
    );

    let p = FieldParams::new(100.0, 0.1)?;
    let v = KernelSpec::poisson(&p, one, &grid, &table, 1)?;
    let t1 = tail_norm(1, &v, &quad)?;
    let t5 = tail_norm(5, &v, &quad)?;
    let ratio = t5.sum / t1.sum;
    #[derive(Serialize)]
    struct TailRow {
        q: u32,
        term: f64,
    }
    ctx.write("chaos_tail.csv", &t1.terms.iter().map(|&(q, term)| TailRow { q, term }).collect::<Vec<_>>())?;
    let c11 = criterion(
        11,
        "tail decay",
        ratio < 0.05,
        "tail(5)/tail(1) < 0.05",
        vec![Measure::new("tail(5)/tail(1)", ratio), Measure::new("tail(1)", t1.sum)],
    );

    let mut rng = stream(ctx.cfg.seed, 0, "chaos-difference");
    let h = |x: &f64| *x;
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let eta: Vec<f64> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.5..1.5);
        for q in 0..=3 {
            let r = difference_operator(&h, b, &xs[..q], &eta);
            let p = difference_product(&h, b, &xs[..q], &eta);
            worst = worst.max((r - p).abs());
        }
    }
    let c13 = criterion(
        13,
        "difference operator identity",
        worst <= 1e-12,
        "recursive iterated difference equals product form to 1e-12, q ≤ 3",
        vec![Measure::new("max abs deviation", worst)],
    );

    // The Gaussian series stays below its closed-form bound.
    let gp = GaussParams::new(xi)?;
    let w = KernelSpec::gaussian(&gp, one, &grid, &table, 1)?;
    let lhs: f64 = (1..=20).map(|q| kernel_norm(&w.with_order(q), &quad)).sum::<Result<f64>>()?;
    #[derive(Serialize)]
    struct BoundRow {
        q_max: u32,
        series: f64,
        bound: f64,
    }
    ctx.write("chaos_series_bound.csv", &[BoundRow { q_max: 20, series: lhs, bound: series_bound(&gp, 1.0, &grid) }])?;
    Ok(vec![c10, c11, c13])
}

fn isometry(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let (grid, table) = chaos_setup(ctx, "isometry-table")?;
    let delta = 0.1f64.max(table.sampling_cutoff());
    let p = FieldParams::new(ctx.lambda(1.0), ctx.betas(&[0.3])[0])?;
    let soups = replica_soups(&ctx.domain(), &p, &table.spec().cutoffs, Region::Near(grid.centers.clone()), ctx.reps(1000), ctx.seed("isometry-soup"), "isometry-soup")?;
    let one = |_: Point| 1.0;
    let rep = isometry_check(&soups, one, &grid, delta, &p, 6, &table, 10.min(table.spec().budget.n_rep))?;
    #[derive(Serialize)]
    struct Row {
        q_max: u32,
        variance: f64,
        variance_stderr: f64,
        partial_sum: f64,
        gap: f64,
        combined_error: f64,
    }
    let rows: Vec<Row> = (0..rep.partial_sums.len())
        .map(|k| Row {
            q_max: k as u32 + 1,
            variance: rep.variance.value,
            variance_stderr: rep.variance.stderr,
            partial_sum: rep.partial_sums[k],
            gap: rep.gaps[k],
            combined_error: rep.combined_error,
        })
        .collect();
    ctx.write("isometry.csv", &rows)?;
    let monotone = rep.gaps.windows(2).all(|w| w[1] <= w[0]);
    let i1_se = rep.i1_variance.stderr.hypot(rep.norm_stderr);
    let i1_ok = rep.i1_mean.within(0.0, 3.0) && (rep.i1_variance.value - rep.partial_sums[0]).abs() <= 3.0 * i1_se;
    Ok(vec![criterion(
        12,
        "Itô isometry",
        rep.holds(3.0) && monotone && i1_ok,
        "|Var − S_6| ≤ 3·combined error; gap non-increasing in Q; I₁ mean 0 and variance ‖f₁‖² within 3 stderr",
        vec![
            Measure::new("Var Ṽ^δ(φ)", rep.variance.value)
                .with_stderr(rep.combined_error)
                .target(*rep.partial_sums.last().expect("q_max ≥ 1")),
            Measure::flag("gap non-increasing in Q", monotone),
            Measure::est("I1 mean", &rep.i1_mean).target(0.0),
            Measure::new("I1 variance", rep.i1_variance.value).with_stderr(i1_se).target(rep.partial_sums[0]),
        ],
    )])
}

fn convergence(ctx: &mut Ctx) -> Result<Vec<CriterionResult>> {
    let xi = ctx.xi(1.0);
    let gp = GaussParams::new(xi)?;
    if !gp.square_integrable() {
        return Err(Error::Regime(format!("ξ = {xi} is not below √2")));
    }
    let (grid, table) = chaos_setup(ctx, "convergence-table")?;
    let quad = PairQuadrature::new(&table, &grid, PairLaw::Limit)?;
    // φ = indicator of |z| ≤ 0.4: its support keeps d_z ≥ 0.6 above the simulation cutoff,
    // where E[Ṽ^δ(z)] equals the limiting one-point function exactly.
    let support = 0.4;
    let phi = move |z: Point| if z.norm() <= support { 1.0 } else { 0.0 };
    let focus: Vec<Point> = grid.centers.iter().copied().filter(|&z| phi(z) > 0.0).collect();
    let sub = QuadGrid { centers: focus.clone(), ..grid.clone() };
    let delta = ctx.delta(0.25);
    let mut sim_cut = CutoffConfig::new(delta).with_steps(ctx.cfg.cutoffs.n_steps.unwrap_or(256));
    sim_cut.diameter_cells = ctx.cfg.cutoffs.diameter_cells;

    let w_mean = {
        let w = KernelSpec::gaussian(&gp, phi, &grid, &table, 1)?;
        w.weights.iter().sum::<f64>() * grid.cell_area()
    };
    let w_var = {
        let w = KernelSpec::gaussian(&gp, phi, &grid, &table, 1)?;
        let mut s = 0.0;
        for q in 1..=60 {
            let t = kernel_norm(&w.with_order(q), &quad)?;
            s += t;
            if t < 1e-12 * s {
                break;
            }
        }
        s
    };
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        beta: f64,
        delta: f64,
        n_rep: usize,
        sim_mean: f64,
        sim_mean_stderr: f64,
        sim_var: f64,
        sim_var_stderr: f64,
        analytic_mean: f64,
        analytic_mean_stderr: f64,
        gauss_mean: f64,
        gauss_var: f64,
        analytic_gap: f64,
    }
    let rungs = [(1e2f64, 200usize), (1e3, 40), (1e4, 10)];
    let mut rows = Vec::new();
    let mut m = Vec::new();
    let mut tracks = true;
    for &(l, n) in &rungs {
        let p = FieldParams::new(l, xi / l.sqrt())?;
        p.require_limit_regime()?;
        let analytic = focus
            .iter()
            .map(|&z| crate::correlators::one_point_limit(&ctx.domain(), z, &p, &table))
            .try_fold(Estimate::exact(0.0), |acc, e| e.map(|e| acc.add(&e)))?
            .scale(grid.cell_area());
        let n_rep = ctx.reps(n);
        let soups = replica_soups(&ctx.domain(), &p, &sim_cut, Region::Near(focus.clone()), n_rep, ctx.seed(&format!("convergence-{l}")), &format!("convergence-{l}"))?;
        let vals: Vec<f64> = soups.iter().map(|s| field_integral(s, phi, &sub, delta, &p)).collect::<Result<_>>()?;
        drop(soups);
        let sim = Estimate::from_samples(&vals);
        let var = Estimate::variance_of(&vals);
        let gap = (analytic.value / w_mean - 1.0).abs();
        tracks &= agree(&sim, &analytic, 3.0);
        m.push(Measure::new(format!("sim mean λ={l}"), sim.value).with_stderr(sim.stderr.hypot(analytic.stderr)).target(analytic.value));
        m.push(Measure::new(format!("analytic gap λ={l}"), gap));
        rows.push(Row {
            lambda: l,
            beta: p.beta,
            delta,
            n_rep,
            sim_mean: sim.value,
            sim_mean_stderr: sim.stderr,
            sim_var: var.value,
            sim_var_stderr: var.stderr,
            analytic_mean: analytic.value,
            analytic_mean_stderr: analytic.stderr,
            gauss_mean: w_mean,
            gauss_var: w_var,
            analytic_gap: gap,
        });
    }
    ctx.write("convergence.csv", &rows)?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.analytic_gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let pass = monotone && gaps[2] < 0.01 && tracks;
    m.push(Measure::flag("analytic gap strictly decreasing", monotone));
    Ok(vec![criterion(
        14,
        "convergence sweep",
        pass,
        "analytic mean gap strictly decreasing, < 1% at λ=1e4; simulated means within 3 combined stderr of analytic",
        m,
    )])
}
