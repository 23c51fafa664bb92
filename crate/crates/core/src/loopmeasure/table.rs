//! Persisted loop-measure masses on a grid of points.
//!
//! The table keeps the raw cover log — for every sampled loop that covers at least one grid
//! point: its replica, diameter, and the covered points with their reach — so any mass made of
//! the events "covers z", "diameter ≥ δ" and "leaves B(z, r)" can be read off at any cutoff at
//! or above the sampling cutoff. Summary CSVs for the declared cutoffs are written alongside.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{count_estimate, replicate, Budget, Cover, CutoffConfig, LoopSampler, Region};
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::geometry::{Domain, Point};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub domain: Domain,
    pub points: Vec<Point>,
    pub delta_list: Vec<f64>,
    pub cutoffs: CutoffConfig,
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub schema_version: u32,
    pub spec: TableSpec,
    pub created: String,
    pub logged_loops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverLog {
    pub replica: u32,
    pub diameter: f64,
    pub covers: Vec<Cover>,
}

#[derive(Debug, Clone)]
pub struct AlphaTable {
    pub meta: TableMeta,
    logs: Vec<CoverLog>,
    by_point: Vec<Vec<u32>>,
}

/// One row of the sandwich check `ᾱ_δ ≤ α_δ ≤ ᾱ_{δ/2}`.
#[derive(Debug, Clone, Copy)]
pub struct SandwichRow {
    pub point: usize,
    pub delta: f64,
    pub ball: Estimate,
    pub alpha: Estimate,
    pub ball_half: Estimate,
    pub holds: bool,
}

impl AlphaTable {
    pub fn build(spec: TableSpec) -> Result<Self> {
        let a = spec.cutoffs.delta;
        if spec.delta_list.iter().any(|&d| d < 2.0 * a) {
            return Err(Error::Config(format!(
                "sampling cutoff {a} must be at most half of every tabulated cutoff (ball masses at δ/2)"
            )));
        }
        for (i, z) in spec.points.iter().enumerate() {
            spec.domain.boundary_distance(*z)?;
            if spec.points[..i].contains(z) {
                return Err(Error::Parameter(format!("grid point {z} is repeated")));
            }
        }
        let sampler = LoopSampler::new(spec.domain, spec.cutoffs.clone(), Region::Near(spec.points.clone()))?;
        let per_rep = replicate(&sampler, &spec.budget, "alpha-table", |rep, loops| {
            loops
                .into_iter()
                .filter(|l| !l.covers.is_empty())
                .map(|l| CoverLog { replica: rep as u32, diameter: l.diameter, covers: l.covers })
                .collect::<Vec<_>>()
        });
        let logs: Vec<CoverLog> = per_rep.into_iter().flatten().collect();
        let meta = TableMeta {
            schema_version: SCHEMA_VERSION,
            logged_loops: logs.len(),
            spec,
            created: chrono::Utc::now().to_rfc3339(),
        };
        Ok(Self::from_parts(meta, logs))
    }

    fn from_parts(meta: TableMeta, logs: Vec<CoverLog>) -> Self {
        let mut by_point = vec![Vec::new(); meta.spec.points.len()];
        for (k, l) in logs.iter().enumerate() {
            for c in &l.covers {
                by_point[c.point as usize].push(k as u32);
            }
        }
        AlphaTable { meta, logs, by_point }
    }

    pub fn spec(&self) -> &TableSpec {
        &self.meta.spec
    }

    pub fn points(&self) -> &[Point] {
        &self.meta.spec.points
    }

    pub fn domain(&self) -> &Domain {
        &self.meta.spec.domain
    }

    pub fn sampling_cutoff(&self) -> f64 {
        self.meta.spec.cutoffs.delta
    }

    pub fn logs(&self) -> &[CoverLog] {
        &self.logs
    }

    pub fn index_of(&self, z: Point) -> Option<usize> {
        self.points().iter().position(|p| *p == z)
    }

    pub fn require_index(&self, z: Point) -> Result<usize> {
        self.index_of(z).ok_or_else(|| Error::MissingEntry(format!("point ({}, {}) not in table", z.re, z.im)))
    }

    fn check_cutoff(&self, delta: f64) -> Result<()> {
        let a = self.sampling_cutoff();
        if delta < a * (1.0 - 1e-12) {
            return Err(Error::CutoffMismatch { requested: delta, sampled: a });
        }
        Ok(())
    }

    fn estimate<F: Fn(&CoverLog) -> bool>(&self, candidates: &[u32], pred: F) -> Estimate {
        let b = &self.meta.spec.budget;
        let mut counts = vec![0u64; b.n_rep];
        for &k in candidates {
            let l = &self.logs[k as usize];
            if pred(l) {
                counts[l.replica as usize] += 1;
            }
        }
        count_estimate(&counts, b.lambda)
    }

    fn covers(l: &CoverLog, i: usize) -> Option<&Cover> {
        l.covers.iter().find(|c| c.point as usize == i)
    }

    /// `α_δ(z_i)`.
    pub fn alpha(&self, i: usize, delta: f64) -> Result<Estimate> {
        self.check_cutoff(delta)?;
        Ok(self.estimate(&self.by_point[i], |l| l.diameter >= delta))
    }

    /// `α_{δ,R}(z_i)`: diameter in `[δ, R)`.
    pub fn alpha_window(&self, i: usize, delta: f64, r: f64) -> Result<Estimate> {
        self.check_cutoff(delta)?;
        Ok(self.estimate(&self.by_point[i], |l| l.diameter >= delta && l.diameter < r))
    }

    /// `ᾱ_δ(z_i)`: covering loops not contained in `B(z_i, δ)`.
    pub fn alpha_ball(&self, i: usize, delta: f64) -> Result<Estimate> {
        self.check_cutoff(delta)?;
        Ok(self.estimate(&self.by_point[i], |l| Self::covers(l, i).is_some_and(|c| c.reach >= delta)))
    }

    fn both(&self, i: usize, j: usize) -> Vec<u32> {
        let (a, b) = (&self.by_point[i], &self.by_point[j]);
        let (mut p, mut q, mut out) = (0, 0, Vec::new());
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[p]);
                    p += 1;
                    q += 1;
                }
            }
        }
        out
    }

    /// `α(z_i, z_j)`: loops covering both points.
    pub fn alpha_pair(&self, i: usize, j: usize) -> Result<Estimate> {
        if i == j {
            return Err(Error::Diagonal);
        }
        let sep = (self.points()[i] - self.points()[j]).norm();
        self.check_cutoff(sep)?;
        Ok(self.estimate(&self.both(i, j), |_| true))
    }

    /// `μ(A_δ(z_i) ∩ A_δ(z_j)) = α_{max(δ, |z_i − z_j|)}(z_i, z_j)`; the diagonal gives `α_δ(z_i)`.
    pub fn alpha_pair_cut(&self, i: usize, j: usize, delta: f64) -> Result<Estimate> {
        if i == j {
            return self.alpha(i, delta);
        }
        let sep = (self.points()[i] - self.points()[j]).norm();
        let eff = delta.max(sep);
        self.check_cutoff(eff)?;
        Ok(self.estimate(&self.both(i, j), |l| l.diameter >= eff))
    }

    /// `α_δ(z_i | z_j)`: loops covering `z_i` but not `z_j`.
    pub fn alpha_excl(&self, i: usize, j: usize, delta: f64) -> Result<Estimate> {
        self.check_cutoff(delta)?;
        Ok(self.estimate(&self.by_point[i], |l| {
            l.diameter >= delta && Self::covers(l, j).is_none()
        }))
    }

    /// Masses of loops with diameter ≥ δ covering exactly the subset `mask` of `set`
    /// (bit k ↔ `set[k]`), for every non-empty mask.
    pub fn pattern_masses(&self, set: &[usize], delta: f64) -> Result<Vec<(u32, Estimate)>> {
        self.check_cutoff(delta)?;
        if set.is_empty() || set.len() > 4 {
            return Err(Error::Parameter(format!("pattern sets need 1 to 4 points, got {}", set.len())));
        }
        let b = &self.meta.spec.budget;
        let n_masks = 1usize << set.len();
        let mut counts = vec![vec![0u64; b.n_rep]; n_masks];
        let mut seen: Vec<u32> = set.iter().flat_map(|&i| self.by_point[i].iter().copied()).collect();
        seen.sort_unstable();
        seen.dedup();
        for k in seen {
            let l = &self.logs[k as usize];
            if l.diameter < delta {
                continue;
            }
            let mut mask = 0usize;
            for (bit, &i) in set.iter().enumerate() {
                if Self::covers(l, i).is_some() {
                    mask |= 1 << bit;
                }
            }
            counts[mask][l.replica as usize] += 1;
        }
        Ok((1..n_masks).map(|m| (m as u32, count_estimate(&counts[m], b.lambda))).collect())
    }

    /// Dense `μ(A_δ(z_i) ∩ A_δ(z_j))` for all pairs, row-major, with standard errors.
    pub fn pair_matrix(&self, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_cutoff(delta)?;
        let n = self.points().len();
        let b = &self.meta.spec.budget;
        let mut sum = vec![0u64; n * n];
        let mut sq = vec![0u64; n * n];
        let mut cur: HashMap<usize, u64> = HashMap::new();
        let mut rep = u32::MAX;
        let flush = |cur: &mut HashMap<usize, u64>, sq: &mut Vec<u64>| {
            for (k, c) in cur.drain() {
                sq[k] += c * c;
            }
        };
        for l in &self.logs {
            if l.replica != rep {
                flush(&mut cur, &mut sq);
                rep = l.replica;
            }
            if l.diameter < delta {
                continue;
            }
            for a in &l.covers {
                for c in &l.covers {
                    let k = a.point as usize * n + c.point as usize;
                    sum[k] += 1;
                    *cur.entry(k).or_insert(0) += 1;
                }
            }
        }
        flush(&mut cur, &mut sq);
        let nr = b.n_rep as f64;
        let mut val = vec![0.0; n * n];
        let mut err = vec![0.0; n * n];
        for k in 0..n * n {
            let s = sum[k] as f64;
            val[k] = s / (b.lambda * nr);
            let poisson = s.sqrt() / (b.lambda * nr);
            let emp = if b.n_rep > 1 {
                let mean = s / nr;
                let var = ((sq[k] as f64 - nr * mean * mean) / (nr - 1.0)).max(0.0);
                (var / nr).sqrt() / b.lambda
            } else {
                0.0
            };
            err[k] = poisson.max(emp);
        }
        Ok((val, err))
    }

    /// Sandwich rows for every point and tabulated δ.
    pub fn check_sandwich(&self) -> Result<Vec<SandwichRow>> {
        let mut rows = Vec::new();
        for i in 0..self.points().len() {
            for &d in &self.meta.spec.delta_list {
                let ball = self.alpha_ball(i, d)?;
                let alpha = self.alpha(i, d)?;
                let ball_half = self.alpha_ball(i, d / 2.0)?;
                let lower_ok = ball.value <= alpha.value + 3.0 * ball.stderr.hypot(alpha.stderr);
                let upper_ok = alpha.value <= ball_half.value + 3.0 * alpha.stderr.hypot(ball_half.stderr);
                rows.push(SandwichRow { point: i, delta: d, ball, alpha, ball_half, holds: lower_ok && upper_ok });
            }
        }
        Ok(rows)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("table_meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        let mut w = csv::Writer::from_path(dir.join("cover_log.csv"))?;
        w.write_record(["replica", "loop", "point", "diameter", "reach"])?;
        for (k, l) in self.logs.iter().enumerate() {
            for c in &l.covers {
                w.write_record(&[
                    l.replica.to_string(),
                    k.to_string(),
                    c.point.to_string(),
                    l.diameter.to_string(),
                    c.reach.to_string(),
                ])?;
            }
        }
        w.flush()?;
        self.write_summaries(dir)
    }

    fn write_summaries(&self, dir: &Path) -> Result<()> {
        let pts = self.points();
        let a = self.sampling_cutoff();
        let row = |e: &Estimate| [e.value.to_string(), e.stderr.to_string(), e.n.to_string()];
        let mut cover = csv::Writer::from_path(dir.join("alpha_cover.csv"))?;
        let mut ball = csv::Writer::from_path(dir.join("alpha_ball.csv"))?;
        for w in [&mut cover, &mut ball] {
            w.write_record(["z_re", "z_im", "delta", "value", "stderr", "n"])?;
        }
        for (i, z) in pts.iter().enumerate() {
            let mut ds = self.meta.spec.delta_list.clone();
            let dz = self.domain().boundary_distance(*z)?;
            if dz >= a {
                ds.push(dz);
            }
            for d in ds {
                let e = self.alpha(i, d)?;
                cover.write_record([z.re.to_string(), z.im.to_string(), d.to_string()].into_iter().chain(row(&e)))?;
            }
            for &d in &self.meta.spec.delta_list {
                for dd in [d, d / 2.0] {
                    let e = self.alpha_ball(i, dd)?;
                    ball.write_record([z.re.to_string(), z.im.to_string(), dd.to_string()].into_iter().chain(row(&e)))?;
                }
            }
        }
        cover.flush()?;
        ball.flush()?;
        let mut pair = csv::Writer::from_path(dir.join("alpha_pair.csv"))?;
        let mut excl = csv::Writer::from_path(dir.join("alpha_excl.csv"))?;
        for w in [&mut pair, &mut excl] {
            w.write_record(["z_re", "z_im", "w_re", "w_im", "delta", "value", "stderr", "n"])?;
        }
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i == j {
                    continue;
                }
                let (z, w) = (pts[i], pts[j]);
                let sep = (z - w).norm();
                let key = [z.re.to_string(), z.im.to_string(), w.re.to_string(), w.im.to_string()];
                if i < j && sep >= a {
                    let e = self.alpha_pair(i, j)?;
                    pair.write_record(key.iter().cloned().chain([sep.to_string()]).chain(row(&e)))?;
                }
                for &d in self.meta.spec.delta_list.iter().filter(|&&d| d <= sep) {
                    let e = self.alpha_excl(i, j, d)?;
                    excl.write_record(key.iter().cloned().chain([d.to_string()]).chain(row(&e)))?;
                }
            }
        }
        pair.flush()?;
        excl.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: TableMeta = serde_json::from_str(&fs::read_to_string(dir.join("table_meta.json"))?)?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::StaleTable(format!("schema version {} (expected {SCHEMA_VERSION})", meta.schema_version)));
        }
        let mut r = csv::Reader::from_path(dir.join("cover_log.csv"))?;
        let mut logs: Vec<CoverLog> = Vec::new();
        let mut last = usize::MAX;
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<&str> { rec.get(k).ok_or_else(|| Error::MissingEntry("short cover-log row".into())) };
            let bad = |e: String| Error::TableQuality(format!("cover log: {e}"));
            let replica: u32 = parse(0)?.parse().map_err(|e| bad(format!("{e}")))?;
            let k: usize = parse(1)?.parse().map_err(|e| bad(format!("{e}")))?;
            let point: u32 = parse(2)?.parse().map_err(|e| bad(format!("{e}")))?;
            let diameter: f64 = parse(3)?.parse().map_err(|e| bad(format!("{e}")))?;
            let reach: f64 = parse(4)?.parse().map_err(|e| bad(format!("{e}")))?;
            if k != last {
                logs.push(CoverLog { replica, diameter, covers: Vec::new() });
                last = k;
            }
            logs.last_mut().expect("pushed above").covers.push(Cover { point, reach });
        }
        if logs.len() != meta.logged_loops {
            return Err(Error::TableQuality(format!("{} logged loops, metadata says {}", logs.len(), meta.logged_loops)));
        }
        Ok(Self::from_parts(meta, logs))
    }

    /// Reload when the stored table was built from the same spec, build and save otherwise.
    /// A stored table from a different spec is an error rather than being overwritten.
    pub fn build_or_load(dir: &Path, spec: TableSpec) -> Result<Self> {
        if dir.join("table_meta.json").exists() {
            let t = Self::load(dir)?;
            if t.meta.spec != spec {
                return Err(Error::StaleTable(format!("{} was built from a different spec", dir.display())));
            }
            return Ok(t);
        }
        let t = Self::build(spec)?;
        t.save(dir)?;
        Ok(t)
    }

    /// Split into `k` tables over disjoint replica subsets (replica r goes to batch r mod k),
    /// for batch-means errors of non-linear functionals of the masses.
    pub fn batches(&self, k: usize) -> Result<Vec<AlphaTable>> {
        let n_rep = self.meta.spec.budget.n_rep;
        if k == 0 || k > n_rep {
            return Err(Error::Parameter(format!("cannot split {n_rep} replicas into {k} batches")));
        }
        let mut logs: Vec<Vec<CoverLog>> = vec![Vec::new(); k];
        for l in &self.logs {
            let r = l.replica as usize;
            logs[r % k].push(CoverLog { replica: (r / k) as u32, ..l.clone() });
        }
        Ok(logs
            .into_iter()
            .enumerate()
            .map(|(g, logs)| {
                let mut meta = self.meta.clone();
                meta.spec.budget.n_rep = (n_rep - g).div_ceil(k);
                meta.logged_loops = logs.len();
                Self::from_parts(meta, logs)
            })
            .collect())
    }

    /// Identity of contents (ignores the creation timestamp).
    pub fn same_contents(&self, other: &AlphaTable) -> bool {
        self.meta.spec == other.meta.spec && self.logs == other.logs
    }
}
