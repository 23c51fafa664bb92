//! Experiment orchestration: configuration, seeding, persistence and pass/fail reporting.
//!
//! Every experiment writes long-format CSV data and a JSON manifest into
//! `<out>/<experiment>/`. Stochastic outputs depend only on the configuration: every random
//! draw comes from a keyed stream `(seed, replica, tag)`.

mod experiments;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};

pub const CONFIG_SCHEMA: u32 = 1;
/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LOOPSOUP_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Alpha,
    Onepoint,
    Twopoint,
    Npoint,
    Conformal,
    Gauss,
    ThetaBoundary,
    BoundaryConstants,
    Chaos,
    Convergence,
    Isometry,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::Alpha,
        ExperimentId::Onepoint,
        ExperimentId::Twopoint,
        ExperimentId::Npoint,
        ExperimentId::Conformal,
        ExperimentId::Gauss,
        ExperimentId::ThetaBoundary,
        ExperimentId::BoundaryConstants,
        ExperimentId::Chaos,
        ExperimentId::Convergence,
        ExperimentId::Isometry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Alpha => "alpha",
            ExperimentId::Onepoint => "onepoint",
            ExperimentId::Twopoint => "twopoint",
            ExperimentId::Npoint => "npoint",
            ExperimentId::Conformal => "conformal",
            ExperimentId::Gauss => "gauss",
            ExperimentId::ThetaBoundary => "theta-boundary",
            ExperimentId::BoundaryConstants => "boundary-constants",
            ExperimentId::Chaos => "chaos",
            ExperimentId::Convergence => "convergence",
            ExperimentId::Isometry => "isometry",
        }
    }

    /// Acceptance criteria evaluated by this experiment; each criterion has exactly one home.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            ExperimentId::Alpha => &[1, 4],
            ExperimentId::Onepoint => &[2, 3],
            ExperimentId::Twopoint => &[5],
            ExperimentId::Npoint => &[15],
            ExperimentId::Conformal => &[6],
            ExperimentId::Gauss => &[7],
            ExperimentId::ThetaBoundary => &[8],
            ExperimentId::BoundaryConstants => &[9],
            ExperimentId::Chaos => &[10, 11, 13],
            ExperimentId::Convergence => &[14],
            ExperimentId::Isometry => &[12],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldKnobs {
    pub lambda: Option<f64>,
    pub betas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussKnobs {
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffKnobs {
    pub delta: Option<f64>,
    pub r: Option<f64>,
    pub n_steps: Option<usize>,
    pub diameter_cells: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridKnobs {
    /// Query points (where the experiment uses an explicit list).
    pub points: Option<Vec<Point>>,
    /// Quadrature cells across the domain's bounding box.
    pub cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaKnobs {
    pub n_rep: Option<usize>,
    pub table_lambda: Option<f64>,
    pub table_rep: Option<usize>,
    /// Multiplier on every default replica count.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ReplicaKnobs {
    fn default() -> Self {
        ReplicaKnobs { n_rep: None, table_lambda: None, table_rep: None, scale: 1.0 }
    }
}

fn unit_disk() -> Domain {
    Domain::unit_disk()
}

/// A single experiment run. Unset knobs take the experiment's acceptance defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub seed: u64,
    #[serde(default = "unit_disk")]
    pub domain: Domain,
    #[serde(default)]
    pub field: FieldKnobs,
    #[serde(default)]
    pub gauss: GaussKnobs,
    #[serde(default)]
    pub cutoffs: CutoffKnobs,
    #[serde(default)]
    pub grid: GridKnobs,
    #[serde(default)]
    pub replicas: ReplicaKnobs,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId, seed: u64) -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA,
            experiment,
            seed,
            domain: Domain::unit_disk(),
            field: FieldKnobs::default(),
            gauss: GaussKnobs::default(),
            cutoffs: CutoffKnobs::default(),
            grid: GridKnobs::default(),
            replicas: ReplicaKnobs::default(),
            out_dir: None,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.replicas.scale = scale;
        self
    }

    pub fn with_out(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "config schema version {} (expected {CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        if !(self.replicas.scale > 0.0) || !self.replicas.scale.is_finite() {
            return Err(Error::Config(format!("replica scale {} must be positive", self.replicas.scale)));
        }
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::Config(format!("{name} = {x} must be positive"))),
            _ => Ok(()),
        };
        positive("field.lambda", self.field.lambda)?;
        positive("cutoffs.delta", self.cutoffs.delta)?;
        positive("cutoffs.r", self.cutoffs.r)?;
        positive("cutoffs.diameter_cells", self.cutoffs.diameter_cells)?;
        positive("replicas.table_lambda", self.replicas.table_lambda)?;
        if let Some(xi) = self.gauss.xi {
            if !(xi >= 0.0) {
                return Err(Error::Config(format!("gauss.xi = {xi} must be non-negative")));
            }
        }
        if let Some(b) = &self.field.betas {
            if b.is_empty() || b.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("field.betas must be a non-empty list of finite numbers".into()));
            }
        }
        for (name, v) in [("replicas.n_rep", self.replicas.n_rep), ("replicas.table_rep", self.replicas.table_rep)] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Some(n) = self.cutoffs.n_steps {
            if !n.is_power_of_two() || !(crate::loops::MIN_STEPS..=crate::loops::MAX_STEPS).contains(&n) {
                return Err(Error::Config(format!(
                    "cutoffs.n_steps = {n} must be a power of two in [{}, {}]",
                    crate::loops::MIN_STEPS,
                    crate::loops::MAX_STEPS
                )));
            }
        }
        if let Some(pts) = &self.grid.points {
            for z in pts {
                self.domain.boundary_distance(*z)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        format!("{:x}", h.finalize())
    }

    pub fn out_root(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(default_out_root)
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// One measured quantity of a criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub label: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub target: Option<f64>,
}

impl Measure {
    pub fn new(label: impl Into<String>, value: f64) -> Self {
        Measure { label: label.into(), value, stderr: None, target: None }
    }

    pub fn est(label: impl Into<String>, e: &crate::Estimate) -> Self {
        Measure { label: label.into(), value: e.value, stderr: Some(e.stderr), target: None }
    }

    /// A yes/no condition, recorded as 1 or 0 against target 1.
    pub fn flag(label: impl Into<String>, ok: bool) -> Self {
        Measure::new(label, ok as u8 as f64).target(1.0)
    }

    pub fn target(mut self, t: f64) -> Self {
        self.target = Some(t);
        self
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub tolerance: String,
    pub measured: Vec<Measure>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!("criterion {:>2} {:<44} {}", self.id, self.name, if self.pass { "pass" } else { "fail" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub config: ExperimentConfig,
    pub criteria: Vec<CriterionResult>,
    /// Data files, relative to the experiment directory.
    pub files: Vec<String>,
    pub passed: bool,
}

/// Run one experiment; data and `manifest.json` go to `<out>/<experiment>/`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let started = chrono::Utc::now().to_rfc3339();
    let dir = config.out_root().join(config.experiment.name());
    fs::create_dir_all(&dir)?;
    let mut ctx = experiments::Ctx::new(config, dir.clone());
    let criteria = experiments::run(&mut ctx)?;
    let passed = criteria.iter().all(|c| c.pass);
    let manifest = RunManifest {
        experiment: config.experiment,
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        config: config.clone(),
        criteria,
        files: ctx.files,
        passed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Configuration of a full acceptance run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
    /// Restrict to these experiments (all by default).
    #[serde(default)]
    pub only: Option<Vec<ExperimentId>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn new(seed: u64) -> Self {
        SuiteConfig { schema_version: CONFIG_SCHEMA, seed, scale: 1.0, only: None, out_dir: None }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: SuiteConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!("config schema version {} (expected {CONFIG_SCHEMA})", c.schema_version)));
        }
        Ok(c)
    }

    pub fn experiments(&self) -> Vec<ExperimentId> {
        self.only.clone().unwrap_or_else(|| ExperimentId::ALL.to_vec())
    }

    pub fn config_for(&self, id: ExperimentId) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(id, self.seed).with_scale(self.scale);
        c.out_dir = self.out_dir.clone();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub runs: Vec<RunManifest>,
    /// Every evaluated criterion exactly once, by id.
    pub criteria: Vec<CriterionResult>,
    pub passed: bool,
}

/// Run the acceptance experiments in sequence and collect their criteria.
pub fn run_suite(suite: &SuiteConfig, mut on_run: impl FnMut(&RunManifest)) -> Result<SuiteManifest> {
    let mut runs = Vec::new();
    let mut by_id: BTreeMap<u8, CriterionResult> = BTreeMap::new();
    for id in suite.experiments() {
        let m = run_experiment(&suite.config_for(id))?;
        for c in &m.criteria {
            if by_id.insert(c.id, c.clone()).is_some() {
                return Err(Error::Config(format!("criterion {} reported twice", c.id)));
            }
        }
        on_run(&m);
        runs.push(m);
    }
    let criteria: Vec<CriterionResult> = by_id.into_values().collect();
    let passed = criteria.iter().all(|c| c.pass);
    let manifest = SuiteManifest { runs, criteria, passed };
    let root = suite.out_dir.clone().unwrap_or_else(default_out_root);
    fs::create_dir_all(&root)?;
    fs::write(root.join("suite_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_and_criteria_are_unique() {
        let mut seen = Vec::new();
        for id in ExperimentId::ALL {
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.name()));
            seen.extend_from_slice(id.criteria());
        }
        seen.sort();
        assert_eq!(seen, (1..=15).collect::<Vec<u8>>());
        assert!("nope".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let mut c = ExperimentConfig::new(ExperimentId::Onepoint, 42).with_scale(0.5);
        c.field.betas = Some(vec![0.0]);
        c.cutoffs.n_steps = Some(1024);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut moved = c.clone().with_out("/tmp/elsewhere");
        assert_eq!(moved.hash(), c.hash());
        moved.seed = 43;
        assert_ne!(moved.hash(), c.hash());

        let minimal = r#"{"schema_version": 1, "experiment": "alpha", "seed": 7}"#;
        let m = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(m.domain, Domain::unit_disk());
        assert_eq!(m.replicas.scale, 1.0);

        for bad in [
            r#"{"schema_version": 2, "experiment": "alpha", "seed": 7}"#,
            r#"{"schema_version": 1, "experiment": "beta", "seed": 7}"#,
            r#"{"schema_version": 1, "experiment": "alpha", "seed": 7, "field": {"lambda": -1}}"#,
            r#"{"schema_version": 1, "experiment": "alpha", "seed": 7, "cutoffs": {"n_steps": 1000}}"#,
            r#"{"schema_version": 1, "experiment": "alpha", "seed": 7, "grid": {"points": [[2.0, 0.0]]}}"#,
            r#"{"schema_version": 1, "experiment": "alpha", "seed": 7, "typo": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }
}
