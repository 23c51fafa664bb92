use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loopsoup::harness::{run_experiment, run_suite, ExperimentConfig, ExperimentId, SuiteConfig, OUT_ENV};
use loopsoup::loopmeasure::{AlphaTable, TableSpec};
use loopsoup::Result;

#[derive(Parser)]
#[command(name = "loopsoup-lab", about = "Loop soup layering-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier on the default replica counts.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AlphaVerb {
    /// Build an α table from a JSON table spec and save it.
    Build {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        table: PathBuf,
    },
    /// Run the sandwich check on a saved table.
    Check {
        #[arg(long)]
        table: PathBuf,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Run every acceptance experiment; exit status 0 iff all criteria pass.
    Suite(RunArgs),
    /// List experiments and the criteria they evaluate.
    List,
    Alpha {
        #[command(subcommand)]
        verb: Option<AlphaVerb>,
        #[command(flatten)]
        run: RunArgs,
    },
    Onepoint(RunArgs),
    Twopoint(RunArgs),
    Npoint(RunArgs),
    Conformal(RunArgs),
    Gauss(RunArgs),
    ThetaBoundary(RunArgs),
    BoundaryConstants(RunArgs),
    Chaos(RunArgs),
    Convergence(RunArgs),
    Isometry(RunArgs),
}

fn experiment(id: ExperimentId, a: RunArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(id, 1),
    };
    if cfg.experiment != id {
        return Err(loopsoup::Error::Config(format!("config is for {}, not {id}", cfg.experiment)));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.scale {
        cfg.replicas.scale = s;
    }
    if let Some(o) = a.out {
        cfg.out_dir = Some(o);
    }
    cfg.validate()?;
    let m = run_experiment(&cfg)?;
    for c in &m.criteria {
        println!("{}", c.line());
    }
    println!("outputs in {}", cfg.out_root().join(id.name()).display());
    Ok(m.passed)
}

fn suite(a: RunArgs) -> Result<bool> {
    let mut s = match &a.config {
        Some(p) => SuiteConfig::load(p)?,
        None => SuiteConfig::new(1),
    };
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(sc) = a.scale {
        s.scale = sc;
    }
    if let Some(o) = a.out {
        s.out_dir = Some(o);
    }
    let m = run_suite(&s, |r| eprintln!("finished {} ({})", r.experiment, if r.passed { "pass" } else { "fail" }))?;
    for c in &m.criteria {
        println!("{}", c.line());
    }
    Ok(m.passed)
}

fn alpha(verb: Option<AlphaVerb>, run: RunArgs) -> Result<bool> {
    match verb {
        None => experiment(ExperimentId::Alpha, run),
        Some(AlphaVerb::Build { spec, table }) => {
            let spec: TableSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
            let t = AlphaTable::build(spec)?;
            t.save(&table)?;
            println!("{} loops logged to {}", t.meta.logged_loops, table.display());
            Ok(true)
        }
        Some(AlphaVerb::Check { table }) => {
            let t = AlphaTable::load(&table)?;
            println!("point,delta,ball,alpha,ball_half,holds");
            let rows = t.check_sandwich()?;
            for r in &rows {
                println!("{},{},{},{},{},{}", r.point, r.delta, r.ball.value, r.alpha.value, r.ball_half.value, r.holds);
            }
            Ok(rows.iter().all(|r| r.holds))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Suite(a) => suite(a),
        Command::List => {
            for id in ExperimentId::ALL {
                println!("{:<20} {:?}", id.name(), id.criteria());
            }
            Ok(true)
        }
        Command::Alpha { verb, run } => alpha(verb, run),
        Command::Onepoint(a) => experiment(ExperimentId::Onepoint, a),
        Command::Twopoint(a) => experiment(ExperimentId::Twopoint, a),
        Command::Npoint(a) => experiment(ExperimentId::Npoint, a),
        Command::Conformal(a) => experiment(ExperimentId::Conformal, a),
        Command::Gauss(a) => experiment(ExperimentId::Gauss, a),
        Command::ThetaBoundary(a) => experiment(ExperimentId::ThetaBoundary, a),
        Command::BoundaryConstants(a) => experiment(ExperimentId::BoundaryConstants, a),
        Command::Chaos(a) => experiment(ExperimentId::Chaos, a),
        Command::Convergence(a) => experiment(ExperimentId::Convergence, a),
        Command::Isometry(a) => experiment(ExperimentId::Isometry, a),
    };
    match out {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
