//! Acceptance suite: every experiment at its default settings, each criterion re-judged from the
//! recorded measurements against the tolerances pinned below. Runs without the libtest harness
//! so the per-criterion lines always reach the output.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use loopsoup::harness::{run_experiment, CriterionResult, ExperimentConfig, ExperimentId, Measure};

const SEED: u64 = 20_261_014;

#[derive(Clone, Copy, Debug)]
enum Rule {
    /// |value − target| ≤ k·stderr.
    Sigma(f64),
    /// As `Sigma`, and additionally stderr ≤ cap.
    SigmaCap(f64, f64),
    /// value < x.
    Below(f64),
    /// value ≤ x.
    AtMost(f64),
    /// value > x.
    Above(f64),
    /// value == target exactly.
    Exact,
    /// |value/target − 1| < x.
    Relative(f64),
}

impl Rule {
    fn holds(self, m: &Measure) -> bool {
        let v = m.value;
        let t = m.target;
        let se = m.stderr;
        match self {
            Rule::Sigma(k) => matches!((t, se), (Some(t), Some(s)) if (v - t).abs() <= k * s),
            Rule::SigmaCap(k, cap) => matches!((t, se), (Some(t), Some(s)) if (v - t).abs() <= k * s && s <= cap),
            Rule::Below(x) => v < x,
            Rule::AtMost(x) => v <= x,
            Rule::Above(x) => v > x,
            Rule::Exact => t == Some(v),
            Rule::Relative(x) => matches!(t, Some(t) if (v / t - 1.0).abs() < x),
        }
    }
}

/// Label prefix → rule, per criterion. Every measure with a target must match a rule.
fn rules(id: u8) -> Vec<(&'static str, Rule)> {
    use Rule::*;
    match id {
        1 => vec![("alpha[", SigmaCap(3.0, 0.01))],
        2 => vec![("E V(", Sigma(3.0))],
        3 => vec![("mean N", Sigma(3.0)), ("var N", Sigma(3.0)), ("gof p", Above(0.01))],
        4 => vec![("entries holding", Exact)],
        5 => vec![("pair ", Sigma(3.0))],
        6 => vec![("mobius ratio", Relative(0.05)), ("identity ratio", Exact)],
        7 => vec![("cov[", Sigma(3.0)), ("E W̃", Sigma(3.0)), ("var increment", Sigma(3.0))],
        8 => vec![
            ("max relative deviation", AtMost(1e-12)),
            ("max |z|", AtMost(3.0)),
            ("e^(ξ²Θ/2) strictly", Exact),
            ("largest upward", AtMost(3.0)),
        ],
        9 => vec![("C(r=", Sigma(3.0)), ("C(r) strictly", Exact)],
        10 => vec![
            ("q=1 relative gap decreasing", Exact),
            ("q=2 relative gap decreasing", Exact),
            ("q=1 relative gap at", Below(0.01)),
            ("q=2 relative gap at", Below(0.01)),
            ("s-combination λ=1e2", Relative(2e-3)),
            ("s-combination λ=1e4", Relative(1e-3)),
        ],
        11 => vec![("tail(5)/tail(1)", Below(0.05))],
        12 => vec![("Var", Sigma(3.0)), ("gap non-increasing", Exact), ("I1 mean", Sigma(3.0)), ("I1 variance", Sigma(3.0))],
        13 => vec![("max abs deviation", AtMost(1e-12))],
        14 => vec![("sim mean", Sigma(3.0)), ("analytic gap strictly", Exact), ("analytic gap λ=10000", Below(0.01))],
        15 => vec![("identical bytes", Exact), ("n=2 vs two-point", Below(1e-9))],
        _ => vec![],
    }
}

/// Independent verdict, and the measures that failed it.
fn judge(c: &CriterionResult) -> (bool, Vec<String>) {
    let rules = rules(c.id);
    let mut bad = Vec::new();
    let mut matched = 0;
    for m in &c.measured {
        match rules.iter().find(|(p, _)| m.label.starts_with(p)) {
            Some((_, r)) => {
                matched += 1;
                if !r.holds(m) {
                    bad.push(format!("{} = {} (stderr {:?}, target {:?}) violates {:?}", m.label, m.value, m.stderr, m.target, r));
                }
            }
            None if m.target.is_some() => bad.push(format!("{}: no pinned rule", m.label)),
            None => {}
        }
    }
    if matched == 0 {
        bad.push("no measurement matched a pinned rule".into());
    }
    (bad.is_empty(), bad)
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().expect("temporary output directory");
    let mut seen: BTreeMap<u8, CriterionResult> = BTreeMap::new();
    let mut ok = true;
    for id in ExperimentId::ALL {
        let cfg = ExperimentConfig::new(id, SEED).with_out(out.path());
        let t = Instant::now();
        let manifest = match run_experiment(&cfg) {
            Ok(m) => m,
            Err(e) => {
                println!("experiment {id}: error: {e}");
                for &c in id.criteria() {
                    println!("criterion {c:>2}: fail (experiment error)");
                }
                ok = false;
                continue;
            }
        };
        eprintln!("experiment {id} finished in {:.1}s", t.elapsed().as_secs_f64());
        for c in manifest.criteria {
            let (pass, bad) = judge(&c);
            let agree = pass == c.pass;
            println!("{} | {}", c.line().replace(if c.pass { "pass" } else { "fail" }, if pass && agree { "pass" } else { "fail" }), c.tolerance);
            for b in &bad {
                println!("    {b}");
            }
            if !agree {
                println!("    experiment verdict {} disagrees with the pinned re-check", c.pass);
            }
            ok &= pass && agree;
            if seen.insert(c.id, c).is_some() {
                println!("criterion reported twice");
                ok = false;
            }
        }
    }
    let ids: Vec<u8> = seen.keys().copied().collect();
    if ids != (1..=15).collect::<Vec<u8>>() {
        println!("criteria covered: {ids:?} (expected 1..=15)");
        ok = false;
    }
    println!("acceptance: {}", if ok { "pass" } else { "fail" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
