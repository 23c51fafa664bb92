use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loopsoup-lab"))
}

#[test]
fn list_names_every_experiment() {
    let out = lab().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in loopsoup::harness::ExperimentId::ALL {
        assert!(text.contains(id.name()), "{id}");
    }
}

#[test]
fn experiment_respects_out_and_exits_on_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab().args(["npoint", "--seed", "5"]).env("LOOPSOUP_OUT", dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("criterion 15"));
    assert!(dir.path().join("npoint/manifest.json").exists());
}

#[test]
fn mismatched_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let cfg = loopsoup::harness::ExperimentConfig::new(loopsoup::harness::ExperimentId::Gauss, 1);
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = lab().arg("npoint").arg("--config").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn alpha_build_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let spec = loopsoup::loopmeasure::TableSpec {
        domain: loopsoup::Domain::unit_disk(),
        points: vec![loopsoup::Point::new(0.0, 0.0)],
        delta_list: vec![0.2],
        cutoffs: loopsoup::loopmeasure::CutoffConfig::new(0.1).with_steps(512),
        budget: loopsoup::loopmeasure::Budget { lambda: 20.0, n_rep: 4, seed: 1 },
    };
    let sp = dir.path().join("spec.json");
    std::fs::write(&sp, serde_json::to_string(&spec).unwrap()).unwrap();
    let table = dir.path().join("table");
    let out = lab().args(["alpha", "build", "--spec"]).arg(&sp).arg("--table").arg(&table).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = lab().args(["alpha", "check", "--table"]).arg(&table).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("point,delta,ball,alpha,ball_half,holds"));
    assert_eq!(text.lines().count(), 2);
}
