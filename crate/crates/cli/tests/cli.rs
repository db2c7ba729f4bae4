use std::fs;
use std::path::Path;
use std::process::Command as Process;

use hilo_cli::{dispatch, latest_dir, Command, RunConfig};

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_hilo"))
}

fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn run(command: Command, out: &Path, extra: &[(&str, &str)]) -> hilo_cli::Outcome {
    let mut f = flags(extra);
    f.push(("out".into(), out.display().to_string()));
    let cfg = RunConfig::load(command, None, &f).unwrap();
    dispatch(&cfg, &mut |_| {}).unwrap()
}

#[test]
fn empty_file_gives_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.conf");
    fs::write(&path, "").unwrap();
    let c = RunConfig::load(Command::Demo, Some(&path), &[]).unwrap();
    assert_eq!((c.params.s, c.params.delta, c.params.sigma), (2.5, 0.25, 1.45));
    assert_eq!(c.n_list, vec![16, 32, 64, 128]);
    assert_eq!((c.constants.rho0, c.constants.h0, c.constants.gamma), (1.0, 1.0, 1.4));
    assert_eq!(c.seed, 0);
}

#[test]
fn bad_config_lines_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, "# comment\ndelta = 1.5\n").unwrap();
    let out = bin().args(["norms", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("delta must lie in (0,1)"), "{err}");
    assert!(err.contains("delta = 1.5"), "{err}");

    fs::write(&path, "sigma = 1.0\n").unwrap();
    let e = RunConfig::load(Command::Norms, Some(&path), &[]).unwrap_err().to_string();
    assert!(e.contains("(1.25, 1.5)") && e.contains("sigma = 1.0"), "{e}");

    fs::write(&path, "bogus = 3\n").unwrap();
    let e = RunConfig::load(Command::Norms, Some(&path), &[]).unwrap_err().to_string();
    assert!(e.contains("bogus"), "{e}");
}

#[test]
fn residual_needs_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["residual", "--n_list", "16,32", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("need >= 4 points for scaling fit"), "{err}");
    assert!(err.contains("\"failed\""), "{err}");
}

#[test]
fn output_layout_and_latest_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(Command::Norms, dir.path(), &[("trials", "4"), ("lab_grid", "16")]);
    assert_eq!(o.dir.parent().unwrap(), dir.path().join("norms"));
    assert_eq!(latest_dir(dir.path(), Command::Norms).unwrap(), o.dir);
    for f in ["config.json", "verdicts.json", "inequalities.json", "packet.json", "packet.csv"] {
        assert!(o.dir.join(f).is_file(), "missing {f}");
    }
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["trials"], 4);
}

#[test]
fn identical_config_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [("trials", "4"), ("lab_grid", "16"), ("seed", "7")];
    let a = run(Command::Norms, &dir.path().join("a"), &extra);
    let b = run(Command::Norms, &dir.path().join("b"), &extra);
    for f in ["packet.csv", "inequalities.json"] {
        assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
    let a = run(Command::Ansatz, &dir.path().join("a"), &[]);
    let b = run(Command::Ansatz, &dir.path().join("b"), &[]);
    assert_eq!(fs::read(a.dir.join("ansatz.csv")).unwrap(), fs::read(b.dir.join("ansatz.csv")).unwrap());
}

#[test]
fn binary_exit_status_follows_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["norms", "--trials", "4", "--lab_grid", "16", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    let failed = text.lines().any(|l| l.starts_with("[FAIL]"));
    assert_eq!(out.status.code(), Some(if failed { 1 } else { 0 }), "{text}");
}

#[test]
fn fit_reproduces_demo_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [("n_list", "16,20,24"), ("t_end", "0.125"), ("snapshots", "16")];
    let demo = run(Command::Demo, dir.path(), &extra);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(demo.dir.join("report.json")).unwrap()).unwrap();
    let refit = run(Command::Fit, dir.path(), &extra);
    let fits: serde_json::Value = serde_json::from_str(&fs::read_to_string(refit.dir.join("fits.json")).unwrap()).unwrap();
    assert_eq!(fits["source"].as_str().unwrap(), demo.dir.to_str().unwrap());
    for key in ["init_norm", "init_diff", "uniform", "gronwall", "packet"] {
        assert_eq!(report["fits"][key], fits["fits"][key], "{key}");
    }
    assert!(!report["fits"]["uniform"].is_null());
    assert_eq!(demo.verdicts, refit.verdicts);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn out_of_range_delta_is_rejected_with_its_line(delta in prop_delta()) {
        let text = format!("s = 2.5\ndelta = {delta}\n");
        let mut c = RunConfig::defaults(Command::Norms);
        let e = c.apply_text(&text).and_then(|_| c.validate()).unwrap_err().to_string();
        proptest::prop_assert!(e.contains(&format!("line 2: `delta = {delta}`")), "{}", e);
    }

    #[test]
    fn flags_override_file_values(a in 0.05f64..0.3, b in 0.05f64..0.3) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, format!("delta = {a}\n")).unwrap();
        let c = RunConfig::load(Command::Norms, Some(&path), &flags(&[("delta", &b.to_string())])).unwrap();
        proptest::prop_assert_eq!(c.params.delta, b);
    }
}

fn prop_delta() -> impl proptest::strategy::Strategy<Value = f64> {
    use proptest::prelude::*;
    prop_oneof![-5.0f64..=0.0, 1.0f64..5.0]
}
