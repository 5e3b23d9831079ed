use std::path::Path;
use std::process::{Command, Output};

use poseval_core::harness::output::{ReportFile, LEDGER_FILE, RECALL_FILE, REPORT_FILE, SWEEP_FILE, VISIBILITY_FILE};

fn poseval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poseval"))
        .args(args)
        .env_remove("POSEVAL_DATASET")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = poseval(&["fixturegen", "--out", s(dir.path()), "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn report(dir: &Path) -> ReportFile {
    serde_json::from_slice(&std::fs::read(dir.join(REPORT_FILE)).unwrap()).unwrap()
}

fn eval(fx: &Path, out: &Path, extra: &[&str]) -> Output {
    let est = fx.join("estimates_exact.csv");
    let mut args = vec!["eval", "--dataset", s(fx), "--estimates", s(&est), "--out", s(out)];
    args.extend_from_slice(extra);
    poseval(&args)
}

#[test]
fn exact_estimates_score_full_recall() {
    let fx = fixture();
    let out = tempfile::tempdir().unwrap();
    let res = eval(fx.path(), out.path(), &[]);
    assert_eq!(res.status.code(), Some(0));
    let r = report(out.path());
    assert_eq!(r.report.overall, Some(1.0));
    assert_eq!((r.tau_mm, r.theta, r.delta_mm), (20.0, 0.3, 15.0));
    for f in [LEDGER_FILE, RECALL_FILE, VISIBILITY_FILE, "run.log"] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn explicit_targets_file_gives_same_report() {
    let fx = fixture();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(eval(fx.path(), a.path(), &[]).status.success());
    let targets = fx.path().join("targets.csv");
    assert!(eval(fx.path(), b.path(), &["--targets", s(&targets)]).status.success());
    assert_eq!(report(a.path()), report(b.path()));
}

#[test]
fn missing_estimates_file_is_an_io_error_naming_the_path() {
    let fx = fixture();
    let out = tempfile::tempdir().unwrap();
    let missing = fx.path().join("no_such_estimates.csv");
    let res = poseval(&["eval", "--dataset", s(fx.path()), "--estimates", s(&missing), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no_such_estimates.csv"));
}

#[test]
fn zero_theta_is_a_validation_error() {
    let fx = fixture();
    let out = tempfile::tempdir().unwrap();
    let res = eval(fx.path(), out.path(), &["--theta", "0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("theta"));
    assert!(!out.path().join(REPORT_FILE).exists());
}

#[test]
fn malformed_estimates_are_a_validation_error() {
    let fx = fixture();
    let out = tempfile::tempdir().unwrap();
    let bad = fx.path().join("bad.csv");
    std::fs::write(&bad, "[alpha]\n1,0,1,0.5,1 0 0 0 1 0 0 0 1,0 0 nan,0\n").unwrap();
    let res = poseval(&["eval", "--dataset", s(fx.path()), "--estimates", s(&bad), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
}

#[test]
fn dataset_root_from_environment() {
    let fx = fixture();
    let res = Command::new(env!("CARGO_BIN_EXE_poseval"))
        .args(["validate"])
        .env("POSEVAL_DATASET", fx.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn help_states_units_and_defaults() {
    let res = poseval(&["eval", "--help"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    for needle in ["millimeters [default: 20]", "(0, 1] [default: 0.3]", "millimeters [default: 15]", "POSEVAL_DATASET"] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
}

#[test]
fn validate_lists_every_finding() {
    let fx = fixture();
    assert_eq!(poseval(&["validate", "--dataset", s(fx.path())]).status.code(), Some(0));

    std::fs::remove_file(fx.path().join("alpha/models/obj_000003.ply")).unwrap();
    let gt = fx.path().join("alpha/test/000001/scene_gt.json");
    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(&gt).unwrap()).unwrap();
    json["2"][1]["cam_R_m2c"][4] = serde_json::json!(0.5);
    std::fs::write(&gt, json.to_string()).unwrap();

    let res = poseval(&["validate", "--dataset", s(fx.path())]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("obj_000003.ply"), "{err}");
    assert!(err.contains("scene 1 image 2 instance 1"), "{err}");
}

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let fx = fixture();
    let runs: Vec<_> = ["1", "4", "1"]
        .iter()
        .map(|w| {
            let out = tempfile::tempdir().unwrap();
            assert!(eval(fx.path(), out.path(), &["--workers", w]).status.success());
            out
        })
        .collect();
    for f in [LEDGER_FILE, RECALL_FILE, VISIBILITY_FILE, REPORT_FILE] {
        let first = std::fs::read(runs[0].path().join(f)).unwrap();
        for r in &runs[1..] {
            assert_eq!(first, std::fs::read(r.path().join(f)).unwrap(), "{f}");
        }
    }
}

fn sweep_rows(dir: &Path) -> Vec<(f64, f64, Option<f64>)> {
    let text = std::fs::read_to_string(dir.join(SWEEP_FILE)).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().ok())
        })
        .collect()
}

#[test]
fn sweep_grid_matches_independent_eval_runs() {
    let fx = fixture();
    // Perturbed estimates so that recall varies over the grid.
    let est_path = fx.path().join("estimates_exact.csv");
    let text = std::fs::read_to_string(&est_path).unwrap();
    let shifted: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() == 7 && f[0] != "scene_id" {
                let t: Vec<f64> = f[5].split(' ').map(|v| v.parse().unwrap()).collect();
                let dz = [0.0, 8.0, 16.0, 30.0][i % 4];
                let t = format!("{:e} {:e} {:e}", t[0] + dz * 0.5, t[1], t[2] + dz);
                format!("{},{},{},{},{},{},{}\n", f[0], f[1], f[2], f[3], f[4], t, f[6])
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let est = fx.path().join("shifted.csv");
    std::fs::write(&est, shifted).unwrap();

    let out = tempfile::tempdir().unwrap();
    let res = poseval(&[
        "sweep", "--dataset", s(fx.path()), "--estimates", s(&est), "--out", s(out.path()),
        "--taus", "10,20,40", "--thetas", "0.1,0.3,0.6",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = sweep_rows(out.path());
    assert_eq!(rows.len(), 9);
    for (tau, theta, overall) in &rows {
        let o = tempfile::tempdir().unwrap();
        let (t, h) = (tau.to_string(), theta.to_string());
        let res = poseval(&["eval", "--dataset", s(fx.path()), "--estimates", s(&est), "--out", s(o.path()), "--tau", &t, "--theta", &h]);
        assert!(res.status.success());
        assert_eq!(report(o.path()).report.overall, *overall, "tau {tau} theta {theta}");
    }
    for chunk in rows.chunks(3) {
        assert!(chunk.windows(2).all(|w| w[0].2 <= w[1].2), "{chunk:?}");
    }
    let distinct: std::collections::BTreeSet<String> = rows.iter().map(|r| format!("{:?}", r.2)).collect();
    assert!(distinct.len() > 2, "grid is flat: {rows:?}");
}
