//! End-to-end runs of the `shearstab` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn shearstab(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shearstab"));
    cmd.args(args).env_remove("SHEARSTAB_CACHE_DIR");
    if let Some(dir) = cache {
        cmd.env("SHEARSTAB_CACHE_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = shearstab(&["--help"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["profile-check", "scan", "lin-evolve", "nonlinear", "threshold", "selftest", "SHEARSTAB_CACHE_DIR"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn negative_viscosity_exits_with_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = shearstab(
        &["lin-evolve", "--profile", "couette", "--nu", "-1", "--out", out_dir.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu must be positive"));
    assert!(!out_dir.exists());
}

#[test]
fn malformed_config_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "profile = \"couette\"\nnu = [\n").unwrap();
    let out = shearstab(&["lin-evolve", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.toml:"), "{err}");
}

#[test]
fn lin_evolve_writes_trajectory_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"profile": "sinus-concave", "profile_param": 0.1, "nu": 1e-2, "horizon": 5}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = shearstab(
        &["lin-evolve", "--config", cfg.to_str().unwrap(), "--nodes", "33", "--out", out_dir.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,norm_om_L2,norm_u_inf,weighted_om\n"));
    let summary = json(&out_dir.join("summary.json"));
    assert_eq!(summary["command"], "lin-evolve");
    assert_eq!(summary["pass"], true);
    let manifest = json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["config"]["nodes"], 33);
    assert_eq!(manifest["config"]["profile"]["id"], "sinus-concave(0.1)");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn cached_scan_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = |out: &Path| {
        vec![
            "scan".to_string(),
            "--profile=couette".into(),
            "--nu-list=1e-3,1e-4".into(),
            "--k-list=1".into(),
            "--bounds=noslip_FL2,coeff_L2".into(),
            "--nodes=65".into(),
            format!("--out={}", out.display()),
        ]
    };
    let (first, second) = (dir.path().join("a"), dir.path().join("b"));
    let run = |out: &Path| {
        let a = args(out);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        shearstab(&refs, Some(&cache))
    };
    let a = run(&first);
    assert!(a.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&second);
    assert_eq!(a.status.code(), b.status.code());
    let csv = std::fs::read_to_string(first.join("scan.csv")).unwrap();
    assert!(csv.starts_with("nu,k,bound_id,sup_ratio,argmax_lambda,n_grid\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    for file in ["scan.csv", "fits.json", "summary.json"] {
        assert_eq!(
            std::fs::read(first.join(file)).unwrap(),
            std::fs::read(second.join(file)).unwrap(),
            "{file} differs"
        );
    }
    let (ma, mb) = (json(&first.join("manifest.json")), json(&second.join("manifest.json")));
    assert_eq!(ma["cache"], "miss");
    assert_eq!(mb["cache"], "hit");
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn nonlinear_run_is_reproducible_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = shearstab(
            &[
                "nonlinear",
                "--profile=couette",
                "--nu=1e-2",
                "--horizon=2",
                "--nodes=33",
                "--k-max=9",
                "--checkpoint-every=5",
                &format!("--out={}", out.display()),
            ],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["trajectory.csv", "ledger.csv", "final.ckpt", "summary.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    assert!(a.join("step-00000005.ckpt").exists());
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn selftest_passes() {
    let out = shearstab(&["selftest"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
