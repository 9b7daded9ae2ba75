use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nashseek(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nashseek")).args(args).output().unwrap()
}

fn small(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["--m", "5", "--markets", "3", "--out-degree", "2", "--preset", "static-ring", "--preset", "time-varying-random"];
    args.extend_from_slice(&["--seed", "3", "--out-dir", out]);
    args.extend_from_slice(extra);
    nashseek(&args)
}

#[test]
fn small_run_writes_bundle_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = small(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["static-ring_rep0.csv", "time-varying-random_rep0.csv", "summary.txt", "metadata.toml"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("static-ring") && stdout.contains("time-varying-random"));
}

#[test]
fn replay_reproduces_csvs() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    assert!(small(first.path(), &[]).status.success());
    let meta = first.path().join("metadata.toml");
    let out = nashseek(&["--replay", meta.to_str().unwrap(), "--out-dir", second.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["static-ring_rep0.csv", "time-varying-random_rep0.csv"] {
        assert_eq!(fs::read(first.path().join(f)).unwrap(), fs::read(second.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn emit_plots_writes_svgs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small(dir.path(), &["--emit-plots"]).status.success());
    for f in ["err_inf.svg", "dz_inf.svg"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("<svg") || text.starts_with("<?xml"), "{f}");
    }
}

#[test]
fn budget_exhaustion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = small(dir.path(), &["--max-iter", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_custom_graph() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("ring.txt");
    fs::write(&edges, "0 0 1\n0 1 2\n0 2 3\n0 3 0\n").unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, format!("presets = [\"custom\"]\nm = 4\nmarkets = 2\ngraph_file = {:?}\n", edges.to_str().unwrap())).unwrap();
    let out_dir = dir.path().join("out");
    let out = nashseek(&["--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("custom_rep0.csv").is_file());
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(nashseek(&["--preset", "hypercube", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(nashseek(&["--preset", "custom", "--m", "4", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(nashseek(&["--alpha", "-1", "--out-dir", d]).status.code(), Some(2));
}
