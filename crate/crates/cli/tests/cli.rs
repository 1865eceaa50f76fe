use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn splitfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitfilter"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn short_run(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["run", "--preset", "linear-case1", "--steps", "2", "--epochs", "100", "--out", out];
    args.extend_from_slice(extra);
    splitfilter(&args)
}

#[test]
fn short_run_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = short_run(&out, &["--oracle", "kalman", "--plots"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), out.display().to_string());
    for f in [
        "config.toml",
        "meta.toml",
        "observations.csv",
        "diagnostics.csv",
        "posterior/step_001.csv",
        "posterior/step_002.csv",
        "prior/step_001.csv",
        "training/step_001.csv",
        "oracle_kalman/diagnostics.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let diagnostics = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diagnostics.lines().count(), 3);
    let plots: Vec<_> = fs::read_dir(out.join("plots")).unwrap().collect();
    assert!(!plots.is_empty());
}

#[test]
fn comparing_a_run_with_itself_gives_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(short_run(&out, &[]).status.success());
    let o = splitfilter(&["compare", out.to_str().unwrap(), out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,l2,mean_a,mean_b,abs_mean_diff,abs_std_diff"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        for i in [1, 4, 5] {
            assert_eq!(r[i].parse::<f64>().unwrap(), 0.0, "{r:?}");
        }
    }

    let criteria = dir.path().join("criteria.toml");
    fs::write(&criteria, "max_l2 = 0.0\nmax_abs_mean_diff = 0.0\n").unwrap();
    let o = splitfilter(&["compare", out.to_str().unwrap(), out.to_str().unwrap(), "--criteria", criteria.to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn unknown_config_key_fails_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "preset = \"linear-case1\"\nseed = 3\nlearning_rat = 0.1\n").unwrap();
    let o = splitfilter(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(!dir.path().join("x").exists());
}

#[test]
fn show_config_round_trips_through_run() {
    let o = splitfilter(&["show-config", "benes"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 71"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("benes.toml");
    fs::write(&path, &text).unwrap();
    let out = dir.path().join("run");
    let o = splitfilter(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--steps",
        "1",
        "--epochs",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snapshot = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 71"));
}

#[test]
fn unknown_preset_is_an_error() {
    let o = splitfilter(&["show-config", "no-such-preset"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-preset"));
}

#[test]
fn standalone_oracle_writes_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = splitfilter(&["oracle", "--preset", "linear-case1", "--steps", "3", "--oracle", "grid", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("posterior/step_003.csv").is_file());
    assert_eq!(fs::read_to_string(out.join("diagnostics.csv")).unwrap().lines().count(), 4);
}
