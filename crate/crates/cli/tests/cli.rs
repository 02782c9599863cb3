use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn milstein(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milstein"))
        .args(args)
        .env("MILSTEIN_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn files_with(dir: &Path, suffix: &str) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_verb_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(&["frobnicate", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_seed_and_bad_model_report_all_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(&["rate", "--model", "nope", "--n-list", "16,32"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed is required"), "{err}");
    assert!(err.contains("unknown model"), "{err}");
    assert!(err.contains("at least 3 levels"), "{err}");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn lemma_check_writes_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(
        &["lemma-check", "--case", "7.2", "--n", "64", "--paths", "1", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("7.2c"), "{stdout}");
    let csv = files_with(dir.path(), ".csv");
    assert_eq!(csv.len(), 1);
    let text = fs::read_to_string(&csv[0]).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# schema=milstein-lemma/1 config_hash="), "{first}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files_with(dir.path(), ".report.json")[0]).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(first.split("config_hash=").nth(1).unwrap(), report["config_hash"].as_str().unwrap());
    assert_eq!(files_with(dir.path(), ".config.toml").len(), 1);
}

#[test]
fn lemma_check_seventy_three_a_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(
        &["lemma-check", "--case", "7.3a", "--n", "64", "--paths", "2000", "--fine-factor", "16", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.000000"));
}

#[test]
fn config_file_with_flag_override_and_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "model = \"det-exp\"\nscheme = \"milstein\"\nn_list = [16, 32, 128]\npaths = 3\nseed = 5\nfine_factor = 2\n").unwrap();
    let out = dir.path().join("o");
    let o = milstein(
        &["rate", "--config", cfg.to_str().unwrap(), "--paths", "7", "--format", "json", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files_with(&out, ".report.json")[0]).unwrap()).unwrap();
    assert_eq!(report["config"]["paths"], 7);
    assert_eq!(report["result"]["config"]["deterministic"], true);
    let data: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files_with(&out, "json")[0]).unwrap()).unwrap();
    assert_eq!(data["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(
        &[
            "error-law", "--model", "gbm", "--n", "4", "--fine-factor", "1", "--paths", "1000", "--seed", "2",
            "--ks-threshold", "0.0001",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&files_with(dir.path(), ".report.json")[0]).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert_eq!(files_with(dir.path(), ".csv").len(), 1);
}

#[test]
fn threads_do_not_change_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["limit-sim", "--model", "gbm", "--draws", "64", "--fine-count", "256", "--seed", "3"];
    let oa = milstein(&[&args[..], &["--threads", "1"]].concat(), a.path());
    let ob = milstein(&[&args[..], &["--threads", "4"]].concat(), b.path());
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(ob.status.code(), Some(0));
    for suffix in [".report.json", ".csv", ".config.toml"] {
        let fa = fs::read(&files_with(a.path(), suffix)[0]).unwrap();
        let fb = fs::read(&files_with(b.path(), suffix)[0]).unwrap();
        assert_eq!(fa, fb, "{suffix}");
    }
    assert_eq!(oa.stdout, ob.stdout);
}

#[test]
fn simulate_emits_coarse_paths() {
    let dir = tempfile::tempdir().unwrap();
    let o = milstein(
        &["simulate", "--model", "gbm", "--scheme", "euler", "--n", "8", "--paths", "3", "--fine-factor", "4", "--seed", "9"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&files_with(dir.path(), ".csv")[0]).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "path_index,t,x_0");
    assert_eq!(lines.len(), 2 + 3 * 9);
    assert!(lines[2].starts_with("0,0.0,1.0"), "{}", lines[2]);
}

#[test]
fn runtime_failure_exits_three_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    // Blocked output directory: a regular file where the directory should be.
    let blocker = dir.path().join("blocked");
    fs::write(&blocker, "x").unwrap();
    let o = milstein(
        &["lemma-check", "--case", "7.2a", "--n", "8", "--paths", "1", "--seed", "1", "--out", blocker.join("sub").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
