//! End-to-end tests of the binary: exit codes, artifacts, and the
//! reproducibility contract.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const F2_CONFIG: &str = r#"
group = "free"
rank = 2
functional = "range"
checkpoints = [200, 800]
replicas = 60
seed = 11
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_walklaw"));
    cmd.env_remove("LLN_THREADS");
    cmd
}

fn write_config(dir: &TempDir, text: &str) -> std::path::PathBuf {
    let path = dir.path().join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().arg("--version").output().unwrap()), 0);
    assert_eq!(code(&bin().args(["lln", "--help"]).output().unwrap()), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 1);
    assert_eq!(code(&bin().output().unwrap()), 1, "missing subcommand");
    assert_eq!(
        code(&bin().args(["lln", "--no-such-flag"]).output().unwrap()),
        1
    );
}

#[test]
fn config_errors_exit_one_and_name_the_problem() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &format!("{F2_CONFIG}\nreplcias = 3\n"));
    let out = bin()
        .args(["lln", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("replcias"), "{}", stderr(&out));

    let out = bin()
        .args(["lln", "--set", "steps=100"])
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "no group configured");
    assert!(stderr(&out).contains("group"), "{}", stderr(&out));
}

#[test]
fn lln_with_geomhalf_redirects_to_counterexample() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let out = bin()
        .args(["lln", "--set", "functional=geomhalf", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("counterexample"),
        "{}",
        stderr(&out)
    );
    assert!(
        !dir.path().join("out").join("manifest.json").exists(),
        "refused runs write nothing"
    );
}

#[test]
fn passing_run_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let out_dir = dir.path().join("nested").join("out");
    let out = bin()
        .args(["lln", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[ pass ]"), "{stdout}");

    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("# walklaw-csv-v1\n"));
    assert!(csv.contains("g_over_n(range)"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["schema"], "walklaw.summary.v1");
    assert_eq!(summary["subcommand"], "lln");
    assert_eq!(summary["config"]["replicas"], 60);
    assert!(summary["verdicts"].as_array().unwrap().len() >= 2);
    assert!(summary["gamma"]["gamma"].as_f64().unwrap() > 0.6);
    assert!(
        summary.get("wall_ms").is_none() && summary["report"].get("wall_ms").is_none(),
        "timings belong to the manifest only"
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["schema"], "walklaw.manifest.v1");
    assert_eq!(manifest["subcommand"], "lln");
    assert_eq!(manifest["master_seed"], 11);
    assert!(manifest["wall_ms"].as_u64().is_some());
    for path in manifest["outputs"].as_array().unwrap() {
        assert!(
            Path::new(path.as_str().unwrap()).exists(),
            "manifest lists a missing artifact: {path}"
        );
    }
}

#[test]
fn failing_verdict_exits_two_and_still_writes_artifacts() {
    // A four-step escape horizon overestimates gamma so badly that the
    // decay targets cannot match the walk.
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "multirange",
            "--set",
            "gamma=escape:4",
            "--set",
            "return_replicas = 2000",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[ FAIL ]"), "{stdout}");
    assert!(out_dir.join("report.csv").exists());
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn thread_count_never_changes_report_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let run = |threads: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let output = bin()
            .env("LLN_THREADS", threads)
            .args(["l2", "--set", "functional=power:2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(code(&output), 0, "{}", stderr(&output));
        (
            std::fs::read(out_dir.join("report.csv")).unwrap(),
            std::fs::read(out_dir.join("summary.json")).unwrap(),
        )
    };
    let (csv_one, summary_one) = run("1", "one");
    let (csv_four, summary_four) = run("4", "four");
    assert_eq!(csv_one, csv_four, "CSV bytes must not depend on threads");
    assert_eq!(
        summary_one, summary_four,
        "summary bytes must not depend on threads"
    );
}

#[test]
fn seed_flag_overrides_and_changes_the_sample() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let run = |seed: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let output = bin()
            .args(["simulate", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(code(&output), 0, "{}", stderr(&output));
        std::fs::read(out_dir.join("report.csv")).unwrap()
    };
    let a = run("1", "a");
    let b = run("2", "b");
    let a_again = run("1", "c");
    assert_eq!(a, a_again, "same seed, same bytes");
    assert_ne!(a, b, "different seed, different sample");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a").join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["master_seed"], 1, "--seed wins over the config");
}

#[test]
fn invalid_thread_env_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, F2_CONFIG);
    let out = bin()
        .env("LLN_THREADS", "many")
        .args(["lln", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("LLN_THREADS"), "{}", stderr(&out));
}
