//! End-to-end CLI behaviour: usage errors, deterministic outputs across
//! invocations and worker counts, and resume-skip.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mixselect")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(tag);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .current_dir(repo_root())
        .args(args)
        .output()
        .expect("binary runs")
}

fn collect_files(dir: &Path, ext: &str) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().map(|e| e == ext).unwrap_or(false) {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn unknown_scenario_and_method_are_usage_errors() {
    let out = run(&["run", "--scenarios", "cubic-high-snr-lowcorr-j12", "--out", "/tmp/nope"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["run", "--methods", "boosting", "--out", "/tmp/nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["all", "--preset", "bogus", "--out", "/tmp/nope"]);
    assert_eq!(out.status.code(), Some(2));
    // missing subcommand / unknown flag are clap usage errors
    let out = run(&["--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn smoke_runs_are_byte_identical_across_invocations_and_workers() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    let args = |out: &Path, workers: &str| {
        vec![
            "all".to_string(),
            "--preset".into(),
            "smoke".into(),
            "--seed".into(),
            "7".into(),
            "--workers".into(),
            workers.into(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
        ]
    };
    let run_owned = |args: Vec<String>| {
        Command::new(bin())
            .current_dir(repo_root())
            .args(args)
            .output()
            .expect("binary runs")
    };
    let out = run_owned(args(&dir_a, "1"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run_owned(args(&dir_b, "2"));
    assert!(out.status.success());

    for ext in ["csv", "json", "svg"] {
        let a = collect_files(&dir_a, ext);
        let b = collect_files(&dir_b, ext);
        assert!(!a.is_empty(), "no .{ext} files produced");
        assert_eq!(a.len(), b.len());
        for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
            assert_eq!(name_a, name_b);
            if name_a.ends_with("manifest.json") {
                continue; // wall times are not deterministic
            }
            assert_eq!(bytes_a, bytes_b, "{name_a} differs across runs");
        }
    }
}

#[test]
fn rerun_skips_completed_tasks() {
    let dir = tmp_dir("resume");
    let args: Vec<String> = vec![
        "all".into(),
        "--preset".into(),
        "smoke".into(),
        "--seed".into(),
        "9".into(),
        "--out".into(),
        dir.to_string_lossy().into_owned(),
    ];
    let out = Command::new(bin())
        .current_dir(repo_root())
        .args(&args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let statuses: Vec<&str> = manifest["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["status"].as_str().unwrap())
        .collect();
    assert!(statuses.iter().all(|s| *s == "ok"));

    // identical rerun: every task is skipped
    let out = Command::new(bin())
        .current_dir(repo_root())
        .args(&args)
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let statuses: Vec<&str> = manifest["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["status"].as_str().unwrap())
        .collect();
    assert!(
        statuses.iter().all(|s| *s == "skipped"),
        "expected all skipped, got {statuses:?}"
    );

    // a different seed invalidates the stored hash and reruns everything
    let out = Command::new(bin())
        .current_dir(repo_root())
        .args([
            "run",
            "--preset",
            "smoke",
            "--seed",
            "10",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["status"] == "ok"));
}

#[test]
fn dataset_files_shared_across_model_sizes() {
    let dir = tmp_dir("datasets");
    let out = Command::new(bin())
        .current_dir(repo_root())
        .args([
            "simulate",
            "--scenarios",
            "sshape-low-snr-fullcorr-j6,sshape-low-snr-fullcorr-j12",
            "--reps",
            "2",
            "--seed",
            "11",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // one DGP, two reps: exactly two shared files
    let files = collect_files(&dir.join("datasets"), "csv");
    assert_eq!(files.len(), 2, "{files:?}");
    let text = String::from_utf8(files[0].1.clone()).unwrap();
    assert!(text.starts_with("# dgp=sshape-low-snr-fullcorr\n"));
    assert!(text.contains("# truth=MPB,PPB,BP3,BPA"));
    // 12 exposure columns + y
    let header = text.lines().nth(4).unwrap();
    assert_eq!(header.split(',').count(), 13);
}
