//! End-to-end acceptance checks for the command-line pipelines, driven
//! through the built binary. The reproducibility check runs the same
//! manifest at several `--jobs` settings and demands byte-identical reports.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fastprio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastprio"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fastprio(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write_manifest(dir: &Path, name: &str, per_class: usize, epochs: usize) -> PathBuf {
    let path = dir.join(name);
    let manifest = format!(
        r#"{{
  "seed": 42,
  "data": {{"classes": 3, "per_class": {per_class}, "dims": 2, "spread": 0.8, "label_noise": 0.08}},
  "test_fraction": 0.3333,
  "model": {{"arch": [2, 16, 16, 3], "epochs": {epochs}, "learning_rate": 0.05, "batch_size": 32, "l2_decay": 0.001}},
  "selection": {{"rate": 0.05, "tau": 0.9, "cap": 200}},
  "methods": ["fast-gini", "gini", "maxp", "nns", "mcdropout", "random"],
  "mc_dropout": {{"runs": 10, "rate": 0.1}},
  "budgets": [0.05, 0.1, 0.5, 1.0]
}}"#
    );
    std::fs::write(&path, manifest).unwrap();
    path
}

/// One tree's non-record files, keyed by relative path, with content bytes.
fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if !path.to_string_lossy().ends_with(".run.json") {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.push((key, std::fs::read(&path).unwrap()));
            }
        }
    }
    walk(root, root, &mut files);
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn manifest_pipeline_reports_are_byte_identical_across_jobs_and_reruns() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), "exp.json", 150, 30);
    let manifest = manifest.to_str().unwrap();

    for jobs in ["1", "2", "4"] {
        ok(
            dir.path(),
            &[
                "--jobs",
                jobs,
                "--quiet",
                "report",
                "--manifest",
                manifest,
                "--out-dir",
                &format!("run_j{jobs}"),
            ],
        );
    }
    // a rerun of the first setting
    ok(
        dir.path(),
        &[
            "--jobs",
            "1",
            "--quiet",
            "report",
            "--manifest",
            manifest,
            "--out-dir",
            "run_again",
        ],
    );

    let reference = std::fs::read(dir.path().join("run_j1/report.json")).unwrap();
    for run in ["run_j2", "run_j4", "run_again"] {
        let other = std::fs::read(dir.path().join(run).join("report.json")).unwrap();
        assert_eq!(reference, other, "report bytes differ in {run}");
    }
    // every artifact, not just the report, must match across jobs
    let tree = tree_bytes(&dir.path().join("run_j1"));
    for run in ["run_j2", "run_j4", "run_again"] {
        assert_eq!(
            tree,
            tree_bytes(&dir.path().join(run)),
            "artifact tree differs in {run}"
        );
    }

    // the report carries the expected method rows
    let report = std::fs::read_to_string(dir.path().join("run_j1/report.json")).unwrap();
    for tag in [
        "fast-gini",
        "\"gini\"",
        "maxp",
        "nns-gini",
        "mcdropout-gini",
        "random",
    ] {
        assert!(report.contains(tag), "report missing {tag}");
    }
    println!(
        "acceptance: manifest reports byte-identical at jobs 1/2/4 + rerun ... PASS ({:.1?})",
        started.elapsed()
    );
}

#[test]
fn command_pipeline_produces_a_comparison_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "--seed",
            "42",
            "train",
            "--synthetic",
            "classes=3,per_class=150,dims=2,spread=0.8,label_noise=0.08",
            "--test-fraction",
            "0.3333",
            "--save-train",
            "train.json",
            "--save-test",
            "test.json",
            "--arch",
            "2,16,16,3",
            "--epochs",
            "30",
            "--lr",
            "0.05",
            "--batch",
            "32",
            "--out",
            "model",
            "--log",
            "training.csv",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "42",
            "assess",
            "--model",
            "model",
            "--train",
            "train.json",
            "--out",
            "contrib",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "42",
            "mask",
            "--contribution",
            "contrib",
            "--rate",
            "0.05",
            "--out",
            "mask",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "42",
            "prioritize",
            "--model",
            "model",
            "--suite",
            "test.json",
            "--method",
            "fast-gini",
            "--mask",
            "mask",
            "--out",
            "fast.csv",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "42",
            "prioritize",
            "--model",
            "model",
            "--suite",
            "test.json",
            "--method",
            "gini",
            "--out",
            "gini.csv",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "42",
            "evaluate",
            "--rankings",
            "fast.csv,gini.csv",
            "--suite",
            "test.json",
            "--model",
            "model",
            "--mask",
            "mask",
            "--out",
            "eval.json",
        ],
    );

    let report = std::fs::read_to_string(d.join("eval.json")).unwrap();
    assert!(report.contains("fast-gini"));
    assert!(report.contains("\"gini\""));
    assert!(report.contains("apfd"));
    // artifacts and run records exist
    for file in [
        "model/model.json",
        "contrib.tns",
        "mask.tns",
        "fast.csv",
        "eval.csv",
        "eval.tsv",
        "eval.json.run.json",
        "training.csv",
    ] {
        assert!(d.join(file).exists(), "{file} missing");
    }

    // aggregation over stored reports
    ok(
        d,
        &["report", "--evals", "eval.json", "--out", "combined.json"],
    );
    assert!(d.join("combined.json").exists());
    assert!(d.join("combined.csv").exists());
    println!("acceptance: command pipeline report with masked and plain rows ... PASS");
}

#[test]
fn rate_zero_mask_matches_bare_prioritization_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "--seed",
            "7",
            "train",
            "--synthetic",
            "classes=3,per_class=80,dims=2,spread=0.7,label_noise=0.05",
            "--test-fraction",
            "0.25",
            "--save-train",
            "train.json",
            "--save-test",
            "test.json",
            "--arch",
            "2,12,3",
            "--epochs",
            "25",
            "--out",
            "model",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "7",
            "assess",
            "--model",
            "model",
            "--train",
            "train.json",
            "--tau",
            "0.8",
            "--out",
            "contrib",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "7",
            "mask",
            "--contribution",
            "contrib",
            "--rate",
            "0.0",
            "--out",
            "mask0",
        ],
    );
    for metric in ["gini", "maxp", "margin"] {
        ok(
            d,
            &[
                "prioritize",
                "--model",
                "model",
                "--suite",
                "test.json",
                "--method",
                &format!("fast-{metric}"),
                "--mask",
                "mask0",
                "--out",
                "masked.csv",
            ],
        );
        ok(
            d,
            &[
                "prioritize",
                "--model",
                "model",
                "--suite",
                "test.json",
                "--method",
                metric,
                "--out",
                "plain.csv",
            ],
        );
        let masked = std::fs::read_to_string(d.join("masked.csv")).unwrap();
        let plain = std::fs::read_to_string(d.join("plain.csv")).unwrap();
        let order = |text: &str| -> Vec<String> {
            text.lines()
                .skip(1)
                .map(|l| l.split(',').next().unwrap().to_string())
                .collect()
        };
        assert_eq!(
            order(&masked),
            order(&plain),
            "{metric} ordering differs at rate 0"
        );
    }
    println!("acceptance: rate-zero masks reproduce bare orderings end to end ... PASS");
}

#[test]
fn manifest_supplies_defaults_to_individual_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_manifest(d, "exp.json", 100, 20);
    // none of these pass seed, arch, epochs, tau, or rate: all come from
    // the manifest
    ok(
        d,
        &[
            "--manifest",
            "exp.json",
            "train",
            "--test-fraction",
            "0.3333",
            "--save-train",
            "train.json",
            "--save-test",
            "test.json",
            "--out",
            "model",
        ],
    );
    ok(
        d,
        &[
            "--manifest",
            "exp.json",
            "assess",
            "--model",
            "model",
            "--train",
            "train.json",
            "--out",
            "contrib",
        ],
    );
    ok(
        d,
        &[
            "--manifest",
            "exp.json",
            "mask",
            "--contribution",
            "contrib",
            "--out",
            "mask",
        ],
    );
    ok(
        d,
        &[
            "--manifest",
            "exp.json",
            "prioritize",
            "--model",
            "model",
            "--suite",
            "test.json",
            "--method",
            "fast-gini",
            "--mask",
            "mask",
            "--out",
            "fast.csv",
        ],
    );
    ok(
        d,
        &[
            "--manifest",
            "exp.json",
            "evaluate",
            "--rankings",
            "fast.csv",
            "--suite",
            "test.json",
            "--out",
            "eval.json",
        ],
    );
    let eval = std::fs::read_to_string(d.join("eval.json")).unwrap();
    assert!(eval.contains("\"seed\": 42"), "manifest seed not applied");
    let mask_sidecar = std::fs::read_to_string(d.join("mask.json")).unwrap();
    assert!(
        mask_sidecar.contains("\"rate\": 0.05"),
        "manifest rate not applied"
    );
    println!("acceptance: manifest defaults reach every command ... PASS");
}

#[test]
fn missing_inputs_exit_2_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastprio(
        dir.path(),
        &[
            "prioritize",
            "--model",
            "absent/model.json",
            "--suite",
            "nosuite.json",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent/model.json"), "{stderr}");

    let out = fastprio(
        dir.path(),
        &[
            "mask",
            "--contribution",
            "nope",
            "--rate",
            "0.5",
            "--out",
            "m",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    println!("acceptance: missing inputs exit 2 naming the offending path ... PASS");
}

#[test]
fn corrupt_command_round_trips_severity_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "--seed",
            "3",
            "train",
            "--synthetic",
            "classes=2,per_class=40,dims=2,spread=0.4,label_noise=0.0",
            "--test-fraction",
            "0.5",
            "--save-test",
            "test.json",
            "--arch",
            "2,6,2",
            "--epochs",
            "5",
            "--out",
            "model",
        ],
    );
    ok(
        d,
        &[
            "corrupt",
            "--data",
            "test.json",
            "--kind",
            "gaussian-noise",
            "--severity",
            "0",
            "--out",
            "same.json",
        ],
    );
    let a = std::fs::read(d.join("test.inputs.tns")).unwrap();
    let b = std::fs::read(d.join("same.inputs.tns")).unwrap();
    assert_eq!(a, b);

    let out = fastprio(
        d,
        &[
            "corrupt",
            "--data",
            "test.json",
            "--kind",
            "melt",
            "--severity",
            "0.5",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    println!("acceptance: corrupt severity-zero identity + unknown-kind rejection ... PASS");
}
