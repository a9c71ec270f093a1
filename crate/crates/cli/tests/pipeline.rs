use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn synthetic_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/pipeline.toml")
}

fn python_available() -> bool {
    Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success())
}

fn aupair(work: &Path, extra: &[&str], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aupair"));
    cmd.arg("--config")
        .arg(synthetic_config())
        .arg("--set")
        .arg(format!("work_dir=\"{}\"", work.display()))
        .env("RUST_LOG", "warn");
    for e in extra {
        cmd.args(["--set", e]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `strategy -> (test_pass_rate, strict_accuracy)` from `metrics.csv`.
fn metrics(work: &Path) -> Vec<(String, f64, f64)> {
    let text = std::fs::read_to_string(work.join("metrics.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

fn rate(m: &[(String, f64, f64)], strategy: &str) -> f64 {
    m.iter().find(|r| r.0 == strategy).unwrap().1
}

#[test]
fn full_pipeline_beats_best_of_n_and_is_reproducible() {
    if !python_available() {
        eprintln!("skipping: python3 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let stdout = ok(aupair(&work, &[], &["run"]));
    assert!(stdout.contains("aupair n=2"), "{stdout}");

    let m = metrics(&work);
    assert_eq!(m.len(), 3);
    assert!(rate(&m, "aupair") > rate(&m, "best_of_n"), "{m:?}");

    let list = std::fs::read(work.join("aupairs.jsonl")).unwrap();
    let matrix = std::fs::read(work.join("matrix.bin")).unwrap();
    ok(aupair(&work, &[], &["extract", "--recompute"]));
    assert_eq!(std::fs::read(work.join("aupairs.jsonl")).unwrap(), list);
    assert_eq!(std::fs::read(work.join("matrix.bin")).unwrap(), matrix);

    let verify = ok(aupair(&work, &[], &["analyze", "provenance"]));
    assert!(verify.contains(", 0 issues"), "{verify}");
    std::fs::write(work.join("aupairs.jsonl"), b"tampered\n").unwrap();
    let tampered = aupair(&work, &[], &["analyze", "provenance"]);
    assert_eq!(tampered.status.code(), Some(2));

    let lineage = ok(aupair(&work, &[], &["analyze", "lineage"]));
    assert!(lineage.starts_with("depth 1:"), "{lineage}");
    let breakdown = ok(aupair(
        &work,
        &[],
        &["analyze", "breakdown", "--strategy", "best_of_n", "--axis", "difficulty"],
    ));
    assert!(breakdown.starts_with("axis,bucket,"), "{breakdown}");
}

#[test]
fn recorded_calls_replay_to_identical_results() {
    if !python_available() {
        eprintln!("skipping: python3 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records");
    let record_dir = format!("gateway.record_dir=\"{}\"", records.display());
    let first = dir.path().join("first");
    ok(aupair(&first, &[&record_dir], &["run"]));

    let second = dir.path().join("second");
    let replay_dir = format!("gateway.replay_dir=\"{}\"", records.display());
    ok(aupair(&second, &["gateway.backend=replay", &replay_dir], &["run"]));
    for f in ["metrics.csv", "aupairs.jsonl", "pairs.jsonl", "curated.jsonl"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn eval_before_extract_names_the_missing_step() {
    if !python_available() {
        eprintln!("skipping: python3 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    for step in ["curate", "split", "pairgen"] {
        ok(aupair(&work, &[], &[step]));
    }
    let out = aupair(&work, &[], &["eval", "--strategy", "aupair"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing AuPairList"), "{stderr}");
    assert!(stderr.contains("run extract"), "{stderr}");
    assert!(!work.join("results").exists());
}

#[test]
fn dry_run_plans_without_calling() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let stdout = ok(aupair(&work, &[], &["dry-run"]));
    assert!(stdout.contains("curate: 12 calls"), "{stdout}");
    assert!(stdout.contains("pairgen: 16 calls"), "{stdout}");
    assert!(stdout.contains("extract: unknown"), "{stdout}");
    assert!(!work.join("logs").exists());
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = aupair(
        dir.path(),
        &["budgets.inference=0", "split.train=0.9"],
        &["curate"],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("budgets.inference"), "{stderr}");
    assert!(stderr.contains("split"), "{stderr}");

    let unknown = aupair(dir.path(), &[], &["no-such-command"]);
    assert_eq!(unknown.status.code(), Some(1));
}
