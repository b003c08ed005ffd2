use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn egn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egn"))
        .args(args)
        .env("EGN_THREADS", "1")
        .output()
        .expect("spawn egn")
}

fn ok(args: &[&str]) -> String {
    let out = egn(args);
    assert!(
        out.status.success(),
        "egn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn graph_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    names
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&[
            "generate",
            "--family",
            "rrg",
            "--n",
            "100",
            "--degree",
            "3",
            "--count",
            "50",
            "--seed",
            "7",
            "--out",
            p(dir),
        ]);
    }
    let files = graph_files(&a);
    assert_eq!(files.len(), 50);
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.matches(" train").count(), 40);
    assert_eq!(manifest.matches(" val").count(), 5);
    assert_eq!(manifest.matches(" test").count(), 5);
}

#[test]
fn oracle_annotates_small_instances_only() {
    let tmp = tempfile::tempdir().unwrap();
    let small = tmp.path().join("small");
    ok(&[
        "generate",
        "--family",
        "er",
        "--n",
        "12",
        "--p",
        "0.3",
        "--count",
        "6",
        "--out",
        p(&small),
    ]);
    let msg = ok(&["oracle", "--dataset", p(&small), "--problem", "mis"]);
    assert!(msg.contains("annotated 6"), "{msg}");
    let manifest = fs::read_to_string(small.join("manifest.txt")).unwrap();
    assert_eq!(manifest.matches(":exact").count(), 6);

    let big = tmp.path().join("big");
    ok(&[
        "generate",
        "--family",
        "rrg",
        "--n",
        "30",
        "--degree",
        "3",
        "--count",
        "2",
        "--out",
        p(&big),
    ]);
    let msg = ok(&["oracle", "--dataset", p(&big), "--problem", "mvc"]);
    assert!(msg.contains("skipped 2"), "{msg}");
}

#[test]
fn train_evaluate_finetune_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let ckpt = tmp.path().join("m.ckpt");
    let csv = tmp.path().join("out.csv");
    ok(&[
        "generate",
        "--family",
        "er",
        "--n",
        "14",
        "--p",
        "0.3",
        "--count",
        "20",
        "--seed",
        "3",
        "--out",
        p(&d),
    ]);
    ok(&["oracle", "--dataset", p(&d), "--problem", "mis"]);
    ok(&[
        "train",
        "--method",
        "egn",
        "--dataset",
        p(&d),
        "--problem",
        "mis",
        "--hidden",
        "8",
        "--iters",
        "10",
        "--batch",
        "4",
        "--eval-every",
        "5",
        "--out",
        p(&ckpt),
    ]);
    let summary = ok(&[
        "evaluate",
        "--model",
        p(&ckpt),
        "--protocol",
        "accurate",
        "--dataset",
        p(&d),
        "--problem",
        "mis",
        "--csv",
        p(&csv),
        "--require-reference",
    ]);
    assert!(summary.contains(" ± "), "{summary}");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance_id,n,m,problem,method,trials,apr,ref_kind,objective,feasible,loss_before,loss_after,time_ms_forward,time_ms_round,time_ms_finetune"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r.contains(",8,") && r.contains(",exact,")));

    let graph = d.join(graph_files(&d)[0].clone());
    let tuned = tmp.path().join("tuned.ckpt");
    let trace = ok(&[
        "finetune",
        "--model",
        p(&ckpt),
        "--graph",
        p(&graph),
        "--steps",
        "2",
        "--out",
        p(&tuned),
    ]);
    assert_eq!(trace.matches("->").count(), 2, "{trace}");
    assert!(tuned.exists());
}

#[test]
fn dynamics_writes_both_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let out = tmp.path().join("dyn");
    ok(&[
        "generate",
        "--family",
        "rrg",
        "--n",
        "20",
        "--degree",
        "3",
        "--count",
        "10",
        "--out",
        p(&d),
    ]);
    ok(&[
        "dynamics",
        "--dataset",
        p(&d),
        "--problem",
        "mis",
        "--hidden",
        "8",
        "--iters",
        "6",
        "--batch",
        "4",
        "--eval-every",
        "3",
        "--features",
        "greedy",
        "--out",
        p(&out),
    ]);
    for f in ["egn.csv", "meta-egn.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text
            .starts_with("iteration,train_loss_pre_adapt,train_loss_post_adapt,val_loss,val_apr"));
        assert_eq!(text.lines().count(), 8);
    }
}

#[test]
fn baseline_reports_apr_against_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rb");
    ok(&[
        "generate",
        "--family",
        "rb",
        "--groups",
        "6",
        "--group-size",
        "4",
        "--count",
        "4",
        "--split",
        "test",
        "--out",
        p(&d),
    ]);
    let csv = tmp.path().join("b.csv");
    let out = ok(&[
        "baseline",
        "--dataset",
        p(&d),
        "--method",
        "greedy-mvc",
        "--require-reference",
        "--csv",
        p(&csv),
    ]);
    assert!(out.contains("4 instances"), "{out}");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines()
            .skip(1)
            .filter(|l| l.contains(",bound,"))
            .count(),
        4
    );
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!egn(&[
        "generate",
        "--family",
        "rrg",
        "--count",
        "1",
        "--out",
        p(tmp.path())
    ])
    .status
    .success());
    assert!(!egn(&[
        "evaluate",
        "--model",
        "missing.ckpt",
        "--dataset",
        p(tmp.path())
    ])
    .status
    .success());
    assert!(!egn(&["frobnicate"]).status.success());
    assert!(!egn(&[
        "generate",
        "--family",
        "rrg",
        "--n",
        "5",
        "--degree",
        "3",
        "--count",
        "1",
        "--out",
        p(tmp.path())
    ])
    .status
    .success());
}

#[test]
fn future_checkpoint_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "generate",
        "--family",
        "rrg",
        "--n",
        "10",
        "--degree",
        "3",
        "--count",
        "10",
        "--out",
        p(&d),
    ]);
    ok(&[
        "train",
        "--dataset",
        p(&d),
        "--problem",
        "mis",
        "--hidden",
        "4",
        "--iters",
        "1",
        "--out",
        p(&ckpt),
    ]);
    let text =
        fs::read_to_string(&ckpt)
            .unwrap()
            .replacen("egn-checkpoint 1", "egn-checkpoint 7", 1);
    fs::write(&ckpt, text).unwrap();
    let out = egn(&["evaluate", "--model", p(&ckpt), "--dataset", p(&d)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}
