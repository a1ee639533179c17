use std::path::Path;
use std::process::{Command, Output};

fn gcblane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcblane"))
        .args(args)
        .env_remove("GCBLANE_THREADS")
        .output()
        .expect("spawn gcblane")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesises `n` positives and prepares a manifest in `dir/data`.
fn prepared(dir: &Path, n: usize) -> std::path::PathBuf {
    let fasta = dir.join("pos.fa");
    let o = gcblane(&["synth", "--out", p(&fasta), "--n", &n.to_string(), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.join("data");
    let o = gcblane(&["prepare", "--positives", p(&fasta), "--out", p(&out), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json") && p.to_string_lossy().contains("manifest"))
        .expect("manifest file")
}

#[test]
fn prepare_pairs_every_positive_with_a_negative() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 100);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 200);
    let positives = entries.iter().filter(|e| e["label"] == 1).count();
    assert_eq!(positives, 100);
}

#[test]
fn prepare_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = prepared(a.path(), 30);
    let mb = prepared(b.path(), 30);
    let strip = |path: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["entries"].take()
    };
    assert_eq!(strip(&ma), strip(&mb));
}

#[test]
fn missing_input_exits_with_the_io_code_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.fa");
    let o = gcblane(&["prepare", "--positives", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.fa"), "{}", stderr(&o));
}

#[test]
fn invalid_configuration_exits_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"train": {"lr_init": 0.001, "lr_min": 0.01}}"#).unwrap();
    let o = gcblane(&["train", "--config", p(&cfg), "--manifest", "x.json", "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"trian": {}}"#).unwrap();
    let o = gcblane(&["summary", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_predict_and_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 40);
    let ckpt = dir.path().join("model.ckpt");
    let reports = dir.path().join("reports");
    let o = gcblane(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&ckpt),
        "--report-dir",
        p(&reports),
        "--variant",
        "GNN_ONLY",
        "--epochs",
        "1",
        "--batch-size",
        "16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ckpt.exists());
    assert!(reports.join("train_log.jsonl").exists());
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["epochs"], 1);

    let fasta = dir.path().join("q.fa");
    let seqs = ["ACGT".repeat(25) + "A", "GGCCTATAAT".repeat(10) + "G", "AACCGGTTGC".repeat(10) + "T"];
    let text: String = seqs.iter().enumerate().map(|(i, s)| format!(">q{i}\n{s}\n")).collect();
    std::fs::write(&fasta, text).unwrap();
    let o = gcblane(&["predict", "--checkpoint", p(&ckpt), "--fasta", p(&fasta)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], format!("q{i}"));
        let (a, b): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        assert!((a + b - 1.0).abs() < 1e-5);
    }

    let eval_dir = dir.path().join("eval");
    let o = gcblane(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&manifest),
        "--split",
        "test",
        "--report-dir",
        p(&eval_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("roc_auc"));
}

#[test]
fn training_twice_with_one_seed_gives_the_same_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 20);
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let o = gcblane(&[
            "train",
            "--manifest",
            p(&manifest),
            "--out",
            p(&ckpt),
            "--variant",
            "GNN_ONLY",
            "--epochs",
            "1",
            "--batch-size",
            "8",
            "--seed",
            "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(ckpt).unwrap()
    };
    assert_eq!(run("a.ckpt"), run("b.ckpt"));
}

#[test]
fn finetune_against_the_wrong_architecture_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 20);
    let ckpt = dir.path().join("parent.ckpt");
    let o = gcblane(&[
        "train", "--manifest", p(&manifest), "--out", p(&ckpt), "--variant", "GNN_ONLY", "--epochs", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let child = dir.path().join("child.ckpt");
    let o = gcblane(&[
        "finetune",
        "--manifest",
        p(&manifest),
        "--checkpoint-in",
        p(&ckpt),
        "--out",
        p(&child),
        "--epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("variant"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    let o = gcblane(&["gradcheck", "--seeds", "1", "--out", p(&out)]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(!v.as_array().unwrap().is_empty());
}

#[test]
fn summary_lists_layers_and_totals() {
    let o = gcblane(&["summary"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Output Block"));
    assert!(out.contains("[101, 4]"));
    assert!(out.lines().any(|l| l.starts_with("total")));
}

#[test]
fn graph_dump_prints_json() {
    let o = gcblane(&["graph-dump", "ACGTA", "--k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v.is_object());
}
