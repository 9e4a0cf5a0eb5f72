use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn tribeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tribeflow")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Synthesizes, splits and trains a small model in `dir`.
fn prepared(dir: &Path) {
    let out = tribeflow(&["synth", "--out-dir", s(dir), "--users", "15", "--groups", "3", "--items-per-group", "8", "--days", "2", "--geo", "--disjoint", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (corpus, train, test) = (dir.join("corpus.tsv"), dir.join("train.tsv"), dir.join("test.tsv"));
    assert!(tribeflow(&["split", s(&corpus), "--train", s(&train), "--test", s(&test)]).status.success());
    let model = dir.join("model.tf");
    let out = tribeflow(&["train", s(&train), "-o", s(&model), "--k-init", "4", "--iters", "20", "--adapt-every", "10", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn default_synth_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = tribeflow(&["synth", "--out-dir", s(dir.path())]);
    assert!(out.status.success());
    let corpus = fs::read_to_string(dir.path().join("corpus.tsv")).unwrap();
    assert_eq!(corpus.lines().count(), 25_000);
    assert!(corpus.lines().all(|l| l.split('\t').count() == 3));
    assert_eq!(fs::read_to_string(dir.path().join("groups.tsv")).unwrap().lines().count(), 50);
    assert!(!dir.path().join("geo.tsv").exists());
}

#[test]
fn same_seed_same_model_file() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let again = dir.path().join("again.tf");
    let train = dir.path().join("train.tsv");
    let out = tribeflow(&["train", s(&train), "-o", s(&again), "--k-init", "4", "--iters", "20", "--adapt-every", "10", "--seed", "5"]);
    assert!(out.status.success());
    assert_eq!(fs::read(dir.path().join("model.tf")).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn eval_reports_requested_metrics() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let p = |n: &str| dir.path().join(n);
    let out = tribeflow(&["eval", "-m", s(&p("model.tf")), "--test", s(&p("test.tsv")), "--metric", "mrr"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    let mrr: f64 = text.trim().strip_prefix("mrr=").unwrap().parse().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);

    let out = tribeflow(&[
        "eval", "-m", s(&p("model.tf")), "--test", s(&p("test.tsv")), "--train", s(&p("train.tsv")),
        "--geo", s(&p("geo.tsv")), "--baseline", "gravity", "--baseline", "mcmle", "--kv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.matches("flow_mae=").count(), 2);
    assert!(text.contains("ks_statistic="));
}

#[test]
fn gravity_needs_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let p = |n: &str| dir.path().join(n);
    let out = tribeflow(&["eval", "-m", s(&p("model.tf")), "--test", s(&p("test.tsv")), "--train", s(&p("train.tsv")), "--baseline", "gravity"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--geo"));
}

#[test]
fn predict_prints_ranked_rows() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_tribeflow"))
        .args(["predict", "-m", s(&dir.path().join("model.tf")), "--top", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"u0\ti0,i1\t10\nstranger\ti2\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let rows: Vec<Vec<String>> = stdout(&out).lines().map(|l| l.split('\t').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert_eq!(rows[0][0], "u0");
    assert_eq!(rows[3][0], "stranger");
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["1", "2", "3", "1", "2", "3"]);
    let scores: Vec<f64> = rows[..3].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows[..3].iter().all(|r| r[2] != "i1"));
}

#[test]
fn exit_codes() {
    assert_eq!(tribeflow(&[]).status.code(), Some(1));
    assert_eq!(tribeflow(&["--help"]).status.code(), Some(0));
    assert_eq!(tribeflow(&["train", "nowhere.tsv"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "u1\tnot-a-time\ti1\n").unwrap();
    let out = tribeflow(&["train", s(&bad), "-o", s(&dir.path().join("m.tf"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let fake = dir.path().join("fake.tf");
    fs::write(&fake, b"definitely not a model").unwrap();
    let out = tribeflow(&["predict", "-m", s(&fake)]);
    assert_eq!(out.status.code(), Some(2));

    let out = tribeflow(&["train", s(&bad), "-o", s(&dir.path().join("m.tf")), "--iters", "5", "--adapt-every", "10"]);
    assert_eq!(out.status.code(), Some(1));
}
