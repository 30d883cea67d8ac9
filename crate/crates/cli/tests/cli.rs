//! End-to-end runs of the `rationale` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rationale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn rationale")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic interactions split into `<tmp>/split`.
fn dataset() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.tsv");
    let split = tmp.path().join("split");
    ok(&[
        "synth", "--out", s(&raw), "--users", "60", "--items", "48", "--blocks", "4",
        "--per-user", "8", "--seed", "5",
    ]);
    ok(&["split", "--input", s(&raw), "--out", s(&split), "--seed", "3"]);
    (tmp, split)
}

const SMALL: [&str; 8] = ["--dim", "8", "--set", "anchor_count=8", "--set", "heads=2", "--seed", "11"];

fn train(split: &Path, out: &Path, epochs: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(split), "--out", s(out), "--epochs", epochs];
    args.extend(SMALL);
    args.extend(extra);
    run(&args)
}

#[test]
fn training_twice_gives_identical_metrics() {
    let (tmp, split) = dataset();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train(&split, &a, "3", &[]).status.success());
    assert!(train(&split, &b, "3", &[]).status.success());
    let ma = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("metrics.csv")).unwrap());
    let lines: Vec<&str> = ma.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,l_rec,l_mae,l_rd,l_cir,l_reg,total,valid_recall@20,grad_norm"
    );
    assert_eq!(lines.len(), 4);
    for name in ["checkpoint.ckpt", "eval_report.json", "eval.csv", "train.run.cfg"] {
        assert!(a.join(name).is_file(), "{name}");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let (tmp, split) = dataset();
    let a = tmp.path().join("a");
    assert!(train(&split, &a, "2", &["--lr", "0.01"]).status.success());
    let manifest = a.join("train.run.cfg");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("lr = 0.01") && text.contains("max_epochs = 2"), "{text}");

    let b = tmp.path().join("b");
    ok(&["train", "--data", s(&split), "--out", s(&b), "--config", s(&manifest)]);
    assert_eq!(
        fs::read_to_string(a.join("metrics.csv")).unwrap(),
        fs::read_to_string(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let (tmp, split) = dataset();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "max_epochs = 5\nlr = 0.5\n").unwrap();
    let out = tmp.path().join("run");
    let o = train(&split, &out, "1", &["--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("train.run.cfg")).unwrap();
    assert!(text.contains("max_epochs = 1") && text.contains("lr = 0.5"), "{text}");
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 2);
    let banner = stderr(&o);
    assert!(banner.contains("# flag") && banner.contains("# file") && banner.contains("# default"));
}

#[test]
fn eval_and_export_read_a_checkpoint() {
    let (tmp, split) = dataset();
    let run_dir = tmp.path().join("run");
    assert!(train(&split, &run_dir, "2", &[]).status.success());
    let ckpt = run_dir.join("checkpoint.ckpt");

    let ev = tmp.path().join("ev");
    let eval = |label: &str| {
        ok(&[
            "eval", "--data", s(&split), "--checkpoint", s(&ckpt), "--out", s(&ev), "--ks", "5,20",
            "--label", label,
        ]);
        fs::read_to_string(ev.join("eval.csv")).unwrap()
    };
    let once = eval("a");
    assert_eq!(eval("a"), once);
    let csv = eval("b");
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("label,users,recall@5,recall@20"));
    assert_eq!(rows[1]["a".len()..], rows[2]["b".len()..]);
    assert!(ev.join("eval_report.json").is_file());

    let export = tmp.path().join("rationales.csv");
    ok(&[
        "export-rationales", "--data", s(&split), "--checkpoint", s(&ckpt), "--out", s(&export),
        "--top", "100",
    ]);
    let text = fs::read_to_string(&export).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("user_id,item_id,score,probability"));
    let scores: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 100);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn resume_continues_the_metrics_log() {
    let (tmp, split) = dataset();
    let full = tmp.path().join("full");
    assert!(train(&split, &full, "4", &[]).status.success());

    let part = tmp.path().join("part");
    assert!(train(&split, &part, "2", &[]).status.success());
    let ckpt = tmp.path().join("mid.ckpt");
    fs::copy(part.join("checkpoint.ckpt"), &ckpt).unwrap();
    ok(&[
        "train", "--data", s(&split), "--out", s(&part), "--resume", s(&ckpt), "--epochs", "4",
    ]);
    assert_eq!(
        fs::read_to_string(full.join("metrics.csv")).unwrap(),
        fs::read_to_string(part.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_level() {
    let (tmp, split) = dataset();
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep", "--data", s(&split), "--out", s(&out), "--perturb", "noise", "--levels",
        "0,0.1,0.2", "--epochs", "2",
    ];
    args.extend(SMALL);
    let o = ok(&args);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "level,recall@20,ndcg@20,relative_degradation");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0,") && rows[1].ends_with(",0"));
    assert!(stderr(&o).contains("recall@20"));
}

#[test]
fn ingest_drops_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.txt");
    fs::write(&raw, "u1 i1 5\nu1  i2 3\nu2 i1 4\nu1 i1 5\n").unwrap();
    let out = tmp.path().join("ing");
    let o = ok(&["ingest", "--input", s(&raw), "--format", "whitespace", "--out", s(&out)]);
    assert!(stderr(&o).contains("1 duplicates dropped"));
    let text = fs::read_to_string(out.join("interactions.tsv")).unwrap();
    assert_eq!(text, "u1\ti1\t5\nu1\ti2\t3\nu2\ti1\t4\n");
    assert!(out.join("ingest.run.cfg").is_file());
}

#[test]
fn exit_codes_classify_failures() {
    let (tmp, split) = dataset();
    let missing = tmp.path().join("nowhere");
    let o = train(&missing, &tmp.path().join("x"), "1", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=dataset exit=2"));

    let bad = tmp.path().join("bad.tsv");
    fs::write(&bad, "a\tb\nonly-one-field\n").unwrap();
    let o = run(&["ingest", "--input", s(&bad), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.tsv:2:"), "{}", stderr(&o));

    let o = train(&split, &tmp.path().join("x"), "1", &["--set", "learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("learning_rate"));
    let o = train(&split, &tmp.path().join("x"), "1", &["--ablate", "no_such"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(3));
}

#[test]
fn divergence_exits_with_a_checkpoint() {
    let (tmp, split) = dataset();
    let out = tmp.path().join("nan");
    let o = train(&split, &out, "2", &["--lr", "1e300", "--batch-size", "16"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let last = stderr(&o).lines().last().unwrap().to_string();
    let ckpt = out.join("checkpoint.ckpt");
    assert!(last.contains(&format!("checkpoint={:?}", s(&ckpt))), "{last}");
    assert!(ckpt.is_file());
    // the saved state is the last finite one and still evaluates
    ok(&["eval", "--data", s(&split), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("ev"))]);
}

#[test]
fn help_lists_ablations_and_defaults() {
    let o = run(&["train", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("none|no_te|random_mask|mlp_mask|no_rd"), "{text}");
    for key in ["dim = 32", "rho_r = 0.7", "rho_m = 0.9", "rho_c = 0.1", "batch_size = 4096"] {
        assert!(text.contains(key), "{key}");
    }
    assert!(run(&["--version"]).status.success());
}
