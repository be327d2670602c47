use std::path::Path;
use std::process::{Command, Output};

fn viscom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viscom"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = viscom(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(viscom(&[]).status.code(), Some(1));
    assert_eq!(viscom(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(viscom(&["pretrain", "--preset", "huge"]).status.code(), Some(1));
    assert_eq!(viscom(&["evaluate", "--generations", "a", "--references", "b", "--model.d_model", "8"]).status.code(), Some(1));
    assert_eq!(viscom(&["--help"]).status.code(), Some(0));
}

#[test]
fn build_vocab_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("corpus.txt");
    std::fs::write(&corpus, "The dog runs\nthe cat sits on the mat\n").unwrap();
    let (a, b) = (d.path().join("a.txt"), d.path().join("b.txt"));
    ok(&["build-vocab", "--input", s(&corpus), "--out", s(&a)]);
    ok(&["build-vocab", "--input", s(&corpus), "--out", s(&b)]);
    let va = std::fs::read(&a).unwrap();
    assert_eq!(va, std::fs::read(&b).unwrap());
    let text = String::from_utf8(va).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 18 + 7);
    assert_eq!(lines[18], "the");
    assert_eq!(viscom(&["build-vocab", "--input", s(&corpus), "--min-freq", "0", "--out", s(&a)]).status.code(), Some(1));
    let missing = d.path().join("nope.txt");
    assert_eq!(viscom(&["build-vocab", "--input", s(&missing), "--out", s(&a)]).status.code(), Some(2));
}

/// synth → pretrain → finetune → filter → generate → evaluate → inspect.
#[test]
fn end_to_end_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let p = |n: &str| d.path().join(n);
    let (train, valid, pre) = (p("train.jsonl"), p("valid.jsonl"), p("pre"));
    let (pre_ckpt, ft) = (p("pre/last.ckpt"), p("ft"));
    ok(&["synth", "--out-dir", s(d.path()), "--images", "8", "--seed", "4"]);
    let small = ["--model.d_model", "32", "--model.d_ffn", "64", "--schedule.epochs", "1", "--threads", "1"];
    let mut args = vec!["pretrain", "--seed", "3", "--train", s(&train), "--out-dir", s(&pre)];
    args.extend(small);
    ok(&args);
    let mut args = vec![
        "finetune",
        "--seed",
        "3",
        "--train",
        s(&train),
        "--valid",
        s(&valid),
        "--init-checkpoint",
        s(&pre_ckpt),
        "--out-dir",
        s(&ft),
    ];
    args.extend(small);
    ok(&args);
    let ckpt = p("ft/last.ckpt");
    assert!(p("ft/loss_log.jsonl").exists() && p("ft/manifest.json").exists());

    let o = ok(&[
        "filter",
        "--checkpoint",
        s(&ckpt),
        "--candidates",
        s(&p("candidates.jsonl")),
        "--threshold",
        "100",
        "--kept",
        s(&p("kept.jsonl")),
        "--dropped",
        s(&p("dropped.jsonl")),
        "--report",
        s(&p("report.json")),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["n_before"], 40);
    assert_eq!(report["keep_ratio"], 1.0);

    let gen = |out: &Path, extra: &[&str]| {
        let mut a = vec!["generate", "--checkpoint", s(&ckpt), "--dataset", s(&valid), "--out", s(out), "--max-len", "8"];
        a.extend(extra);
        ok(&a);
    };
    gen(&p("g1.jsonl"), &[]);
    gen(&p("g2.jsonl"), &["--threads", "3"]);
    assert_eq!(std::fs::read(p("g1.jsonl")).unwrap(), std::fs::read(p("g2.jsonl")).unwrap());
    gen(&p("n.jsonl"), &["--mode", "nucleus", "--top-p", "0.9", "--num-samples", "5", "--seed", "2"]);
    let recs = viscom::commands::load_generations(&p("n.jsonl")).unwrap();
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| r.generations.len() == 5));

    let o = ok(&[
        "evaluate",
        "--generations",
        s(&p("g1.jsonl")),
        "--references",
        s(&valid),
        "--training",
        s(&train),
        "--group-by-task",
    ]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["bleu2", "cider", "unique", "novel"] {
        assert!(r[k].is_number(), "{r}");
    }
    assert!(r["per_task"]["total"].is_object());
    // references for another split lack these source ids
    let o = viscom(&["evaluate", "--generations", s(&p("g1.jsonl")), "--references", s(&train)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no reference"));

    let o = ok(&["inspect-checkpoint", s(&ckpt)]);
    let info: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(info["config"]["model"]["d_model"], 32);
    std::fs::write(p("bad.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(viscom(&["inspect-checkpoint", s(&p("bad.ckpt"))]).status.code(), Some(2));
}
