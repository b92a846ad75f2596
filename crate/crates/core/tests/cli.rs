//! Drives the `saved` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn saved(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saved"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&saved(&["--help"])), 0);
    assert_eq!(code(&saved(&[])), 1);
    assert_eq!(code(&saved(&["frobnicate"])), 1);
    assert_eq!(code(&saved(&["benchgen"])), 1, "missing --out");
    assert_eq!(code(&saved(&["benchgen", "--out", "x", "--seed", "abc"])), 1);
}

#[test]
fn benchgen_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = saved(&["benchgen", "--families", "3", "--versions", "5", "--seed", "9", "--out", path(out)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let names = csv_files(&a);
    assert_eq!(names.len(), 18);
    assert!(a.join("manifest.txt").is_file());
    assert_eq!(names, csv_files(&b));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert_eq!(
        fs::read(a.join("manifest.txt")).unwrap(),
        fs::read(b.join("manifest.txt")).unwrap()
    );
}

#[test]
fn invalid_benchgen_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let r = saved(&["benchgen", "--depth-min", "3", "--depth-max", "1", "--out", path(&out)]);
    assert_eq!(code(&r), 1);
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = saved(&[
        "tokenizer-train",
        "--corpus",
        path(&dir.path().join("nope")),
        "--out",
        path(&dir.path().join("tok")),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn train_embed_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bench = d.join("bench");
    let tok = d.join("tok");
    let run = d.join("run");
    let emb = d.join("emb");
    let eval = d.join("eval");

    assert_eq!(code(&saved(&["benchgen", "--families", "3", "--versions", "4", "--out", path(&bench)])), 0);
    let r = saved(&["tokenizer-train", "--corpus", path(&bench), "--vocab-size", "400", "--out", path(&tok)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let tokenizer = tok.join("tokenizer.txt");
    assert!(tokenizer.is_file());

    let bad_epochs = saved(&[
        "train", "--corpus", path(&bench), "--tokenizer", path(&tokenizer),
        "--max-epochs", "0", "--out", path(&run),
    ]);
    assert_eq!(code(&bad_epochs), 1);

    let small = [
        "--set", "encoder.d_model=16", "--set", "encoder.num_heads=2", "--set", "encoder.num_layers=1",
        "--set", "encoder.d_ff=32", "--set", "encoder.d_hidden=16", "--set", "encoder.d_emb=8",
        "--set", "encoder.max_len=64", "--set", "encoder.vocab_size=400",
    ];
    let mut args = vec![
        "train", "--corpus", path(&bench), "--tokenizer", path(&tokenizer), "--preset", "desk",
        "--max-epochs", "2", "--seed", "4", "--out", path(&run),
    ];
    args.extend(small);
    let r = saved(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["config.txt", "metrics.csv", "best.ckpt", "final.ckpt", "split.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_loss,val_separation,lr"));
    assert_eq!(metrics.lines().count(), 3);

    let r = saved(&[
        "embed", "--checkpoint", path(&run.join("best.ckpt")), "--tokenizer", path(&tokenizer),
        "--corpus", path(&bench), "--out", path(&emb),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let embeddings = emb.join("embeddings.csv");
    assert_eq!(fs::read_to_string(&embeddings).unwrap().lines().count(), 1 + 15);

    let mismatched = saved(&[
        "embed", "--checkpoint", path(&run.join("best.ckpt")), "--tokenizer", path(&tokenizer),
        "--corpus", path(&bench), "--config", path(&run.join("config.txt")),
        "--set", "encoder.d_emb=9", "--out", path(&emb),
    ]);
    assert_eq!(code(&mismatched), 1);

    let manifest = bench.join("manifest.txt");
    let bad_xi = saved(&[
        "eval", "--embeddings", path(&embeddings), "--manifest", path(&manifest),
        "--xi", "1.5", "--out", path(&eval),
    ]);
    assert_eq!(code(&bad_xi), 1);

    let r = saved(&[
        "eval", "--embeddings", path(&embeddings), "--manifest", path(&manifest),
        "--split", path(&run.join("split.txt")), "--out", path(&eval),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("TPR=") && stdout.contains("SEP="), "{stdout}");
    let report = fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(report.starts_with("category,count,mean,std"));
    let sims = fs::read_to_string(eval.join("similarity.csv")).unwrap();
    assert_eq!(sims.lines().count(), 1 + 15);

    let r = saved(&[
        "eval", "--embeddings", path(&embeddings), "--manifest", path(&manifest),
        "--xi", "0.5", "--scope", "all", "--out", path(&eval),
    ]);
    assert_eq!(code(&r), 0);
    let all = fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(all.contains("intra,30,") && all.contains("inter,75,"), "{all}");
}
