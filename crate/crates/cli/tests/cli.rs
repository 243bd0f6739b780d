use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dance_core::encoder::EncoderShape;
use dance_core::trainer::{init_params, TrainConfig};
use dance_core::{Checkpoint, Params};

fn dance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dance")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest_small(dir: &Path) -> String {
    let corpus = dir.join("corpus");
    let o = dance(&[
        "ingest", "--synthetic", "--n-topics", "3", "--docs-per-topic", "3", "--queries-per-topic", "2",
        "--vocab-buckets", "1024", "--seed", "5", "--out", s(&corpus),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    corpus.to_str().unwrap().to_owned()
}

fn train_small(corpus: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--corpus", corpus, "--out", s(out), "--d-model", "8", "--batch-size", "4", "--n-neg", "2",
        "--pool-size", "4", "--warmup-steps", "2", "--refresh-interval", "3", "--seed", "9",
    ];
    args.extend_from_slice(extra);
    dance(&args)
}

#[test]
fn ingest_minimal_corpus_reports_one_document() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("docs.tsv"), "D1\thttp://x\tA title\tsome body text\n").unwrap();
    fs::write(p.join("train_queries.tsv"), "Q1\tbody text\n").unwrap();
    fs::write(p.join("dev_queries.tsv"), "").unwrap();
    fs::write(p.join("train_qrels.txt"), "Q1 0 D1 1\n").unwrap();
    fs::write(p.join("dev_qrels.txt"), "").unwrap();
    let o = dance(&["ingest", "--corpus-dir", s(p), "--out", s(&p.join("out"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "documents: 1"));
    assert!(p.join("out/tokens.json").is_file());

    fs::write(p.join("train_qrels.txt"), "Q1 0 D1 1\nQ1 0 D404 1\n").unwrap();
    let o = dance(&["ingest", "--corpus-dir", s(p), "--out", s(&p.join("out2"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("D404") && err.contains("Q1") && err.contains("line 2"), "{err}");
}

#[test]
fn ingest_parse_error_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("docs.tsv"), "D1\thttp://x\tT\tB\nbroken line\n").unwrap();
    for f in ["train_queries.tsv", "dev_queries.tsv", "train_qrels.txt", "dev_qrels.txt"] {
        fs::write(p.join(f), "").unwrap();
    }
    let o = dance(&["ingest", "--corpus-dir", s(p), "--out", s(&p.join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("docs.tsv:2"), "{}", stderr(&o));
}

#[test]
fn synthetic_ingest_writes_corpus_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    for f in ["docs.tsv", "train_queries.tsv", "dev_queries.tsv", "train_qrels.txt", "dev_qrels.txt", "tokens.json"] {
        assert!(Path::new(&corpus).join(f).is_file(), "{f}");
    }
}

#[test]
fn zero_steps_writes_the_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let out = dir.path().join("t0");
    let o = train_small(&corpus, &out, &["--stage", "norm", "--max-steps", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = Checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.step, 0);
    let fresh: Params = init_params(EncoderShape::new(1024, 8), 9);
    assert_eq!(ck.params, fresh);

    let again = dir.path().join("t0b");
    let o = train_small(&corpus, &again, &["--stage", "norm", "--max-steps", "0", "--init", s(&out.join("checkpoint.bin"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resumed = Checkpoint::load(&again.join("checkpoint.bin")).unwrap();
    assert_eq!(resumed.params, ck.params);
    assert_eq!(resumed.step, ck.step);
}

#[test]
fn identical_invocations_give_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train_small(&corpus, out, &["--max-steps", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let log = fs::read(a.join("steps.csv")).unwrap();
    assert_eq!(log, fs::read(b.join("steps.csv")).unwrap());
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 8);
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
}

#[test]
fn dual_stage_defaults_and_init_requirement() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let o = train_small(&corpus, &dir.path().join("d"), &["--stage", "dual"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--init"));
    let o = train_small(&corpus, &dir.path().join("d"), &["--stage", "dual", "--init", "/nonexistent.bin"]);
    assert_eq!(o.status.code(), Some(4));

    let norm = dir.path().join("n");
    assert!(train_small(&corpus, &norm, &["--max-steps", "3"]).status.success());
    let dual = dir.path().join("d");
    let o = train_small(&corpus, &dual, &["--stage", "dual", "--lambda", "0.1", "--tau", "0.01", "--max-steps", "2", "--init", s(&norm.join("checkpoint.bin"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(dual.join("train_config.json")).unwrap()).unwrap();
    assert_eq!((cfg.dual_weight, cfg.temperature), (0.1, 0.01));
    assert_eq!(Checkpoint::load(&dual.join("checkpoint.bin")).unwrap().step, 5);
}

#[test]
fn non_finite_loss_exits_three_with_dump_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let out = dir.path().join("nf");
    let o = train_small(&corpus, &out, &["--tau", "1e-310", "--max-steps", "2"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let dump = out.join("nonfinite_instance.json");
    assert!(stderr(&o).contains(s(&dump)), "{}", stderr(&o));
    assert!(dump.is_file());
}

#[test]
fn eval_writes_run_and_metrics_in_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let t = dir.path().join("t");
    assert!(train_small(&corpus, &t, &["--max-steps", "2"]).status.success());
    let ck = t.join("checkpoint.bin");
    for (direction, topics) in [("doc", 3), ("query", 3)] {
        let out = dir.path().join(direction);
        let o = dance(&["eval", "--corpus", &corpus, "--checkpoint", s(&ck), "--direction", direction, "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        assert!(m["mrr_at_100"].is_number() && m["ndcg_at_10"].is_number());
        assert_eq!(m["direction"], direction);
        assert_eq!(m["topic_count"], topics);
        let run = fs::read_to_string(out.join("run.trec")).unwrap();
        assert_eq!(run.lines().next().unwrap().split(' ').count(), 6);
    }
    let o = dance(&["eval", "--corpus", &corpus, "--checkpoint", "/nonexistent.bin", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn diagnose_single_and_compare_modes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_small(&corpus, &a, &["--max-steps", "1"]).status.success());
    assert!(train_small(&corpus, &b, &["--max-steps", "4"]).status.success());
    let (ca, cb) = (a.join("checkpoint.bin"), b.join("checkpoint.bin"));

    let single = dir.path().join("single");
    let o = dance(&["diagnose", "--corpus", &corpus, "--checkpoint", s(&ca), "--out", s(&single)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json = fs::read_to_string(single.join("diagnostics.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v.get("deltas").is_none() && v["distances"]["doc_doc"]["mean"].is_number());
    assert_eq!(fs::read_to_string(single.join("projection.csv")).unwrap().lines().next(), Some("id,x,y"));
    assert_eq!(fs::read_to_string(single.join("detaching.csv")).unwrap().lines().next(), Some("id,detaching_distance,tercile"));

    let again = dir.path().join("again");
    assert!(dance(&["diagnose", "--corpus", &corpus, "--checkpoint", s(&ca), "--out", s(&again)]).status.success());
    for f in ["diagnostics.json", "projection.csv", "detaching.csv"] {
        assert_eq!(fs::read(single.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let cmp = dir.path().join("cmp");
    let o = dance(&["diagnose", "--corpus", &corpus, "--compare", s(&ca), s(&cb), "--out", s(&cmp)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cmp.join("diagnostics.json")).unwrap()).unwrap();
    let first = v["first"]["distances"]["que_doc"]["mean"].as_f64().unwrap();
    let second = v["second"]["distances"]["que_doc"]["mean"].as_f64().unwrap();
    assert!((v["deltas"]["que_doc"]["mean_change"].as_f64().unwrap() - (second - first)).abs() <= 1e-15);

    let o = dance(&["diagnose", "--corpus", &corpus, "--checkpoint", "/nonexistent.bin", "--out", s(&cmp)]);
    assert_eq!(o.status.code(), Some(5));
    let o = dance(&["diagnose", "--corpus", "/nonexistent", "--checkpoint", s(&ca), "--out", s(&cmp)]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_small(dir.path());
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, format!(r#"{{"corpus":{:?},"train":{{"max_steps":2,"d_model":8,"batch_size":4,"n_neg":2,"pool_size":4,"temperature":0.05}}}}"#, corpus)).unwrap();
    let out = dir.path().join("o");
    let o = dance(&["train", "--config", s(&cfg), "--tau", "0.2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let used: TrainConfig = serde_json::from_str(&fs::read_to_string(out.join("train_config.json")).unwrap()).unwrap();
    assert_eq!((used.max_steps, used.temperature), (2, 0.2));

    fs::write(&cfg, r#"{"train":{"unknown_knob":1}}"#).unwrap();
    assert_eq!(dance(&["train", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag_with_its_default() {
    let d = TrainConfig::default();
    let o = dance(&["train", "--help"]);
    let help = stdout(&o);
    for (flag, default) in [
        ("--lambda", d.dual_weight.to_string()),
        ("--tau", d.temperature.to_string()),
        ("--max-steps", d.max_steps.to_string()),
        ("--lr", d.lr.to_string()),
        ("--warmup-steps", d.warmup_steps.to_string()),
        ("--batch-size", d.batch_size.to_string()),
        ("--grad-accum", d.grad_accum.to_string()),
        ("--refresh-interval", d.refresh_interval.to_string()),
        ("--n-neg", d.n_neg.to_string()),
        ("--pool-size", d.pool_size.to_string()),
        ("--checkpoint-every", d.checkpoint_every.to_string()),
        ("--d-model", d.d_model.to_string()),
        ("--seed", d.seed.to_string()),
    ] {
        let line = help.lines().skip_while(|l| !l.contains(flag)).take(3).collect::<String>();
        assert!(line.contains(&format!("[default: {default}]")), "{flag}: {line}");
    }
    for cmd in ["ingest", "eval", "diagnose"] {
        let o = dance(&[cmd, "--help"]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("--out") && stdout(&o).contains("--seed"));
    }
    assert!(stdout(&dance(&["eval", "--help"])).contains("[default: 100]"));
}
