use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dance_core::checkpoint::CheckpointError;
use dance_core::corpus::{
    generate_synthetic_corpus, load_dir, load_tsv_corpus, write_dir, Corpus, CorpusError, CorpusPaths, Split,
};
use dance_core::diagnostics::{compare, diagnose as run_diagnostics, Diagnostics, DiagnosticsConfig, DistanceStats};
use dance_core::eval::evaluate;
use dance_core::trainer::{run_training, Stage, TrainError};
use dance_core::Checkpoint;
use serde::Serialize;

use crate::args::{DiagnoseArgs, EvalArgs, IngestArgs, TrainArgs};
use crate::config::ExperimentConfig;
use crate::{CliError, DETACHING_FILE, DIAGNOSTICS_FILE, METRICS_FILE, PROJECTION_FILE, RUN_FILE, TRAIN_CONFIG_FILE};

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn base_config(common: &crate::args::Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn corpus_summary(corpus: &Corpus) -> String {
    let mut s = String::new();
    writeln!(s, "documents: {}", corpus.documents().len()).unwrap();
    writeln!(s, "empty documents: {}", corpus.empty_doc_ids().len()).unwrap();
    for split in Split::ALL {
        writeln!(s, "{} queries: {}", split.name(), corpus.queries(split).len()).unwrap();
    }
    for split in Split::ALL {
        writeln!(s, "{} qrels: {}", split.name(), corpus.qrels(split).len()).unwrap();
    }
    s
}

fn corpus_paths(a: &IngestArgs) -> Result<CorpusPaths, CliError> {
    let base = a.corpus_dir.as_deref().map(CorpusPaths::in_dir);
    let pick = |flag: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| from_dir.cloned())
            .ok_or_else(|| CliError::data(format!("no {name} file: pass --corpus-dir or --{name}")))
    };
    Ok(CorpusPaths {
        documents: pick(&a.docs, base.as_ref().map(|b| &b.documents), "docs")?,
        train_queries: pick(&a.train_queries, base.as_ref().map(|b| &b.train_queries), "train-queries")?,
        dev_queries: pick(&a.dev_queries, base.as_ref().map(|b| &b.dev_queries), "dev-queries")?,
        train_qrels: pick(&a.train_qrels, base.as_ref().map(|b| &b.train_qrels), "train-qrels")?,
        dev_qrels: pick(&a.dev_qrels, base.as_ref().map(|b| &b.dev_qrels), "dev-qrels")?,
    })
}

pub fn ingest(a: &IngestArgs) -> Result<String, CliError> {
    let mut cfg = base_config(&a.common)?;
    let tok = &mut cfg.tokenizer;
    set(&mut tok.vocab_buckets, a.vocab_buckets);
    set(&mut tok.query_max_len, a.query_max_len);
    set(&mut tok.doc_max_len, a.doc_max_len);
    let data = |e: CorpusError| CliError::data(e.to_string());
    let from_files = a.corpus_dir.is_some() || a.docs.is_some();
    let corpus = if a.synthetic || (cfg.synthetic.is_some() && !from_files) {
        let mut syn = cfg.synthetic.unwrap_or_default();
        set(&mut syn.n_topics, a.n_topics);
        set(&mut syn.docs_per_topic, a.docs_per_topic);
        set(&mut syn.queries_per_topic, a.queries_per_topic);
        set(&mut syn.vocab_per_topic, a.vocab_per_topic);
        set(&mut syn.noise_rate, a.noise_rate);
        set(&mut syn.seed, a.common.seed);
        generate_synthetic_corpus(&syn, cfg.tokenizer).map_err(data)?
    } else {
        load_tsv_corpus(&corpus_paths(a)?, cfg.tokenizer).map_err(data)?
    };
    let out = cfg.out_dir()?;
    write_dir(&corpus, out).map_err(|e| match e {
        CorpusError::Io { .. } => CliError::io(e.to_string()),
        e => data(e),
    })?;
    Ok(corpus_summary(&corpus))
}

fn load_checkpoint(path: &Path, on_missing: fn(String) -> CliError, on_bad: fn(String) -> CliError) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(on_missing(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).map_err(|e| on_bad(e.to_string()))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::NoTrainingPairs => CliError::data(e.to_string()),
        TrainError::Checkpoint(CheckpointError::TokenizerMismatch { .. }) => CliError::data(e.to_string()),
        TrainError::Io { .. } | TrainError::Checkpoint(CheckpointError::Io { .. }) => CliError::io(e.to_string()),
        e => CliError::training(e.to_string()),
    }
}

pub fn train(a: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = base_config(&a.common)?;
    if a.corpus.is_some() {
        cfg.corpus = a.corpus.clone();
    }
    if a.init.is_some() {
        cfg.init = a.init.clone();
    }
    let t = &mut cfg.train;
    set(&mut t.stage, a.stage.map(Stage::from));
    set(&mut t.dual_weight, a.lambda);
    set(&mut t.temperature, a.tau);
    set(&mut t.max_steps, a.max_steps);
    set(&mut t.seed, a.common.seed);
    set(&mut t.lr, a.lr);
    set(&mut t.warmup_steps, a.warmup_steps);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.grad_accum, a.grad_accum);
    set(&mut t.refresh_interval, a.refresh_interval);
    set(&mut t.n_neg, a.n_neg);
    set(&mut t.pool_size, a.pool_size);
    set(&mut t.checkpoint_every, a.checkpoint_every);
    set(&mut t.d_model, a.d_model);
    if t.stage == Stage::Normalization && t.dual_weight != 0.0 && a.lambda.is_some() {
        log::warn!("--lambda is ignored by the normalization stage");
    }
    if t.stage == Stage::Dual && cfg.init.is_none() {
        return Err(CliError::data("--stage dual requires a normalization-stage checkpoint via --init".into()));
    }
    let corpus = load_dir(cfg.corpus_dir(CliError::missing)?, cfg.tokenizer).map_err(|e| CliError::data(e.to_string()))?;
    let init = cfg.init.as_deref().map(|p| load_checkpoint(p, CliError::missing, CliError::data)).transpose()?;
    let out = cfg.out_dir()?;
    write_text(&out.join(TRAIN_CONFIG_FILE), &pretty_json(&cfg.train))?;
    let result = run_training(&cfg.train, &corpus, init, Some(out)).map_err(train_error)?;
    let mut s = String::new();
    writeln!(s, "steps run: {}", result.reports.len()).unwrap();
    writeln!(s, "step: {}", result.checkpoint.step).unwrap();
    if let Some(last) = result.reports.last() {
        writeln!(s, "prime loss: {}", last.prime_loss).unwrap();
        writeln!(s, "dual loss: {}", last.dual_loss).unwrap();
    }
    writeln!(s, "checkpoint: {}", out.join(crate::CHECKPOINT_FILE).display()).unwrap();
    Ok(s)
}

pub fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let mut cfg = base_config(&a.common)?;
    if a.corpus.is_some() {
        cfg.corpus = a.corpus.clone();
    }
    set(&mut cfg.eval.direction, a.direction.map(Into::into));
    set(&mut cfg.eval.cutoff, a.cutoff);
    set(&mut cfg.eval.split, a.split.map(Into::into));
    let path = a.checkpoint.as_deref().ok_or_else(|| CliError::missing("no checkpoint: pass --checkpoint".into()))?;
    let ck = load_checkpoint(path, CliError::missing, CliError::data)?;
    let corpus = load_dir(cfg.corpus_dir(CliError::missing)?, cfg.tokenizer).map_err(|e| CliError::data(e.to_string()))?;
    ck.check_tokenizer(corpus.tokenizer()).map_err(|e| CliError::data(e.to_string()))?;
    let e = cfg.eval;
    let (run, report) = evaluate(&ck.params, &corpus, e.split, e.direction, e.cutoff).map_err(|e| CliError::data(e.to_string()))?;
    let out = cfg.out_dir()?;
    run.write_trec(&out.join(RUN_FILE)).map_err(|e| CliError::io(e.to_string()))?;
    write_text(&out.join(METRICS_FILE), &report.to_json())?;
    let mut s = String::new();
    writeln!(s, "direction: {}", e.direction.name()).unwrap();
    writeln!(s, "split: {}", e.split.name()).unwrap();
    writeln!(s, "topics: {}", report.topic_count).unwrap();
    writeln!(s, "mrr_at_100: {}", report.mrr_at_100).unwrap();
    writeln!(s, "ndcg_at_10: {}", report.ndcg_at_10).unwrap();
    Ok(s)
}

fn write_tables(out: &Path, d: &Diagnostics, suffix: &str) -> Result<(), CliError> {
    let name = |file: &str| match suffix {
        "" => file.to_owned(),
        s => file.replacen('.', &format!("_{s}."), 1),
    };
    write_text(&out.join(name(DETACHING_FILE)), &d.detaching_csv())?;
    write_text(&out.join(name(PROJECTION_FILE)), &d.projection.to_csv())
}

fn distance_line(s: &mut String, d: &DistanceStats) {
    writeln!(s, "{}: mean {:.6} variance {:.6} pairs {}", d.pair_kind.name(), d.mean, d.variance, d.n_pairs).unwrap();
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<String, CliError> {
    let mut cfg = base_config(&a.common)?;
    if a.corpus.is_some() {
        cfg.corpus = a.corpus.clone();
    }
    let ds = &mut cfg.diagnostics;
    set(&mut ds.sample_budget, a.sample_budget);
    set(&mut ds.cutoff, a.cutoff);
    set(&mut ds.split, a.split.map(Into::into));
    let paths: Vec<PathBuf> = match (&a.checkpoint, &a.compare) {
        (Some(p), None) => vec![p.clone()],
        (None, Some(pair)) => pair.clone(),
        _ => return Err(CliError::diagnostics("pass --checkpoint PATH or --compare FIRST SECOND".into())),
    };
    let corpus = load_dir(cfg.corpus_dir(CliError::diagnostics)?, cfg.tokenizer).map_err(|e| CliError::diagnostics(e.to_string()))?;
    let dcfg = DiagnosticsConfig {
        split: cfg.diagnostics.split,
        cutoff: cfg.diagnostics.cutoff,
        sample_budget: cfg.diagnostics.sample_budget,
        seed: a.common.seed.unwrap_or(cfg.train.seed),
    };
    let mut results = Vec::with_capacity(paths.len());
    for p in &paths {
        let ck = load_checkpoint(p, CliError::diagnostics, CliError::diagnostics)?;
        ck.check_tokenizer(corpus.tokenizer()).map_err(|e| CliError::diagnostics(e.to_string()))?;
        results.push(run_diagnostics(&ck.params, &corpus, &dcfg).map_err(|e| CliError::diagnostics(e.to_string()))?);
    }
    let out = cfg.out_dir()?;
    let mut s = String::new();
    if let [single] = results.as_slice() {
        write_text(&out.join(DIAGNOSTICS_FILE), &pretty_json(&single.report))?;
        write_tables(out, single, "")?;
        let d = &single.report.distances;
        for stats in [&d.doc_doc, &d.que_que, &d.que_doc] {
            distance_line(&mut s, stats);
        }
    } else {
        let second = results.pop().unwrap();
        let first = results.pop().unwrap();
        write_tables(out, &first, "first")?;
        write_tables(out, &second, "second")?;
        let comparison = compare(first.report, second.report);
        write_text(&out.join(DIAGNOSTICS_FILE), &pretty_json(&comparison))?;
        let d = &comparison.deltas;
        for (name, delta) in [("doc-doc", &d.doc_doc), ("que-que", &d.que_que), ("que-doc", &d.que_doc)] {
            writeln!(s, "{name}: mean change {:+.6} variance change {:+.6}", delta.mean_change, delta.variance_change).unwrap();
        }
    }
    Ok(s)
}
