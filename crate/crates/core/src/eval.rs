//! Full-ranking retrieval runs and ranking metrics.
//!
//! Document retrieval probes every query of a split against all documents.
//! Query retrieval probes every document with at least one relevant query in
//! the split against all queries of that split, judged by the transposed qrels.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Qrels, Split, TokenSequence};
use crate::encoder::{encode_normalized_batch, EncoderError, ModelParams};
use crate::index::{build_index, IndexError};
use crate::scalar::Scalar;

pub const DEFAULT_CUTOFF: usize = 100;
pub const MRR_DEPTH: usize = 100;
pub const NDCG_DEPTH: usize = 10;
pub const RUN_TAG: &str = "dance";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("{file}:{line}: {message}")]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("run topic {topic:?}: {message}")]
    InvalidRun { topic: String, message: String },
    #[error("encoding {id:?}: {source}")]
    Encode {
        id: String,
        #[source]
        source: EncoderError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Queries probe documents.
    Doc,
    /// Documents probe queries.
    Query,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Doc => "doc",
            Direction::Query => "query",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub candidate: String,
    /// 1-based.
    pub rank: usize,
    pub score: f64,
}

/// Ranked candidate lists per topic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub tag: String,
    pub topics: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new(tag: &str) -> Self {
        Self { tag: tag.to_owned(), topics: BTreeMap::new() }
    }

    /// Adds a topic ranked by descending score; ranks are assigned here.
    pub fn push_ranked(&mut self, topic: &str, ranked: impl IntoIterator<Item = (String, f64)>) {
        let entries = ranked
            .into_iter()
            .enumerate()
            .map(|(i, (candidate, score))| RunEntry { candidate, rank: i + 1, score })
            .collect();
        self.topics.insert(topic.to_owned(), entries);
    }

    /// Checks contiguous ranks, non-increasing scores, unique candidates and the cutoff.
    pub fn validate(&self, cutoff: Option<usize>) -> Result<(), EvalError> {
        for (topic, entries) in &self.topics {
            let bad = |message: String| Err(EvalError::InvalidRun { topic: topic.clone(), message });
            if let Some(k) = cutoff {
                if entries.len() > k {
                    return bad(format!("{} entries exceed cutoff {k}", entries.len()));
                }
            }
            let mut seen = HashSet::new();
            for (i, e) in entries.iter().enumerate() {
                if e.rank != i + 1 {
                    return bad(format!("rank {} at position {}", e.rank, i + 1));
                }
                if !seen.insert(e.candidate.as_str()) {
                    return bad(format!("candidate {:?} listed twice", e.candidate));
                }
                if i > 0 && e.score > entries[i - 1].score {
                    return bad(format!("score increases at rank {}", e.rank));
                }
            }
        }
        Ok(())
    }

    /// `topic Q0 candidate rank score tag`, one line per entry.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (topic, entries) in &self.topics {
            for e in entries {
                writeln!(out, "{topic} Q0 {} {} {} {}", e.candidate, e.rank, e.score, self.tag).unwrap();
            }
        }
        out
    }

    pub fn write_trec(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_trec()).map_err(|source| EvalError::Io { path: path.to_owned(), source })
    }

    pub fn parse_trec(text: &str, file: &Path) -> Result<Self, EvalError> {
        let mut run = RunFile::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::Parse { file: file.to_owned(), line: i + 1, message };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let rank: usize = f[3].parse().map_err(|_| err(format!("bad rank {:?}", f[3])))?;
            let score: f64 = f[4].parse().map_err(|_| err(format!("bad score {:?}", f[4])))?;
            if run.tag.is_empty() {
                run.tag = f[5].to_owned();
            }
            run.topics.entry(f[0].to_owned()).or_default().push(RunEntry { candidate: f[2].to_owned(), rank, score });
        }
        for entries in run.topics.values_mut() {
            entries.sort_by_key(|e| e.rank);
        }
        run.validate(None)?;
        Ok(run)
    }

    pub fn read_trec(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_owned(), source })?;
        Self::parse_trec(&text, path)
    }
}

/// Per-topic metric values and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFragment {
    pub mean: f64,
    pub per_topic: BTreeMap<String, f64>,
    /// Run topics without any relevant judgment; not scored.
    pub unjudged_topics: usize,
}

/// Topics scored: those with at least one relevant judgment. Judged topics
/// missing from the run score 0.
fn scored_topics<'a>(run: &'a RunFile, qrels: &'a Qrels) -> (Vec<(&'a str, &'a [RunEntry])>, usize) {
    let mut topics: BTreeMap<&str, &[RunEntry]> = BTreeMap::new();
    for t in qrels.topics().filter(|t| qrels.has_positive(t)) {
        topics.insert(t, &[]);
    }
    let mut unjudged = 0;
    for (t, entries) in &run.topics {
        match topics.get_mut(t.as_str()) {
            Some(slot) => *slot = entries.as_slice(),
            None => unjudged += 1,
        }
    }
    (topics.into_iter().collect(), unjudged)
}

fn fragment(per_topic: BTreeMap<String, f64>, unjudged_topics: usize) -> MetricFragment {
    let mean = if per_topic.is_empty() { 0.0 } else { per_topic.values().sum::<f64>() / per_topic.len() as f64 };
    if unjudged_topics > 0 {
        log::warn!("{unjudged_topics} run topics have no relevant judgments and were not scored");
    }
    MetricFragment { mean, per_topic, unjudged_topics }
}

fn check_k(k: usize) -> Result<(), EvalError> {
    if k == 0 {
        Err(EvalError::ZeroCutoff)
    } else {
        Ok(())
    }
}

/// Reciprocal rank of the first relevant candidate within the top `k`.
pub fn reciprocal_rank(entries: &[RunEntry], relevant: impl Fn(&str) -> bool, k: usize) -> f64 {
    entries
        .iter()
        .take(k)
        .position(|e| relevant(&e.candidate))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricFragment, EvalError> {
    check_k(k)?;
    let (topics, unjudged) = scored_topics(run, qrels);
    let per_topic = topics
        .into_iter()
        .map(|(t, entries)| (t.to_owned(), reciprocal_rank(entries, |c| qrels.relevance(t, c) >= 1, k)))
        .collect();
    Ok(fragment(per_topic, unjudged))
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k of one topic; `judgments` are that topic's graded qrels.
pub fn ndcg_topic(entries: &[RunEntry], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain(judgments.get(&e.candidate).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| gain(r) * discount(i + 1)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricFragment, EvalError> {
    check_k(k)?;
    let (topics, unjudged) = scored_topics(run, qrels);
    let per_topic = topics
        .into_iter()
        .map(|(t, entries)| {
            let judgments = qrels.judgments(t).expect("scored topics are judged");
            (t.to_owned(), ndcg_topic(entries, judgments, k))
        })
        .collect();
    Ok(fragment(per_topic, unjudged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub mrr_at_100: f64,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub direction: Direction,
    pub split: String,
    pub cutoff: usize,
    pub mrr_at_100: f64,
    pub ndcg_at_10: f64,
    pub topic_count: usize,
    pub unjudged_topics: usize,
    pub per_topic: BTreeMap<String, TopicMetrics>,
}

impl MetricsReport {
    pub fn from_run(run: &RunFile, qrels: &Qrels, direction: Direction, split: Split, cutoff: usize) -> Result<Self, EvalError> {
        let mrr = mrr_at_k(run, qrels, MRR_DEPTH)?;
        let ndcg = ndcg_at_k(run, qrels, NDCG_DEPTH)?;
        let per_topic = mrr
            .per_topic
            .iter()
            .map(|(t, &m)| (t.clone(), TopicMetrics { mrr_at_100: m, ndcg_at_10: ndcg.per_topic[t] }))
            .collect();
        Ok(Self {
            direction,
            split: split.name().to_owned(),
            cutoff,
            mrr_at_100: mrr.mean,
            ndcg_at_10: ndcg.mean,
            topic_count: mrr.per_topic.len(),
            unjudged_topics: mrr.unjudged_topics,
            per_topic,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Relevance judgments for `direction`: the split's qrels, transposed for query retrieval.
pub fn direction_qrels(corpus: &Corpus, split: Split, direction: Direction) -> Qrels {
    match direction {
        Direction::Doc => corpus.qrels(split).clone(),
        Direction::Query => corpus.qrels(split).transposed(),
    }
}

fn encode_all<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[String],
    seqs: &[&TokenSequence],
) -> Result<Vec<crate::encoder::UnitEmbedding<T>>, EvalError> {
    encode_normalized_batch(params, seqs).map_err(|e| match e {
        EncoderError::Item { index, source } => EvalError::Encode { id: ids[index].clone(), source: *source },
        other => EvalError::Encode { id: String::new(), source: other },
    })
}

pub fn retrieve_run<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &Corpus,
    split: Split,
    direction: Direction,
    cutoff: usize,
) -> Result<RunFile, EvalError> {
    check_k(cutoff)?;
    let (doc_ids, doc_seqs): (Vec<String>, Vec<&TokenSequence>) =
        corpus.encodable_docs().map(|(d, t)| (d.doc_id.clone(), t)).unzip();
    let queries = corpus.queries(split);
    let query_ids: Vec<String> = queries.iter().map(|q| q.query_id.clone()).collect();
    let query_seqs: Vec<&TokenSequence> = (0..queries.len()).map(|i| corpus.query_tokens_at(split, i)).collect();

    let (cand_ids, cand_seqs, probe_ids, probe_seqs) = match direction {
        Direction::Doc => (doc_ids, doc_seqs, query_ids, query_seqs),
        Direction::Query => {
            let judged = corpus.qrels(split).transposed();
            let (ids, seqs): (Vec<String>, Vec<&TokenSequence>) =
                doc_ids.into_iter().zip(doc_seqs).filter(|(id, _)| judged.has_positive(id)).unzip();
            (query_ids, query_seqs, ids, seqs)
        }
    };
    let mut run = RunFile::new(RUN_TAG);
    if probe_ids.is_empty() || cand_ids.is_empty() {
        return Ok(run);
    }
    let candidates = encode_all(params, &cand_ids, &cand_seqs)?;
    let probes = encode_all(params, &probe_ids, &probe_seqs)?;
    let index = build_index(cand_ids, &candidates, 0)?;
    let results = index.batch_search(&probes, cutoff, &[])?;
    for (topic, result) in probe_ids.iter().zip(results) {
        run.push_ranked(topic, result.hits.into_iter().map(|h| (h.id, h.score.as_f64())));
    }
    Ok(run)
}

/// Retrieval run plus its metrics for one split and direction.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &Corpus,
    split: Split,
    direction: Direction,
    cutoff: usize,
) -> Result<(RunFile, MetricsReport), EvalError> {
    let run = retrieve_run(params, corpus, split, direction, cutoff)?;
    let report = MetricsReport::from_run(&run, &direction_qrels(corpus, split, direction), direction, split, cutoff)?;
    Ok((run, report))
}
