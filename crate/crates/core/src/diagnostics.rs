//! Embedding-space analyses: pairwise distance statistics, recall-frequency
//! buckets, detaching distances, per-group ranking quality and a 2D projection.
//!
//! Distances are cosine distances `1 − a·b` on unit embeddings.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Qrels, Split, TokenSequence};
use crate::encoder::{encode_normalized_batch, EncoderError, ModelParams, UnitEmbedding};
use crate::eval::{direction_qrels, mrr_at_k, ndcg_at_k, retrieve_run, Direction, EvalError, RunFile, MRR_DEPTH, NDCG_DEPTH};
use crate::scalar::{dot, Scalar};

/// Pair counts above this are sampled rather than enumerated.
pub const DEFAULT_SAMPLE_BUDGET: usize = 10_000_000;

const JACOBI_MAX_SWEEPS: usize = 100;
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{0}: not enough items to form pairs")]
    InsufficientPairs(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("{ids} ids but {rows} embeddings")]
    LengthMismatch { ids: usize, rows: usize },
    #[error("sample budget must be at least 1")]
    ZeroBudget,
    #[error("encoding {id:?}: {source}")]
    Encode {
        id: String,
        #[source]
        source: EncoderError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    DocDoc,
    QueQue,
    QueDoc,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::DocDoc => "doc-doc",
            PairKind::QueQue => "que-que",
            PairKind::QueDoc => "que-doc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub pair_kind: PairKind,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub n_pairs: usize,
    pub sampled: bool,
}

fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    1.0 - dot(a, b).as_f64()
}

fn check_dims<T: Scalar>(sets: &[&[UnitEmbedding<T>]]) -> Result<(), DiagnosticsError> {
    let mut dims = sets.iter().flat_map(|s| s.iter().map(UnitEmbedding::dim));
    if let Some(d) = dims.next() {
        if let Some(bad) = dims.find(|&x| x != d) {
            return Err(DiagnosticsError::Dimension(d, bad));
        }
    }
    Ok(())
}

/// Two-pass mean and population variance over per-row partial sums, summed in row order.
fn mean_variance(rows: &[Vec<f64>]) -> (f64, f64, usize) {
    let n: usize = rows.iter().map(Vec::len).sum();
    let mean = rows.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / n as f64;
    let var = rows.iter().map(|r| r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()).sum::<f64>() / n as f64;
    (mean, var, n)
}

/// Mean and variance of cosine distance over pairs drawn from `a × b`.
///
/// With `same_set`, `b` is ignored and the pairs are the unordered pairs of
/// distinct items of `a`. All pairs are used when they number at most
/// `sample_budget`; otherwise `sample_budget` pairs are drawn uniformly with
/// replacement, never pairing an item with itself.
pub fn pairwise_distance_stats<T: Scalar, R: Rng + ?Sized>(
    pair_kind: PairKind,
    a: &[UnitEmbedding<T>],
    b: &[UnitEmbedding<T>],
    same_set: bool,
    sample_budget: usize,
    rng: &mut R,
) -> Result<DistanceStats, DiagnosticsError> {
    if sample_budget == 0 {
        return Err(DiagnosticsError::ZeroBudget);
    }
    let name = pair_kind.name();
    let (n_a, n_b) = (a.len(), if same_set { a.len() } else { b.len() });
    let total = if same_set { n_a * n_a.saturating_sub(1) / 2 } else { n_a * n_b };
    if total == 0 {
        return Err(DiagnosticsError::InsufficientPairs(name));
    }
    check_dims(&[a, b])?;
    let other = if same_set { a } else { b };
    let rows: Vec<Vec<f64>> = if total <= sample_budget {
        a.par_iter()
            .enumerate()
            .map(|(i, x)| {
                let start = if same_set { i + 1 } else { 0 };
                other[start..].iter().map(|y| cosine_distance(x.as_slice(), y.as_slice())).collect()
            })
            .collect()
    } else {
        let pairs: Vec<(usize, usize)> = (0..sample_budget)
            .map(|_| {
                let i = rng.gen_range(0..n_a);
                let mut j = rng.gen_range(0..if same_set { n_a - 1 } else { n_b });
                if same_set && j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect();
        vec![pairs.par_iter().map(|&(i, j)| cosine_distance(a[i].as_slice(), other[j].as_slice())).collect()]
    };
    let (mean, variance, n_pairs) = mean_variance(&rows);
    Ok(DistanceStats { pair_kind, mean, variance: variance.max(0.0), n_pairs, sampled: total > sample_budget })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallBucket {
    Rare,
    Medium,
    Frequent,
}

impl RecallBucket {
    pub const ALL: [RecallBucket; 3] = [RecallBucket::Rare, RecallBucket::Medium, RecallBucket::Frequent];

    /// 1 → rare, 2 → medium, 3 or more → frequent; 0 has no bucket.
    pub fn of(count: usize) -> Option<Self> {
        match count {
            0 => None,
            1 => Some(RecallBucket::Rare),
            2 => Some(RecallBucket::Medium),
            _ => Some(RecallBucket::Frequent),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecallBucket::Rare => "rare",
            RecallBucket::Medium => "medium",
            RecallBucket::Frequent => "frequent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallFrequency {
    /// Number of topic lists each candidate appears in, within the cutoff.
    pub counts: BTreeMap<String, usize>,
    pub buckets: BTreeMap<RecallBucket, Vec<String>>,
}

impl RecallFrequency {
    pub fn bucket_of(&self, id: &str) -> Option<RecallBucket> {
        self.counts.get(id).and_then(|&c| RecallBucket::of(c))
    }

    pub fn populations(&self) -> BTreeMap<RecallBucket, usize> {
        self.buckets.iter().map(|(b, m)| (*b, m.len())).collect()
    }
}

pub fn recall_frequency(run: &RunFile, cutoff: usize) -> RecallFrequency {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for entries in run.topics.values() {
        let distinct: HashSet<&str> = entries.iter().take(cutoff).map(|e| e.candidate.as_str()).collect();
        for c in distinct {
            *counts.entry(c.to_owned()).or_default() += 1;
        }
    }
    let mut buckets: BTreeMap<RecallBucket, Vec<String>> = RecallBucket::ALL.iter().map(|&b| (b, Vec::new())).collect();
    for (id, &c) in &counts {
        if let Some(b) = RecallBucket::of(c) {
            buckets.get_mut(&b).unwrap().push(id.clone());
        }
    }
    RecallFrequency { counts, buckets }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tercile {
    Close,
    Medium,
    Far,
}

impl Tercile {
    pub const ALL: [Tercile; 3] = [Tercile::Close, Tercile::Medium, Tercile::Far];

    pub fn name(self) -> &'static str {
        match self {
            Tercile::Close => "close",
            Tercile::Medium => "medium",
            Tercile::Far => "far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetachingRow {
    pub id: String,
    pub detaching_distance: f64,
    pub tercile: Tercile,
}

/// Rows in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetachingDistanceTable {
    pub rows: Vec<DetachingRow>,
}

impl DetachingDistanceTable {
    pub fn tercile_of(&self, id: &str) -> Option<Tercile> {
        self.rows.iter().find(|r| r.id == id).map(|r| r.tercile)
    }

    pub fn groups(&self) -> BTreeMap<String, Tercile> {
        self.rows.iter().map(|r| (r.id.clone(), r.tercile)).collect()
    }

    pub fn tercile_sizes(&self) -> BTreeMap<Tercile, usize> {
        let mut sizes: BTreeMap<Tercile, usize> = Tercile::ALL.iter().map(|&t| (t, 0)).collect();
        for r in &self.rows {
            *sizes.get_mut(&r.tercile).unwrap() += 1;
        }
        sizes
    }

    pub fn tercile_means(&self) -> BTreeMap<Tercile, f64> {
        let mut acc: BTreeMap<Tercile, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.tercile).or_default();
            e.0 += r.detaching_distance;
            e.1 += 1;
        }
        acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
    }

    pub fn to_csv(&self, prefix: &str) -> String {
        let mut out = String::new();
        for r in &self.rows {
            writeln!(out, "{prefix}{},{},{}", r.id, r.detaching_distance, r.tercile.name()).unwrap();
        }
        out
    }
}

/// Each item's mean cosine distance to the others of its set.
///
/// When the set has more than `sample_budget + 1` items, each item is compared
/// with `sample_budget` others drawn without replacement. Terciles follow
/// ascending distance, ties broken by id, with sizes differing by at most 1.
pub fn detaching_distance<T: Scalar, R: Rng + ?Sized>(
    ids: &[String],
    embeddings: &[UnitEmbedding<T>],
    sample_budget: usize,
    rng: &mut R,
) -> Result<DetachingDistanceTable, DiagnosticsError> {
    if ids.len() != embeddings.len() {
        return Err(DiagnosticsError::LengthMismatch { ids: ids.len(), rows: embeddings.len() });
    }
    if sample_budget == 0 {
        return Err(DiagnosticsError::ZeroBudget);
    }
    let n = ids.len();
    if n < 2 {
        return Err(DiagnosticsError::InsufficientPairs("detaching distance"));
    }
    check_dims(&[embeddings])?;
    let others: Option<Vec<Vec<usize>>> = (n - 1 > sample_budget).then(|| {
        (0..n)
            .map(|i| {
                sample(rng, n - 1, sample_budget)
                    .into_iter()
                    .map(|j| if j >= i { j + 1 } else { j })
                    .collect()
            })
            .collect()
    });
    let distances: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = embeddings[i].as_slice();
            let (sum, count) = match &others {
                Some(o) => (o[i].iter().map(|&j| cosine_distance(x, embeddings[j].as_slice())).sum::<f64>(), o[i].len()),
                None => (
                    (0..n).filter(|&j| j != i).map(|j| cosine_distance(x, embeddings[j].as_slice())).sum::<f64>(),
                    n - 1,
                ),
            };
            sum / count as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then_with(|| ids[a].cmp(&ids[b])));
    let mut tercile = vec![Tercile::Close; n];
    for (pos, &i) in order.iter().enumerate() {
        tercile[i] = Tercile::ALL[pos * 3 / n];
    }
    let rows = (0..n)
        .map(|i| DetachingRow { id: ids[i].clone(), detaching_distance: distances[i], tercile: tercile[i] })
        .collect();
    Ok(DetachingDistanceTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupMetric {
    NdcgAt10,
    MrrAt100,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValue {
    pub value: f64,
    pub topic_count: usize,
}

/// The metric averaged over the scored topics of each group.
///
/// `grouping` maps topic ids to group labels; topics without a label are left
/// out. A label listed in `labels` with no scored topic maps to `None`.
pub fn per_group_metrics<G: Ord + Clone>(
    run: &RunFile,
    qrels: &Qrels,
    grouping: &BTreeMap<String, G>,
    labels: &[G],
    metric: GroupMetric,
) -> Result<BTreeMap<G, Option<GroupValue>>, DiagnosticsError> {
    let fragment = match metric {
        GroupMetric::NdcgAt10 => ndcg_at_k(run, qrels, NDCG_DEPTH)?,
        GroupMetric::MrrAt100 => mrr_at_k(run, qrels, MRR_DEPTH)?,
    };
    let mut acc: BTreeMap<G, (f64, usize)> = BTreeMap::new();
    for (topic, &v) in &fragment.per_topic {
        if let Some(g) = grouping.get(topic) {
            let e = acc.entry(g.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(labels
        .iter()
        .map(|g| {
            let value = acc.get(g).map(|&(s, n)| GroupValue { value: s / n as f64, topic_count: n });
            (g.clone(), value)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// Variance captured by each component.
    pub component_variance: [f64; 2],
    /// Unit principal directions, in the embedding space.
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    /// Fewer than two non-zero principal components; `y` is then all zero.
    pub rank_deficient: bool,
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,x,y\n");
        for (id, [x, y]) in self.ids.iter().zip(&self.coords) {
            writeln!(out, "{id},{x},{y}").unwrap();
        }
        out
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (`vecs[k]` is the k-th).
fn symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off <= scale * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|k| (0..n).map(|i| v[i][k]).collect()).collect();
    (values, vectors)
}

/// Top-2 principal components of the centered embeddings.
///
/// Each component's largest-magnitude coordinate (first on ties) is made positive.
pub fn project_2d<T: Scalar>(ids: &[String], embeddings: &[UnitEmbedding<T>]) -> Result<Projection, DiagnosticsError> {
    if ids.len() != embeddings.len() {
        return Err(DiagnosticsError::LengthMismatch { ids: ids.len(), rows: embeddings.len() });
    }
    let n = ids.len();
    if n < 2 {
        return Err(DiagnosticsError::InsufficientPairs("projection"));
    }
    check_dims(&[embeddings])?;
    let d = embeddings[0].dim();
    let x: Vec<Vec<f64>> = embeddings.iter().map(|e| e.as_slice().iter().map(|v| v.as_f64()).collect()).collect();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / n as f64).collect())
        .collect();
    let (values, vectors) = symmetric_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut component_variance = [0.0; 2];
    let mut rank_deficient = false;
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = values[k].max(0.0);
        if lambda <= RANK_TOLERANCE * top.max(f64::MIN_POSITIVE) {
            rank_deficient = true;
            continue;
        }
        let mut v = vectors[k].clone();
        let lead = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components[slot] = v;
        component_variance[slot] = lambda;
    }
    if d < 2 {
        rank_deficient = true;
    }
    let coords = centered
        .iter()
        .map(|r| {
            let p = |c: &[f64]| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Projection { ids: ids.to_vec(), coords, component_variance, components, mean, rank_deficient })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub split: Split,
    pub cutoff: usize,
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { split: Split::Dev, cutoff: crate::eval::DEFAULT_CUTOFF, sample_budget: DEFAULT_SAMPLE_BUDGET, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub doc_doc: DistanceStats,
    pub que_que: DistanceStats,
    pub que_doc: DistanceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TercileSummary {
    pub sizes: BTreeMap<Tercile, usize>,
    pub mean_distance: BTreeMap<Tercile, f64>,
}

impl From<&DetachingDistanceTable> for TercileSummary {
    fn from(t: &DetachingDistanceTable) -> Self {
        Self { sizes: t.tercile_sizes(), mean_distance: t.tercile_means() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMetrics<G: Ord> {
    pub ndcg_at_10: BTreeMap<G, Option<GroupValue>>,
    pub mrr_at_100: BTreeMap<G, Option<GroupValue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub split: Split,
    pub n_documents: usize,
    pub n_queries: usize,
    pub distances: DistanceSummary,
    /// Bucket populations of documents recalled by the document-retrieval run.
    pub doc_recall_buckets: BTreeMap<RecallBucket, usize>,
    /// Bucket populations of queries recalled by the query-retrieval run.
    pub query_recall_buckets: BTreeMap<RecallBucket, usize>,
    pub doc_detaching: TercileSummary,
    pub query_detaching: TercileSummary,
    /// Document retrieval, topics grouped by the query's recall bucket in the query-retrieval run.
    pub doc_retrieval_by_query_recall: GroupedMetrics<RecallBucket>,
    /// Query retrieval, topics grouped by the document's recall bucket in the document-retrieval run.
    pub query_retrieval_by_doc_recall: GroupedMetrics<RecallBucket>,
    pub doc_retrieval_by_query_tercile: GroupedMetrics<Tercile>,
    pub query_retrieval_by_doc_tercile: GroupedMetrics<Tercile>,
    pub projection_variance: [f64; 2],
    pub projection_rank_deficient: bool,
}

/// Report plus the per-item tables written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub report: DiagnosticsReport,
    pub doc_detaching: DetachingDistanceTable,
    pub query_detaching: DetachingDistanceTable,
    pub projection: Projection,
}

pub const DOC_PREFIX: &str = "doc:";
pub const QUERY_PREFIX: &str = "query:";

impl Diagnostics {
    /// `id,detaching_distance,tercile` for documents then queries, ids prefixed by kind.
    pub fn detaching_csv(&self) -> String {
        format!(
            "id,detaching_distance,tercile\n{}{}",
            self.doc_detaching.to_csv(DOC_PREFIX),
            self.query_detaching.to_csv(QUERY_PREFIX)
        )
    }
}

fn encode_set<T: Scalar>(params: &ModelParams<T>, ids: &[String], seqs: &[&TokenSequence]) -> Result<Vec<UnitEmbedding<T>>, DiagnosticsError> {
    encode_normalized_batch(params, seqs).map_err(|e| match e {
        EncoderError::Item { index, source } => DiagnosticsError::Encode { id: ids[index].clone(), source: *source },
        other => DiagnosticsError::Encode { id: String::new(), source: other },
    })
}

fn grouped<G: Ord + Clone>(run: &RunFile, qrels: &Qrels, grouping: &BTreeMap<String, G>, labels: &[G]) -> Result<GroupedMetrics<G>, DiagnosticsError> {
    Ok(GroupedMetrics {
        ndcg_at_10: per_group_metrics(run, qrels, grouping, labels, GroupMetric::NdcgAt10)?,
        mrr_at_100: per_group_metrics(run, qrels, grouping, labels, GroupMetric::MrrAt100)?,
    })
}

fn bucket_grouping(freq: &RecallFrequency) -> BTreeMap<String, RecallBucket> {
    freq.counts.keys().filter_map(|id| freq.bucket_of(id).map(|b| (id.clone(), b))).collect()
}

/// All analyses for one checkpoint.
///
/// Populations are all non-empty documents and the queries of `cfg.split`;
/// both retrieval runs are computed on that split.
pub fn diagnose<T: Scalar>(params: &ModelParams<T>, corpus: &Corpus, cfg: &DiagnosticsConfig) -> Result<Diagnostics, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (doc_ids, doc_seqs): (Vec<String>, Vec<&TokenSequence>) =
        corpus.encodable_docs().map(|(d, t)| (d.doc_id.clone(), t)).unzip();
    let queries = corpus.queries(cfg.split);
    let query_ids: Vec<String> = queries.iter().map(|q| q.query_id.clone()).collect();
    let query_seqs: Vec<&TokenSequence> = (0..queries.len()).map(|i| corpus.query_tokens_at(cfg.split, i)).collect();
    let docs = encode_set(params, &doc_ids, &doc_seqs)?;
    let qs = encode_set(params, &query_ids, &query_seqs)?;

    let budget = cfg.sample_budget;
    let distances = DistanceSummary {
        doc_doc: pairwise_distance_stats(PairKind::DocDoc, &docs, &docs, true, budget, &mut rng)?,
        que_que: pairwise_distance_stats(PairKind::QueQue, &qs, &qs, true, budget, &mut rng)?,
        que_doc: pairwise_distance_stats(PairKind::QueDoc, &qs, &docs, false, budget, &mut rng)?,
    };

    let doc_run = retrieve_run(params, corpus, cfg.split, Direction::Doc, cfg.cutoff)?;
    let query_run = retrieve_run(params, corpus, cfg.split, Direction::Query, cfg.cutoff)?;
    let doc_qrels = direction_qrels(corpus, cfg.split, Direction::Doc);
    let query_qrels = direction_qrels(corpus, cfg.split, Direction::Query);
    let doc_freq = recall_frequency(&doc_run, cfg.cutoff);
    let query_freq = recall_frequency(&query_run, cfg.cutoff);

    let doc_detaching = detaching_distance(&doc_ids, &docs, budget, &mut rng)?;
    let query_detaching = detaching_distance(&query_ids, &qs, budget, &mut rng)?;

    let mut all_ids: Vec<String> = doc_ids.iter().map(|i| format!("{DOC_PREFIX}{i}")).collect();
    all_ids.extend(query_ids.iter().map(|i| format!("{QUERY_PREFIX}{i}")));
    let all: Vec<UnitEmbedding<T>> = docs.iter().chain(&qs).cloned().collect();
    let projection = project_2d(&all_ids, &all)?;

    let report = DiagnosticsReport {
        split: cfg.split,
        n_documents: docs.len(),
        n_queries: qs.len(),
        distances,
        doc_recall_buckets: doc_freq.populations(),
        query_recall_buckets: query_freq.populations(),
        doc_detaching: (&doc_detaching).into(),
        query_detaching: (&query_detaching).into(),
        doc_retrieval_by_query_recall: grouped(&doc_run, &doc_qrels, &bucket_grouping(&query_freq), &RecallBucket::ALL)?,
        query_retrieval_by_doc_recall: grouped(&query_run, &query_qrels, &bucket_grouping(&doc_freq), &RecallBucket::ALL)?,
        doc_retrieval_by_query_tercile: grouped(&doc_run, &doc_qrels, &query_detaching.groups(), &Tercile::ALL)?,
        query_retrieval_by_doc_tercile: grouped(&query_run, &query_qrels, &doc_detaching.groups(), &Tercile::ALL)?,
        projection_variance: projection.component_variance,
        projection_rank_deficient: projection.rank_deficient,
    };
    Ok(Diagnostics { report, doc_detaching, query_detaching, projection })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsDelta {
    pub mean_change: f64,
    pub variance_change: f64,
}

impl StatsDelta {
    fn between(a: &DistanceStats, b: &DistanceStats) -> Self {
        Self { mean_change: b.mean - a.mean, variance_change: b.variance - a.variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDeltas {
    pub doc_doc: StatsDelta,
    pub que_que: StatsDelta,
    pub que_doc: StatsDelta,
}

/// Two reports side by side with `second − first` changes of the distance statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsComparison {
    pub first: DiagnosticsReport,
    pub second: DiagnosticsReport,
    pub deltas: DistanceDeltas,
}

pub fn compare(first: DiagnosticsReport, second: DiagnosticsReport) -> DiagnosticsComparison {
    let (a, b) = (&first.distances, &second.distances);
    let deltas = DistanceDeltas {
        doc_doc: StatsDelta::between(&a.doc_doc, &b.doc_doc),
        que_que: StatsDelta::between(&a.que_que, &b.que_que),
        que_doc: StatsDelta::between(&a.que_doc, &b.que_doc),
    };
    DiagnosticsComparison { first, second, deltas }
}
