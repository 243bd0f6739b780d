//! Two-stage training: a normalization stage on the document-retrieval loss
//! alone, then a dual stage adding the weighted query-retrieval loss.
//!
//! Negatives are mined from index snapshots that are rebuilt every
//! `refresh_interval` steps; between refreshes probes are encoded with the
//! current parameters while candidates come from the stale snapshot.
//!
//! Randomness is a pure function of `(seed, step)`: each step draws from its
//! own ChaCha stream, with separate streams for document-retrieval and
//! query-retrieval sampling. Resuming from a checkpoint therefore needs no
//! generator state, and the document-retrieval path is unaffected by whether
//! query-retrieval instances are built.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::{Corpus, Split, TokenSequence};
use crate::encoder::{backprop_embedding_grads, encode_normalized, encode_normalized_batch, EncoderError, EncoderShape, ModelParams, ParamGrads, UnitEmbedding};
use crate::index::{build_index, FlatIndex, IndexError, DEFAULT_NEGATIVES, DEFAULT_POOL_SIZE};
use crate::loss::{norm_temp_scaled_loss, ContrastiveInstance, LossConfig, LossError, LossOutput};
use crate::optim::AdamState;
use crate::scalar::Scalar;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STEPS_FILE: &str = "steps.csv";
pub const DUMP_FILE: &str = "nonfinite_instance.json";
pub const STEPS_HEADER: &str = "step,prime_loss,dual_loss,combined_loss,grad_norm,refreshed";

const STREAM_PRIME: u64 = 0;
const STREAM_DUAL: u64 = 1;
const STREAM_INIT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Normalization,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    /// λ; ignored in the normalization stage.
    pub dual_weight: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub refresh_interval: u64,
    pub n_neg: usize,
    pub pool_size: usize,
    pub stage: Stage,
    /// Steps run by one invocation; a resumed run continues the step counter.
    pub max_steps: u64,
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Embedding width for freshly initialized parameters.
    pub d_model: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: crate::loss::DEFAULT_TEMPERATURE,
            dual_weight: crate::loss::DEFAULT_DUAL_WEIGHT,
            lr: 1e-3,
            warmup_steps: 100,
            batch_size: 16,
            grad_accum: 1,
            refresh_interval: 100,
            n_neg: DEFAULT_NEGATIVES,
            pool_size: DEFAULT_POOL_SIZE,
            stage: Stage::Normalization,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            d_model: 64,
        }
    }
}

impl TrainConfig {
    /// Large-scale optimizer settings: lr 5e-6, warmup 3000, accumulation 2.
    pub fn large_scale() -> Self {
        Self { lr: 5e-6, warmup_steps: 3000, grad_accum: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        LossConfig { temperature: self.temperature, dual_weight: self.dual_weight, normalized: true }
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("grad_accum", self.grad_accum),
            ("n_neg", self.n_neg),
            ("d_model", self.d_model),
            ("refresh_interval", self.refresh_interval as usize),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.pool_size < self.n_neg {
            return bad(format!("pool_size ({}) must be >= n_neg ({})", self.pool_size, self.n_neg));
        }
        Ok(())
    }

    /// λ actually applied: zero in the normalization stage.
    pub fn effective_dual_weight(&self) -> f64 {
        match self.stage {
            Stage::Normalization => 0.0,
            Stage::Dual => self.dual_weight,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("corpus has no usable training pairs")]
    NoTrainingPairs,
    #[error("encoding {id:?}: {source}")]
    Encode {
        id: String,
        #[source]
        source: EncoderError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("step {step}: every instance of the batch was skipped")]
    EmptyBatch { step: u64 },
    #[error("step {step}: non-finite {what}{}", dump_path.as_ref().map(|p| format!("; instance dumped to {}", p.display())).unwrap_or_default())]
    NonFinite {
        step: u64,
        what: &'static str,
        dump: Box<InstanceDump>,
        dump_path: Option<PathBuf>,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The offending instance of a non-finite step, for post-mortem inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDump {
    pub step: u64,
    pub direction: String,
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
    pub value: Option<f64>,
    pub alignment_term: Option<f64>,
    pub uniformity_term: Option<f64>,
}

/// One training pair with its mined negatives, by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSpec {
    pub query_id: String,
    pub positive_doc: String,
    pub negative_docs: Vec<String>,
    /// Negative training queries for the reversed instance anchored at `positive_doc`.
    pub dual_negative_queries: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub instances: Vec<InstanceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub prime_loss: f64,
    pub dual_loss: f64,
    pub combined_loss: f64,
    pub grad_norm: f64,
    pub refreshed: bool,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.prime_loss, self.dual_loss, self.combined_loss, self.grad_norm, self.refreshed
        )
    }
}

pub fn steps_csv(reports: &[StepReport]) -> String {
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Generators for one step's sampling.
pub struct StepRngs {
    pub prime: ChaCha8Rng,
    pub dual: ChaCha8Rng,
}

impl StepRngs {
    pub fn for_step(seed: u64, step: u64) -> Self {
        let stream = |tag: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            rng.set_stream(step);
            rng
        };
        Self { prime: stream(STREAM_PRIME), dual: stream(STREAM_DUAL) }
    }
}

/// Fresh parameters for `seed`.
pub fn init_params<T: Scalar>(shape: EncoderShape, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    ModelParams::init(shape, &mut rng)
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub step: u64,
    pub doc_index: FlatIndex<T>,
    pub query_index: FlatIndex<T>,
}

/// Training view of a corpus: positive pairs and relevance sets, precomputed.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    cfg: TrainConfig,
    pairs: Vec<(String, String)>,
    query_positives: HashMap<String, HashSet<String>>,
    doc_queries: HashMap<String, HashSet<String>>,
}

fn tokens_or_err<'c>(found: Option<&'c TokenSequence>, id: &str) -> Result<&'c TokenSequence, TrainError> {
    found.ok_or_else(|| TrainError::Invariant(format!("unknown id {id:?}")))
}

fn pair_key(q: &str, d: &str) -> (String, String) {
    (q.to_owned(), d.to_owned())
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, corpus: &'a Corpus) -> Result<Self, TrainError> {
        cfg.validate()?;
        let pairs: Vec<(String, String)> =
            corpus.positive_pairs(Split::Train).into_iter().map(|(q, d)| pair_key(q, d)).collect();
        if pairs.is_empty() {
            return Err(TrainError::NoTrainingPairs);
        }
        let mut query_positives: HashMap<String, HashSet<String>> = HashMap::new();
        let mut doc_queries: HashMap<String, HashSet<String>> = HashMap::new();
        for (q, d) in &pairs {
            query_positives.entry(q.clone()).or_default().insert(d.clone());
            doc_queries.entry(d.clone()).or_default().insert(q.clone());
        }
        Ok(Self { corpus, cfg, pairs, query_positives, doc_queries })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn query_tokens(&self, id: &str) -> Result<&'a TokenSequence, TrainError> {
        tokens_or_err(self.corpus.query_tokens(Split::Train, id), id)
    }

    fn doc_tokens(&self, id: &str) -> Result<&'a TokenSequence, TrainError> {
        tokens_or_err(self.corpus.doc_tokens(id), id)
    }

    /// A state at `step` with both indexes built from `params`.
    pub fn new_state<T: Scalar>(&self, params: ModelParams<T>, optimizer: Option<AdamState<T>>, step: u64) -> Result<TrainState<T>, TrainError> {
        let optimizer = optimizer.unwrap_or_else(|| AdamState::new(&params));
        let (doc_index, query_index) = self.build_indexes(&params, step)?;
        Ok(TrainState { params, optimizer, step, doc_index, query_index })
    }

    fn build_indexes<T: Scalar>(&self, params: &ModelParams<T>, step: u64) -> Result<(FlatIndex<T>, FlatIndex<T>), TrainError> {
        let (doc_ids, doc_seqs): (Vec<String>, Vec<&TokenSequence>) =
            self.corpus.encodable_docs().map(|(d, t)| (d.doc_id.clone(), t)).unzip();
        let queries = self.corpus.queries(Split::Train);
        let query_ids: Vec<String> = queries.iter().map(|q| q.query_id.clone()).collect();
        let query_seqs: Vec<&TokenSequence> = (0..queries.len()).map(|i| self.corpus.query_tokens_at(Split::Train, i)).collect();
        let encode = |ids: &[String], seqs: &[&TokenSequence]| {
            encode_normalized_batch(params, seqs).map_err(|e| match e {
                EncoderError::Item { index, source } => TrainError::Encode { id: ids[index].clone(), source: *source },
                other => TrainError::Encode { id: String::new(), source: other },
            })
        };
        let docs = encode(&doc_ids, &doc_seqs)?;
        let qs = encode(&query_ids, &query_seqs)?;
        Ok((build_index(doc_ids, &docs, step)?, build_index(query_ids, &qs, step)?))
    }

    /// Replaces both snapshots with ones built from the current parameters.
    pub fn refresh_indexes<T: Scalar>(&self, state: &mut TrainState<T>) -> Result<(), TrainError> {
        let (d, q) = self.build_indexes(&state.params, state.step)?;
        state.doc_index = d;
        state.query_index = q;
        Ok(())
    }

    /// Samples `batch_size` training pairs and mines their negatives.
    ///
    /// Instances with no negative candidates are skipped with a warning; in
    /// the dual stage a missing reversed instance leaves the prime one intact.
    pub fn build_batch<T: Scalar>(&self, state: &TrainState<T>, rngs: &mut StepRngs) -> Result<Batch, TrainError> {
        let n = self.pairs.len();
        let b = self.cfg.batch_size;
        let chosen: Vec<usize> = if b <= n {
            sample(&mut rngs.prime, n, b).into_vec()
        } else {
            (0..b).map(|_| rngs.prime.gen_range(0..n)).collect()
        };
        let with_dual = self.cfg.stage == Stage::Dual;

        let probes = chosen
            .par_iter()
            .map(|&i| {
                let (q, d) = &self.pairs[i];
                let qe = self.embed(&state.params, self.query_tokens(q)?, q)?;
                let de = if with_dual { Some(self.embed(&state.params, self.doc_tokens(d)?, d)?) } else { None };
                Ok((qe, de))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;

        let mut instances = Vec::with_capacity(b);
        for (&i, (qe, de)) in chosen.iter().zip(probes) {
            let (q, d) = &self.pairs[i];
            let positives = &self.query_positives[q];
            let negative_docs = match state.doc_index.sample_negatives(&qe, positives, self.cfg.n_neg, self.cfg.pool_size, &mut rngs.prime) {
                Ok(v) => v,
                Err(IndexError::NoNegatives) => {
                    log::warn!("skipping ({q}, {d}): no negative documents");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let dual_negative_queries = match de {
                None => None,
                Some(de) => {
                    let relevant = &self.doc_queries[d];
                    match state.query_index.sample_negatives(&de, relevant, self.cfg.n_neg, self.cfg.pool_size, &mut rngs.dual) {
                        Ok(v) => Some(v),
                        Err(IndexError::NoNegatives) => {
                            log::warn!("no reversed instance for {d}: no negative queries");
                            None
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            if negative_docs.iter().any(|n| positives.contains(n))
                || dual_negative_queries.iter().flatten().any(|n| self.doc_queries[d].contains(n))
            {
                return Err(TrainError::Invariant(format!("a positive of ({q}, {d}) was sampled as a negative")));
            }
            instances.push(InstanceSpec { query_id: q.clone(), positive_doc: d.clone(), negative_docs, dual_negative_queries });
        }
        Ok(Batch { instances })
    }

    fn embed<T: Scalar>(&self, params: &ModelParams<T>, tokens: &TokenSequence, id: &str) -> Result<UnitEmbedding<T>, TrainError> {
        encode_normalized(params, tokens).map_err(|source| TrainError::Encode { id: id.to_owned(), source })
    }

    /// Losses and (unscaled-by-batch) gradient contributions of one instance.
    fn instance_pass<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        spec: &InstanceSpec,
        step: u64,
        prime_weight: T,
        dual_weight: Option<T>,
    ) -> Result<InstanceResult<T>, TrainError> {
        let tau = T::of(self.cfg.temperature);
        let q_tok = self.query_tokens(&spec.query_id)?;
        let d_tok = self.doc_tokens(&spec.positive_doc)?;
        let qe = self.embed(params, q_tok, &spec.query_id)?;
        let de = self.embed(params, d_tok, &spec.positive_doc)?;
        let neg_tok = spec.negative_docs.iter().map(|id| self.doc_tokens(id)).collect::<Result<Vec<_>, _>>()?;
        let negs = neg_tok.iter().zip(&spec.negative_docs).map(|(t, id)| self.embed(params, t, id)).collect::<Result<Vec<_>, _>>()?;
        let prime_inst = ContrastiveInstance::new(qe.clone(), de.clone(), negs)?;
        let prime = norm_temp_scaled_loss(&prime_inst, tau)?;
        check_finite(&prime, step, "prime", &spec.query_id, &spec.positive_doc, &spec.negative_docs)?;

        let mut dual_value = None;
        let mut dual_parts = None;
        if let Some(neg_ids) = &spec.dual_negative_queries {
            let nq_tok = neg_ids.iter().map(|id| self.query_tokens(id)).collect::<Result<Vec<_>, _>>()?;
            let nq = nq_tok.iter().zip(neg_ids).map(|(t, id)| self.embed(params, t, id)).collect::<Result<Vec<_>, _>>()?;
            let dual_inst = ContrastiveInstance::new(de, qe, nq)?;
            let dual = norm_temp_scaled_loss(&dual_inst, tau)?;
            check_finite(&dual, step, "dual", &spec.positive_doc, &spec.query_id, neg_ids)?;
            dual_value = Some(dual.value);
            dual_parts = Some((dual, nq_tok));
        }

        let mut grads = ParamGrads::new(params.shape());
        let scaled = |g: &[T], w: T| g.iter().map(|&x| x * w).collect::<Vec<T>>();
        let mut up_q = scaled(&prime.grad_anchor, prime_weight);
        let mut up_d = scaled(&prime.grad_positive, prime_weight);
        let mut extra: Vec<(&TokenSequence, Vec<T>)> =
            neg_tok.iter().zip(&prime.grad_negatives).map(|(&t, g)| (t, scaled(g, prime_weight))).collect();
        if let (Some(w), Some((dual, nq_tok))) = (dual_weight, &dual_parts) {
            for (u, &g) in up_d.iter_mut().zip(&dual.grad_anchor) {
                *u += g * w;
            }
            for (u, &g) in up_q.iter_mut().zip(&dual.grad_positive) {
                *u += g * w;
            }
            extra.extend(nq_tok.iter().zip(&dual.grad_negatives).map(|(&t, g)| (t, scaled(g, w))));
        }
        let bp = |tokens: &TokenSequence, up: &[T], grads: &mut ParamGrads<T>| {
            backprop_embedding_grads(params, tokens, up, grads).map_err(|source| TrainError::Encode { id: spec.query_id.clone(), source })
        };
        bp(q_tok, &up_q, &mut grads)?;
        bp(d_tok, &up_d, &mut grads)?;
        for (t, up) in &extra {
            bp(t, up, &mut grads)?;
        }
        Ok(InstanceResult { prime: prime.value, dual: dual_value, grads })
    }

    /// One optimizer update from `micro_batches` (one per accumulation step).
    ///
    /// The gradient is the mean over micro-batches of each micro-batch's mean
    /// instance gradient. Indexes are refreshed when the new step count is a
    /// multiple of the refresh interval.
    pub fn train_step<T: Scalar>(&self, state: &mut TrainState<T>, micro_batches: &[Batch]) -> Result<StepReport, TrainError> {
        let step = state.step;
        if micro_batches.is_empty() || micro_batches.iter().any(|b| b.instances.is_empty()) {
            return Err(TrainError::EmptyBatch { step });
        }
        let lambda = self.cfg.effective_dual_weight();
        let mut total = ParamGrads::new(state.params.shape());
        let mut prime_sum = 0.0;
        let mut dual_sum = 0.0;
        let mut dual_batches = 0usize;
        for batch in micro_batches {
            let pass = self.batch_pass(&state.params, batch, step, micro_batches.len())?;
            prime_sum += pass.prime;
            if let Some(d) = pass.dual {
                dual_sum += d;
                dual_batches += 1;
            }
            total.add(&pass.grads);
        }
        let prime_loss = prime_sum / micro_batches.len() as f64;
        let dual_loss = if dual_batches > 0 { dual_sum / dual_batches as f64 } else { 0.0 };
        let grad_norm = total.l2_norm().as_f64();
        if !grad_norm.is_finite() {
            let spec = &micro_batches[0].instances[0];
            let dump = InstanceDump {
                step,
                direction: "gradient".into(),
                anchor_id: spec.query_id.clone(),
                positive_id: spec.positive_doc.clone(),
                negative_ids: spec.negative_docs.clone(),
                value: None,
                alignment_term: None,
                uniformity_term: None,
            };
            return Err(TrainError::NonFinite { step, what: "gradient", dump: Box::new(dump), dump_path: None });
        }
        state.optimizer.step(&mut state.params, &total, self.cfg.lr, self.cfg.warmup_steps);
        state.step += 1;
        let refreshed = state.step.is_multiple_of(self.cfg.refresh_interval);
        if refreshed {
            self.refresh_indexes(state)?;
        }
        Ok(StepReport { step: state.step, prime_loss, dual_loss, combined_loss: prime_loss + lambda * dual_loss, grad_norm, refreshed })
    }

    /// Mean losses of `batch` and its gradient contribution with weights `1/(n·n_micro)`
    /// for prime terms and `λ/(n_dual·n_micro)` for dual terms. The dual terms are
    /// not backpropagated when λ is 0.
    fn batch_pass<T: Scalar>(&self, params: &ModelParams<T>, batch: &Batch, step: u64, n_micro: usize) -> Result<BatchPass<T>, TrainError> {
        let lambda = self.cfg.effective_dual_weight();
        let n_micro = T::of(n_micro as f64);
        let n_prime = batch.instances.len();
        let n_dual = batch.instances.iter().filter(|s| s.dual_negative_queries.is_some()).count();
        let wp = T::one() / (T::of(n_prime as f64) * n_micro);
        let wd = (lambda > 0.0 && n_dual > 0).then(|| T::of(lambda) / (T::of(n_dual as f64) * n_micro));
        let results = batch
            .instances
            .par_iter()
            .map(|spec| self.instance_pass(params, spec, step, wp, wd))
            .collect::<Vec<_>>();
        let mut grads = ParamGrads::new(params.shape());
        let mut p = 0.0;
        let mut d = 0.0;
        for r in results {
            let r = r?;
            p += r.prime.as_f64();
            if let Some(v) = r.dual {
                d += v.as_f64();
            }
            grads.add(&r.grads);
        }
        Ok(BatchPass { prime: p / n_prime as f64, dual: (n_dual > 0).then(|| d / n_dual as f64), grads })
    }

    /// Combined objective of `batch` (mean prime loss plus λ times mean dual loss) and its gradient.
    pub fn objective_gradient<T: Scalar>(&self, params: &ModelParams<T>, batch: &Batch) -> Result<(f64, ParamGrads<T>), TrainError> {
        if batch.instances.is_empty() {
            return Err(TrainError::EmptyBatch { step: 0 });
        }
        let pass = self.batch_pass(params, batch, 0, 1)?;
        Ok((pass.prime + self.cfg.effective_dual_weight() * pass.dual.unwrap_or(0.0), pass.grads))
    }

    /// Builds this step's micro-batches and applies [`train_step`](Self::train_step).
    pub fn step<T: Scalar>(&self, state: &mut TrainState<T>) -> Result<StepReport, TrainError> {
        let mut rngs = StepRngs::for_step(self.cfg.seed, state.step);
        let batches = (0..self.cfg.grad_accum)
            .map(|_| self.build_batch(state, &mut rngs))
            .collect::<Result<Vec<_>, _>>()?;
        self.train_step(state, &batches)
    }

    /// Mean combined loss of `batch` under `params`, without updating anything.
    pub fn evaluate_batch<T: Scalar>(&self, params: &ModelParams<T>, batch: &Batch) -> Result<f64, TrainError> {
        let lambda = self.cfg.effective_dual_weight();
        let mut p = 0.0;
        let mut d = 0.0;
        let mut n_dual = 0usize;
        for spec in &batch.instances {
            let r = self.instance_pass(params, spec, 0, T::zero(), None)?;
            p += r.prime.as_f64();
            if let Some(v) = r.dual {
                d += v.as_f64();
                n_dual += 1;
            }
        }
        let dual = if n_dual > 0 { d / n_dual as f64 } else { 0.0 };
        Ok(p / batch.instances.len() as f64 + lambda * dual)
    }
}

struct BatchPass<T> {
    prime: f64,
    dual: Option<f64>,
    grads: ParamGrads<T>,
}

struct InstanceResult<T> {
    prime: T,
    dual: Option<T>,
    grads: ParamGrads<T>,
}

fn check_finite<T: Scalar>(out: &LossOutput<T>, step: u64, direction: &str, anchor: &str, positive: &str, negatives: &[String]) -> Result<(), TrainError> {
    let finite = out.value.is_finite()
        && out.grad_anchor.iter().chain(&out.grad_positive).chain(out.grad_negatives.iter().flatten()).all(|g| g.is_finite());
    if finite {
        return Ok(());
    }
    let opt = |v: T| v.is_finite().then(|| v.as_f64());
    let dump = InstanceDump {
        step,
        direction: direction.to_owned(),
        anchor_id: anchor.to_owned(),
        positive_id: positive.to_owned(),
        negative_ids: negatives.to_vec(),
        value: opt(out.value),
        alignment_term: opt(out.alignment_term),
        uniformity_term: opt(out.uniformity_term),
    };
    Err(TrainError::NonFinite { step, what: "loss", dump: Box::new(dump), dump_path: None })
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub checkpoint: Checkpoint<T>,
    pub reports: Vec<StepReport>,
}

/// Runs `cfg.max_steps` steps starting from `init` (or fresh parameters).
///
/// With `out_dir`, writes `checkpoint.bin` every `checkpoint_every` steps and
/// at the end, and the step log as `steps.csv`. A non-finite step writes the
/// offending instance to `nonfinite_instance.json` before failing.
pub fn run_training<T: Scalar>(
    cfg: &TrainConfig,
    corpus: &Corpus,
    init: Option<Checkpoint<T>>,
    out_dir: Option<&Path>,
) -> Result<TrainOutput<T>, TrainError> {
    let trainer = Trainer::new(cfg.clone(), corpus)?;
    let tokenizer = *corpus.tokenizer();
    let (params, optimizer, start) = match init {
        Some(ck) => {
            ck.check_tokenizer(&tokenizer)?;
            (ck.params, ck.optimizer, ck.step)
        }
        None => (init_params(EncoderShape::new(tokenizer.vocab_buckets, cfg.d_model), cfg.seed), None, 0),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.to_owned(), source })?;
    }
    let mut state = trainer.new_state(params, optimizer, start)?;
    let mut reports = Vec::with_capacity(cfg.max_steps as usize);
    let snapshot = |state: &TrainState<T>| Checkpoint {
        tokenizer,
        params: state.params.clone(),
        step: state.step,
        optimizer: Some(state.optimizer.clone()),
    };
    for _ in 0..cfg.max_steps {
        let report = match trainer.step(&mut state) {
            Ok(r) => r,
            Err(TrainError::NonFinite { step, what, dump, .. }) => {
                let dump_path = out_dir.map(|d| d.join(DUMP_FILE));
                if let Some(p) = &dump_path {
                    let json = serde_json::to_string_pretty(&dump).expect("dump serializes");
                    fs::write(p, json).map_err(|source| TrainError::Io { path: p.clone(), source })?;
                }
                if let Some(dir) = out_dir {
                    write_steps(dir, &reports)?;
                }
                return Err(TrainError::NonFinite { step, what, dump, dump_path });
            }
            Err(e) => return Err(e),
        };
        log::debug!("{}", report.csv_row());
        reports.push(report);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                snapshot(&state).save(&dir.join(CHECKPOINT_FILE))?;
                write_steps(dir, &reports)?;
            }
        }
    }
    let checkpoint = snapshot(&state);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        write_steps(dir, &reports)?;
    }
    Ok(TrainOutput { checkpoint, reports })
}

fn write_steps(dir: &Path, reports: &[StepReport]) -> Result<(), TrainError> {
    let path = dir.join(STEPS_FILE);
    fs::write(&path, steps_csv(reports)).map_err(|source| TrainError::Io { path, source })
}
