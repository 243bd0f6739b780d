//! Shared two-tower encoder: hashed-token embedding table, mean pooling and
//! an affine projection, followed by L2 normalization onto the unit sphere.
//!
//! Queries and documents go through the same [`ModelParams`]; only the
//! tokenizer's truncation length differs by role.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;
use crate::scalar::{dot, l2_norm, Scalar};

pub const DEFAULT_DIM: usize = 64;
/// Norm below which a raw embedding cannot be normalized.
pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;

const INIT_EMBED_RANGE: f64 = 0.05;
const INIT_PROJ_JITTER: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("degenerate embedding: norm {norm:e} is below {epsilon:e}")]
    Degenerate { norm: f64, epsilon: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("vector is not unit-norm (|norm - 1| = {deviation:e})")]
    NotUnit { deviation: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<EncoderError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub vocab_buckets: usize,
    pub d_embed: usize,
    pub d_model: usize,
}

impl EncoderShape {
    pub fn new(vocab_buckets: usize, dim: usize) -> Self {
        Self { vocab_buckets, d_embed: dim, d_model: dim }
    }
}

/// Encoder parameters, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    shape: EncoderShape,
    /// `vocab_buckets × d_embed`
    embedding: Vec<T>,
    /// `d_embed × d_model`
    projection: Vec<T>,
    /// `d_model`
    bias: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parts(shape: EncoderShape, embedding: Vec<T>, projection: Vec<T>, bias: Vec<T>) -> Result<Self, EncoderError> {
        let p = Self { shape, embedding, projection, bias };
        p.validate()?;
        Ok(p)
    }

    /// Embedding rows ~ U(-0.05, 0.05); projection = identity + U(-0.01, 0.01); zero bias.
    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, rng: &mut R) -> Self {
        let embedding = (0..shape.vocab_buckets * shape.d_embed)
            .map(|_| T::of(rng.gen_range(-INIT_EMBED_RANGE..INIT_EMBED_RANGE)))
            .collect();
        let mut projection = Vec::with_capacity(shape.d_embed * shape.d_model);
        for i in 0..shape.d_embed {
            for j in 0..shape.d_model {
                let eye = if i == j { 1.0 } else { 0.0 };
                projection.push(T::of(eye + rng.gen_range(-INIT_PROJ_JITTER..INIT_PROJ_JITTER)));
            }
        }
        Self { shape, embedding, projection, bias: vec![T::zero(); shape.d_model] }
    }

    pub fn zeros(shape: EncoderShape) -> Self {
        Self {
            shape,
            embedding: vec![T::zero(); shape.vocab_buckets * shape.d_embed],
            projection: vec![T::zero(); shape.d_embed * shape.d_model],
            bias: vec![T::zero(); shape.d_model],
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let s = self.shape;
        if s.vocab_buckets == 0 || s.d_embed == 0 || s.d_model == 0 {
            return Err(EncoderError::Shape(format!("zero dimension in {s:?}")));
        }
        let checks = [
            ("embedding table", self.embedding.len(), s.vocab_buckets * s.d_embed),
            ("projection", self.projection.len(), s.d_embed * s.d_model),
            ("bias", self.bias.len(), s.d_model),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(EncoderError::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        for (name, values) in [("embedding table", &self.embedding), ("projection", &self.projection), ("bias", &self.bias)] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> EncoderShape {
        self.shape
    }

    pub fn d_model(&self) -> usize {
        self.shape.d_model
    }

    pub fn embedding_row(&self, token: u32) -> &[T] {
        let d = self.shape.d_embed;
        let start = token as usize * d;
        &self.embedding[start..start + d]
    }

    pub fn embedding_row_mut(&mut self, token: u32) -> &mut [T] {
        let d = self.shape.d_embed;
        let start = token as usize * d;
        &mut self.embedding[start..start + d]
    }

    pub fn embedding(&self) -> &[T] {
        &self.embedding
    }

    pub fn projection(&self) -> &[T] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [T] {
        &mut self.projection
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn embedding_mut(&mut self) -> &mut [T] {
        &mut self.embedding
    }

    /// Mean of the token embedding rows.
    fn pool(&self, tokens: &TokenSequence) -> Result<Vec<T>, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let mut pooled = vec![T::zero(); self.shape.d_embed];
        for &id in tokens.ids() {
            if id as usize >= self.shape.vocab_buckets {
                return Err(EncoderError::Shape(format!(
                    "token id {id} outside vocabulary of {}",
                    self.shape.vocab_buckets
                )));
            }
            for (p, &e) in pooled.iter_mut().zip(self.embedding_row(id)) {
                *p += e;
            }
        }
        let inv = T::one() / T::from_usize(tokens.len()).unwrap();
        pooled.iter_mut().for_each(|p| *p *= inv);
        Ok(pooled)
    }

    fn project(&self, pooled: &[T]) -> Vec<T> {
        let dm = self.shape.d_model;
        let mut out = self.bias.clone();
        for (i, &m) in pooled.iter().enumerate() {
            let row = &self.projection[i * dm..(i + 1) * dm];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += m * w;
            }
        }
        out
    }
}

/// Encoder output before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding<T>(Vec<T>);

impl<T: Scalar> RawEmbedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.0)
    }
}

/// A vector on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitEmbedding<T>(pub(crate) Vec<T>);

impl<T: Scalar> UnitEmbedding<T> {
    /// Wraps `values`, checking the unit-norm invariant.
    pub fn new(values: Vec<T>) -> Result<Self, EncoderError> {
        check_unit(&values)?;
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

pub(crate) fn check_unit<T: Scalar>(values: &[T]) -> Result<(), EncoderError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::NonFinite("embedding"));
    }
    let deviation = (l2_norm(values) - T::one()).abs();
    if deviation > T::unit_norm_tolerance() {
        return Err(EncoderError::NotUnit { deviation: deviation.as_f64() });
    }
    Ok(())
}

/// `projection(mean of token rows) + bias`.
pub fn encode<T: Scalar>(params: &ModelParams<T>, tokens: &TokenSequence) -> Result<RawEmbedding<T>, EncoderError> {
    let pooled = params.pool(tokens)?;
    Ok(RawEmbedding(params.project(&pooled)))
}

pub fn normalize<T: Scalar>(e: &RawEmbedding<T>) -> Result<UnitEmbedding<T>, EncoderError> {
    normalize_with(e, T::of(DEFAULT_NORM_EPSILON))
}

pub fn normalize_with<T: Scalar>(e: &RawEmbedding<T>, epsilon: T) -> Result<UnitEmbedding<T>, EncoderError> {
    if e.0.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::NonFinite("raw embedding"));
    }
    let norm = e.norm();
    if norm <= epsilon {
        return Err(EncoderError::Degenerate { norm: norm.as_f64(), epsilon: epsilon.as_f64() });
    }
    Ok(UnitEmbedding(e.0.iter().map(|&v| v / norm).collect()))
}

/// Dot product of two unit embeddings (their cosine similarity).
pub fn similarity<T: Scalar>(a: &UnitEmbedding<T>, b: &UnitEmbedding<T>) -> Result<T, EncoderError> {
    if a.dim() != b.dim() {
        return Err(EncoderError::Shape(format!("dimension {} vs {}", a.dim(), b.dim())));
    }
    Ok(dot(&a.0, &b.0))
}

pub fn encode_normalized<T: Scalar>(params: &ModelParams<T>, tokens: &TokenSequence) -> Result<UnitEmbedding<T>, EncoderError> {
    normalize(&encode(params, tokens)?)
}

/// Parallel `normalize(encode(·))` over a batch; output order matches input order.
pub fn encode_normalized_batch<T: Scalar>(
    params: &ModelParams<T>,
    sequences: &[&TokenSequence],
) -> Result<Vec<UnitEmbedding<T>>, EncoderError> {
    sequences
        .par_iter()
        .enumerate()
        .map(|(index, seq)| {
            encode_normalized(params, seq).map_err(|e| EncoderError::Item { index, source: Box::new(e) })
        })
        .collect()
}

/// Gradient accumulator: sparse embedding rows plus dense projection and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub rows: BTreeMap<u32, Vec<T>>,
    pub projection: Vec<T>,
    pub bias: Vec<T>,
    d_embed: usize,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new(shape: EncoderShape) -> Self {
        Self {
            rows: BTreeMap::new(),
            projection: vec![T::zero(); shape.d_embed * shape.d_model],
            bias: vec![T::zero(); shape.d_model],
            d_embed: shape.d_embed,
        }
    }

    pub fn row(&self, token: u32) -> Option<&[T]> {
        self.rows.get(&token).map(Vec::as_slice)
    }

    fn row_mut(&mut self, token: u32) -> &mut Vec<T> {
        let d = self.d_embed;
        self.rows.entry(token).or_insert_with(|| vec![T::zero(); d])
    }

    pub fn scale(&mut self, factor: T) {
        self.rows.values_mut().flatten().for_each(|g| *g *= factor);
        self.projection.iter_mut().for_each(|g| *g *= factor);
        self.bias.iter_mut().for_each(|g| *g *= factor);
    }

    /// `self += other`.
    pub fn add(&mut self, other: &ParamGrads<T>) {
        for (&token, row) in &other.rows {
            for (a, &b) in self.row_mut(token).iter_mut().zip(row) {
                *a += b;
            }
        }
        for (a, &b) in self.projection.iter_mut().zip(&other.projection) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn l2_norm(&self) -> T {
        let sq = self
            .rows
            .values()
            .flatten()
            .chain(&self.projection)
            .chain(&self.bias)
            .fold(T::zero(), |acc, &g| acc + g * g);
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().chain(&self.projection).chain(&self.bias).all(|g| g.is_finite())
    }
}

/// Accumulates `(∂ unit embedding / ∂ params)ᵀ · upstream` into `grads`.
///
/// `upstream` is the gradient of some scalar with respect to the normalized
/// embedding of `tokens`. The chain runs through the normalization Jacobian
/// `(I − u uᵀ) / ‖e‖`, the affine projection and the mean pooling.
pub fn backprop_embedding_grads<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &TokenSequence,
    upstream: &[T],
    grads: &mut ParamGrads<T>,
) -> Result<(), EncoderError> {
    let s = params.shape;
    if upstream.len() != s.d_model {
        return Err(EncoderError::Shape(format!("upstream gradient has {} entries, expected {}", upstream.len(), s.d_model)));
    }
    if upstream.iter().any(|g| !g.is_finite()) {
        return Err(EncoderError::NonFinite("upstream gradient"));
    }
    if upstream.iter().all(|g| g.is_zero()) {
        return Ok(());
    }
    let pooled = params.pool(tokens)?;
    let raw = params.project(&pooled);
    let norm = l2_norm(&raw);
    if norm <= T::of(DEFAULT_NORM_EPSILON) {
        return Err(EncoderError::Degenerate { norm: norm.as_f64(), epsilon: DEFAULT_NORM_EPSILON });
    }
    // g_e = (g − u (u·g)) / ‖e‖
    let u: Vec<T> = raw.iter().map(|&v| v / norm).collect();
    let ug = dot(&u, upstream);
    let g_raw: Vec<T> = upstream.iter().zip(&u).map(|(&g, &ui)| (g - ui * ug) / norm).collect();

    let dm = s.d_model;
    for (b, &g) in grads.bias.iter_mut().zip(&g_raw) {
        *b += g;
    }
    let mut g_pooled = vec![T::zero(); s.d_embed];
    for (i, &m) in pooled.iter().enumerate() {
        let w_row = &params.projection[i * dm..(i + 1) * dm];
        let gw_row = &mut grads.projection[i * dm..(i + 1) * dm];
        let mut acc = T::zero();
        for ((gw, &w), &g) in gw_row.iter_mut().zip(w_row).zip(&g_raw) {
            *gw += m * g;
            acc += w * g;
        }
        g_pooled[i] = acc;
    }
    let inv = T::one() / T::from_usize(tokens.len()).unwrap();
    for &id in tokens.ids() {
        for (r, &g) in grads.row_mut(id).iter_mut().zip(&g_pooled) {
            *r += g * inv;
        }
    }
    Ok(())
}
