//! Contrastive objectives with analytic gradients.
//!
//! Every loss here is a softmax cross-entropy over the logits
//! `scale · (anchor · candidate)` where the positive candidate is the target:
//!
//! ```text
//! value = −s·f(a,p) + log( e^{s·f(a,p)} + Σᵢ e^{s·f(a,nᵢ)} )
//!         \_______/   \_____________________________________/
//!         alignment                  uniformity
//! ```
//!
//! The plain loss uses `s = 1`, the normalized losses use `s = 1/τ` on unit
//! embeddings. The dual loss is the same function with a document anchor and
//! query candidates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{check_unit, UnitEmbedding};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_DUAL_WEIGHT: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("instance has no negatives")]
    NoNegatives,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{role} embedding is not unit-norm (|norm - 1| = {deviation:e})")]
    NotUnit { role: &'static str, deviation: f64 },
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// One softmax cross-entropy instance: anchor, its positive, and negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveInstance<T> {
    pub anchor: UnitEmbedding<T>,
    pub positive: UnitEmbedding<T>,
    pub negatives: Vec<UnitEmbedding<T>>,
}

impl<T: Scalar> ContrastiveInstance<T> {
    pub fn new(anchor: UnitEmbedding<T>, positive: UnitEmbedding<T>, negatives: Vec<UnitEmbedding<T>>) -> Result<Self, LossError> {
        let inst = Self { anchor, positive, negatives };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<(), LossError> {
        if self.negatives.is_empty() {
            return Err(LossError::NoNegatives);
        }
        let d = self.anchor.dim();
        if self.positive.dim() != d || self.negatives.iter().any(|n| n.dim() != d) {
            return Err(LossError::Shape(format!("all embeddings must have dimension {d}")));
        }
        Ok(())
    }

    fn check_unit(&self) -> Result<(), LossError> {
        let roles = std::iter::once(("anchor", &self.anchor))
            .chain(std::iter::once(("positive", &self.positive)))
            .chain(self.negatives.iter().map(|n| ("negative", n)));
        for (role, e) in roles {
            check_unit(e.as_slice()).map_err(|_| {
                let norm = dot(e.as_slice(), e.as_slice()).sqrt();
                LossError::NotUnit { role, deviation: (norm - T::one()).abs().as_f64() }
            })?;
        }
        Ok(())
    }
}

/// Loss value, its alignment/uniformity split, and gradients w.r.t. every input embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub alignment_term: T,
    pub uniformity_term: T,
    pub grad_anchor: Vec<T>,
    pub grad_positive: Vec<T>,
    pub grad_negatives: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub dual_weight: f64,
    pub normalized: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, dual_weight: DEFAULT_DUAL_WEIGHT, normalized: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(LossError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.dual_weight.is_finite() && self.dual_weight >= 0.0) {
            return Err(LossError::Config(format!("dual weight must be >= 0, got {}", self.dual_weight)));
        }
        Ok(())
    }

    /// The prime-task loss selected by `normalized`.
    pub fn prime<T: Scalar>(&self, inst: &ContrastiveInstance<T>) -> Result<LossOutput<T>, LossError> {
        self.validate()?;
        if self.normalized {
            norm_temp_scaled_loss(inst, T::of(self.temperature))
        } else {
            plain_contrastive_loss(inst)
        }
    }
}

/// Softmax cross-entropy with the positive as target, on logits `scale · a·c`.
fn softmax_contrastive<T: Scalar>(inst: &ContrastiveInstance<T>, scale: T) -> LossOutput<T> {
    let a = inst.anchor.as_slice();
    let pos_logit = scale * dot(a, inst.positive.as_slice());
    let neg_logits: Vec<T> = inst.negatives.iter().map(|n| scale * dot(a, n.as_slice())).collect();

    let max = neg_logits.iter().fold(pos_logit, |m, &l| m.max(l));
    let shifted_pos = (pos_logit - max).exp();
    let shifted: Vec<T> = neg_logits.iter().map(|&l| (l - max).exp()).collect();
    // summed in sorted order so the value does not depend on the order of negatives
    let mut sorted = shifted.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let neg_mass = sorted.iter().copied().sum::<T>();
    let total = shifted_pos + neg_mass;
    let log_sum_exp = max + total.ln();

    // When the positive holds the max logit the loss is log1p of the negatives'
    // mass, which keeps precision for nearly-solved instances.
    let value = if pos_logit >= max {
        neg_mass.ln_1p()
    } else {
        (max - pos_logit) + total.ln()
    };

    let p_pos = shifted_pos / total;
    let p_neg: Vec<T> = shifted.iter().map(|&e| e / total).collect();

    // dL/dlogit: p_pos − 1 for the positive, p_i for negatives; dlogit/dx = scale · other.
    let coef_pos = scale * (p_pos - T::one());
    let mut grad_anchor: Vec<T> = inst.positive.as_slice().iter().map(|&p| coef_pos * p).collect();
    for (n, &pi) in inst.negatives.iter().zip(&p_neg) {
        let c = scale * pi;
        for (g, &x) in grad_anchor.iter_mut().zip(n.as_slice()) {
            *g += c * x;
        }
    }
    let grad_positive = a.iter().map(|&x| coef_pos * x).collect();
    let grad_negatives = p_neg.iter().map(|&pi| a.iter().map(|&x| scale * pi * x).collect()).collect();

    LossOutput {
        value,
        alignment_term: -pos_logit,
        uniformity_term: log_sum_exp,
        grad_anchor,
        grad_positive,
        grad_negatives,
    }
}

/// Cross-entropy over raw dot products (no temperature).
pub fn plain_contrastive_loss<T: Scalar>(inst: &ContrastiveInstance<T>) -> Result<LossOutput<T>, LossError> {
    inst.validate()?;
    Ok(softmax_contrastive(inst, T::one()))
}

/// Temperature-scaled cross-entropy on unit embeddings.
pub fn norm_temp_scaled_loss<T: Scalar>(inst: &ContrastiveInstance<T>, temperature: T) -> Result<LossOutput<T>, LossError> {
    if !(temperature.is_finite() && temperature > T::zero()) {
        return Err(LossError::Config(format!("temperature must be > 0, got {temperature}")));
    }
    inst.validate()?;
    inst.check_unit()?;
    Ok(softmax_contrastive(inst, T::one() / temperature))
}

/// Query-retrieval loss: a document anchor, its relevant query as positive,
/// and mined negative queries. Identical in form to [`norm_temp_scaled_loss`].
pub fn dual_loss<T: Scalar>(inst: &ContrastiveInstance<T>, temperature: T) -> Result<LossOutput<T>, LossError> {
    norm_temp_scaled_loss(inst, temperature)
}

/// `prime + λ · dual`.
pub fn combined_loss<T: Scalar>(prime: &LossOutput<T>, dual: &LossOutput<T>, dual_weight: T) -> Result<T, LossError> {
    if !(dual_weight.is_finite() && dual_weight >= T::zero()) {
        return Err(LossError::Config(format!("dual weight must be >= 0, got {dual_weight}")));
    }
    Ok(prime.value + dual_weight * dual.value)
}
