//! Adam with linear warmup.
//!
//! Embedding-table moments are kept only for rows that have received a
//! gradient, and a step touches only the rows present in that step's
//! gradient. Projection and bias moments are dense.

use std::collections::BTreeMap;

use crate::encoder::{ModelParams, ParamGrads};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// Number of updates applied so far.
    pub t: u64,
    pub rows: BTreeMap<u32, Moments<T>>,
    pub projection: Moments<T>,
    pub bias: Moments<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            t: 0,
            rows: BTreeMap::new(),
            projection: Moments::zeros(params.projection().len()),
            bias: Moments::zeros(params.bias().len()),
        }
    }

    /// Learning rate of update number `t` (1-based): ramps linearly over `warmup` updates.
    pub fn scheduled_lr(lr: f64, warmup: u64, t: u64) -> f64 {
        if warmup == 0 || t >= warmup {
            lr
        } else {
            lr * t as f64 / warmup as f64
        }
    }

    /// Applies one update with gradient `grads`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ParamGrads<T>, lr: f64, warmup: u64) {
        self.t += 1;
        let lr_t = T::of(Self::scheduled_lr(lr, warmup, self.t));
        let t = self.t as i32;
        let consts = Consts {
            b1: T::of(BETA1),
            b2: T::of(BETA2),
            eps: T::of(EPSILON),
            bc1: T::one() - T::of(BETA1).powi(t),
            bc2: T::one() - T::of(BETA2).powi(t),
            lr: lr_t,
        };
        for (&token, g) in &grads.rows {
            let d = g.len();
            let mom = self.rows.entry(token).or_insert_with(|| Moments::zeros(d));
            consts.apply(params.embedding_row_mut(token), g, mom);
        }
        consts.apply(params.projection_mut(), &grads.projection, &mut self.projection);
        consts.apply(params.bias_mut(), &grads.bias, &mut self.bias);
    }
}

struct Consts<T> {
    b1: T,
    b2: T,
    eps: T,
    bc1: T,
    bc2: T,
    lr: T,
}

impl<T: Scalar> Consts<T> {
    fn apply(&self, theta: &mut [T], g: &[T], mom: &mut Moments<T>) {
        for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(mom.m.iter_mut()).zip(mom.v.iter_mut()) {
            *m = self.b1 * *m + (T::one() - self.b1) * g;
            *v = self.b2 * *v + (T::one() - self.b2) * g * g;
            let m_hat = *m / self.bc1;
            let v_hat = *v / self.bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderShape;

    #[test]
    fn warmup_is_linear() {
        assert_eq!(AdamState::<f64>::scheduled_lr(1e-3, 0, 1), 1e-3);
        assert_eq!(AdamState::<f64>::scheduled_lr(1e-3, 4, 1), 2.5e-4);
        assert_eq!(AdamState::<f64>::scheduled_lr(1e-3, 4, 4), 1e-3);
        assert_eq!(AdamState::<f64>::scheduled_lr(1e-3, 4, 9), 1e-3);
    }

    /// Reference scalar Adam on one coordinate.
    fn reference(theta0: f64, grads: &[f64], lr: f64) -> f64 {
        let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            theta -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        theta
    }

    #[test]
    fn matches_reference_and_skips_untouched_rows() {
        let shape = EncoderShape::new(3, 2);
        let mut p = ModelParams::<f64>::zeros(shape);
        p.embedding_row_mut(0).copy_from_slice(&[0.5, -0.5]);
        let mut state = AdamState::new(&p);
        let seq = [0.3, -1.2, 0.7];
        for &g in &seq {
            let mut grads = ParamGrads::new(shape);
            grads.rows.insert(0, vec![g, 0.0]);
            state.step(&mut p, &grads, 1e-2, 0);
        }
        assert!((p.embedding_row(0)[0] - reference(0.5, &seq, 1e-2)).abs() < 1e-15);
        assert_eq!(p.embedding_row(0)[1], -0.5);
        assert_eq!(p.embedding_row(1), &[0.0, 0.0]);
        assert_eq!(state.rows.len(), 1);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let shape = EncoderShape::new(2, 2);
        let mut p = ModelParams::<f64>::zeros(shape);
        let mut state = AdamState::new(&p);
        let mut grads = ParamGrads::new(shape);
        grads.bias = vec![2.0, -3.0];
        state.step(&mut p, &grads, 0.1, 0);
        assert!((p.bias()[0] + 0.1).abs() < 1e-8);
        assert!((p.bias()[1] - 0.1).abs() < 1e-8);
    }
}
