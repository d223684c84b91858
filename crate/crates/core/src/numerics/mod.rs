//! Dense matrix math with reverse-mode differentiation.
//!
//! Values are `f64` throughout. Attention, normalization and the loss are
//! recorded on a [`Tape`] so that training and gradient checks share one code
//! path with inference.

mod gradcheck;
mod mask;
mod matrix;
mod tape;

use std::rc::Rc;

use thiserror::Error;

pub use gradcheck::{finite_difference_grad_check, GradCheckOptions, GradCheckReport};
pub use mask::AttentionMask;
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

/// Base of the rotary frequency schedule `θ_i = base^(-2i/head_dim)`.
pub const ROPE_BASE: f64 = 10_000.0;

/// Epsilon added to the variance in every layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("empty input")]
    Empty,
    #[error("head dimension must be even, got {0}")]
    OddHeadDim(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("query row {0} has every key blocked")]
    FullyBlockedRow(usize),
    #[error("every target position is ignored")]
    AllIgnored,
}

/// `exp(x_i / T) / Σ exp(x_j / T)`, computed with max subtraction.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, NumericsError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(NumericsError::NonPositiveTemperature(temperature));
    }
    if logits.is_empty() {
        return Err(NumericsError::Empty);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("softmax input"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Normalizes `x` to zero mean and unit variance, then applies `gamma`/`beta`.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>, NumericsError> {
    if x.is_empty() {
        return Err(NumericsError::Empty);
    }
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(NumericsError::Shape(format!(
            "layer_norm x={} gamma={} beta={}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(Matrix::row_vector(x));
    let g = tape.leaf(Matrix::row_vector(gamma));
    let b = tape.leaf(Matrix::row_vector(beta));
    let y = tape.layer_norm(xv, g, b, eps);
    Ok(tape.value(y).data().to_vec())
}

/// Rotates each row by its position. `vectors.cols()` must be a multiple of `head_dim`.
pub fn rope_rotate(vectors: &Matrix, positions: &[usize], head_dim: usize) -> Result<Matrix, NumericsError> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(NumericsError::OddHeadDim(head_dim));
    }
    if vectors.cols() % head_dim != 0 {
        return Err(NumericsError::Shape(format!("width {} not a multiple of head_dim {head_dim}", vectors.cols())));
    }
    if positions.len() != vectors.rows() {
        return Err(NumericsError::Shape(format!("{} positions for {} rows", positions.len(), vectors.rows())));
    }
    Ok(tape::rope_apply(vectors, positions, head_dim, 1.0))
}

/// Output of [`attention`]: the concatenated head outputs and per-head weights.
pub struct AttentionVars {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention recorded on `tape`.
///
/// `q`, `k`, `v` share width `d_model`; each head sees a contiguous
/// `d_model / n_heads` slice and scores are scaled by `1/√(d_model/n_heads)`.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &Rc<AttentionMask>,
    n_heads: usize,
) -> Result<AttentionVars, NumericsError> {
    let (qs, ks, vs) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    if qs.1 != ks.1 || ks.1 != vs.1 || ks.0 != vs.0 {
        return Err(NumericsError::Shape(format!("attention q={qs:?} k={ks:?} v={vs:?}")));
    }
    if n_heads == 0 || qs.1 % n_heads != 0 {
        return Err(NumericsError::Shape(format!("d_model {} not divisible by {n_heads} heads", qs.1)));
    }
    if mask.shape() != (qs.0, ks.0) {
        return Err(NumericsError::Shape(format!("mask {:?} for scores {:?}", mask.shape(), (qs.0, ks.0))));
    }
    let head_dim = qs.1 / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head_dim, head_dim),
                tape.slice_cols(k, h * head_dim, head_dim),
                tape.slice_cols(v, h * head_dim, head_dim),
            )
        };
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let w = tape.masked_softmax(scores, Some(mask));
        outputs.push(tape.matmul(w, vh));
        weights.push(w);
    }
    let output = if n_heads == 1 { outputs[0] } else { tape.concat_cols(&outputs) };
    Ok(AttentionVars { output, weights })
}

/// [`attention`] on plain matrices.
pub fn masked_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
    n_heads: usize,
) -> Result<(Matrix, Vec<Matrix>), NumericsError> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = attention(&mut tape, qv, kv, vv, &Rc::new(mask.clone()), n_heads)?;
    let weights = out.weights.iter().map(|&w| tape.value(w).clone()).collect();
    Ok((tape.value(out.output).clone(), weights))
}

/// Mean `-log softmax(logits)[target]` over positions whose target is not `ignore_id`.
pub fn next_token_cross_entropy(logits: &Matrix, targets: &[usize], ignore_id: usize) -> Result<f64, NumericsError> {
    if logits.rows() != targets.len() {
        return Err(NumericsError::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    if !logits.is_finite() {
        return Err(NumericsError::NonFinite("logits"));
    }
    let targets: Vec<Option<usize>> = targets.iter().map(|&t| (t != ignore_id).then_some(t)).collect();
    if targets.iter().all(Option::is_none) {
        return Err(NumericsError::AllIgnored);
    }
    if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= logits.cols()) {
        return Err(NumericsError::Shape(format!("target {bad} outside vocabulary of {}", logits.cols())));
    }
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let loss = tape.cross_entropy(l, &targets);
    Ok(tape.value(loss).get(0, 0))
}
