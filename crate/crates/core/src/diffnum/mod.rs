//! Reverse-mode differentiation over dense matrices.
//!
//! The kernel is intentionally small: matrix product, elementwise
//! arithmetic, row-vector broadcasting for biases and per-column scales,
//! `tanh`/`exp`/`square`, full reductions, and an escape hatch for fused
//! operations with hand-written adjoints (used by the mixture prior).

mod tape;

pub use tape::{CustomBackward, Gradients, Param, Tape, Var};

/// Numerically stable softmax of a logit vector.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty row");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(termᵢ)` with max subtraction.
///
/// Returns `-∞` when every term is `-∞`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    assert!(!terms.is_empty(), "log_sum_exp of an empty slice");
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if terms.len() == 1 {
        return terms[0];
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}
