//! Untaped entry points for the differentiable primitives. Each builds a
//! throwaway tape, so the forward arithmetic is the same code the model uses.

use super::tape::{PoolMode, Tape};
use super::Tensor;
use crate::error::{config_err, Result};
use crate::rng::Rng;


fn unary(x: &Tensor, f: impl FnOnce(&mut Tape, super::Var) -> Result<super::Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Same-padded cross-correlation: `input [c_in, t]`, `weights [c_out, c_in, k]`,
/// `bias [c_out]` → `[c_out, t]`.
pub fn conv1d_same(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.ndim() != 2 || weights.ndim() != 3 {
        return Err(config_err!(
            "conv1d_same expects [c_in, t] input and [c_out, c_in, k] weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        ));
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weights.clone());
    let b = tape.constant(bias.clone());
    let out = tape.conv1d(x, w, b)?;
    Ok(tape.value(out).clone())
}

pub fn pool(input: &Tensor, size: usize, mode: PoolMode) -> Result<Tensor> {
    unary(input, |t, v| t.pool(v, size, mode))
}

pub fn dense_affine(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weights.clone());
    let b = tape.constant(bias.clone());
    let out = tape.dense(x, w, b)?;
    Ok(tape.value(out).clone())
}

pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    unary(input, |t, v| t.softmax_rows(v))
}

pub fn layer_norm(input: &Tensor, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let g = tape.constant(gain.clone());
    let s = tape.constant(shift.clone());
    let out = tape.layer_norm(x, g, s, eps)?;
    Ok(tape.value(out).clone())
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(input.clone());
    let out = tape.relu(v);
    tape.value(out).clone()
}

pub fn dropout(input: &Tensor, rate: f64, rng: &mut Rng, train: bool) -> Result<Tensor> {
    unary(input, |t, v| t.dropout(v, rate, rng, train))
}

/// Mean cross-entropy of `logits [b, k]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(logits.clone());
    let out = tape.cross_entropy(v, labels)?;
    Ok(tape.value(out).data()[0])
}

/// Plain matrix product `[m, k] · [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(config_err!("matmul shapes {:?} and {:?} do not chain", a.shape(), b.shape()));
    }
    let zero = Tensor::zeros(&[b.shape()[1]]);
    dense_affine(a, b, &zero)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    unary(a, |t, v| t.transpose(v))
}
