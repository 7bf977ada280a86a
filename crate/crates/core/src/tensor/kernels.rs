//! Slice-level forward and backward kernels.
//!
//! All kernels take row-major buffers and explicit extents; shape checking
//! happens one level up. Backward kernels *accumulate* into their gradient
//! buffers.

use crate::math::{axpy, dot, exp, exp_nonpositive_in_place, ln, sqrt, sum};

#[inline]
fn shifted_ranges(t: usize, shift: isize) -> Option<(core::ops::Range<usize>, core::ops::Range<usize>)> {
    // output positions `o` read input position `o + shift`
    let tl = t as isize;
    if shift.abs() >= tl {
        return None;
    }
    if shift >= 0 {
        let s = shift as usize;
        Some((0..t - s, s..t))
    } else {
        let s = (-shift) as usize;
        Some((s..t, 0..t - s))
    }
}

/// "Same"-padded 1-D cross-correlation of one group:
/// `x [c_in × t]`, `w [c_out × c_in × k]`, `b [c_out]` → `out [c_out × t]`.
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    t: usize,
    out: &mut [f64],
) {
    let pad = (k / 2) as isize;
    for o in 0..c_out {
        let row = &mut out[o * t..(o + 1) * t];
        row.fill(b[o]);
        for i in 0..c_in {
            let xrow = &x[i * t..(i + 1) * t];
            let wrow = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for (j, &wj) in wrow.iter().enumerate() {
                if let Some((dst, src)) = shifted_ranges(t, j as isize - pad) {
                    axpy(wj, &xrow[src], &mut row[dst]);
                }
            }
        }
    }
}

/// Backward of [`conv1d_forward`]. `dx` may be `None` when the input needs
/// no gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    t: usize,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let pad = (k / 2) as isize;
    for o in 0..c_out {
        let drow = &dout[o * t..(o + 1) * t];
        db[o] += sum(drow);
        for i in 0..c_in {
            let xrow = &x[i * t..(i + 1) * t];
            let base = (o * c_in + i) * k;
            for j in 0..k {
                if let Some((dst, src)) = shifted_ranges(t, j as isize - pad) {
                    dw[base + j] += dot(&drow[dst.clone()], &xrow[src.clone()]);
                    if let Some(dx) = dx.as_deref_mut() {
                        axpy(w[base + j], &drow[dst], &mut dx[i * t..(i + 1) * t][src]);
                    }
                }
            }
        }
    }
}

/// Non-overlapping average pooling over the last axis of `rows × t`.
pub fn avg_pool_forward(x: &[f64], rows: usize, t: usize, size: usize, out: &mut [f64]) {
    let t_out = t / size;
    let inv = 1.0 / size as f64;
    for r in 0..rows {
        let xr = &x[r * t..(r + 1) * t];
        for (o, v) in out[r * t_out..(r + 1) * t_out].iter_mut().enumerate() {
            *v = xr[o * size..(o + 1) * size].iter().sum::<f64>() * inv;
        }
    }
}

pub fn avg_pool_backward(dout: &[f64], rows: usize, t: usize, size: usize, dx: &mut [f64]) {
    let t_out = t / size;
    let inv = 1.0 / size as f64;
    for r in 0..rows {
        for o in 0..t_out {
            let g = dout[r * t_out + o] * inv;
            for v in &mut dx[r * t + o * size..r * t + (o + 1) * size] {
                *v += g;
            }
        }
    }
}

/// Non-overlapping max pooling; records the flat input index of each window
/// maximum (earliest index on ties).
pub fn max_pool_forward(x: &[f64], rows: usize, t: usize, size: usize, out: &mut [f64], argmax: &mut [u32]) {
    let t_out = t / size;
    for r in 0..rows {
        for o in 0..t_out {
            let start = r * t + o * size;
            let mut best = start;
            let mut best_v = x[start];
            for (idx, &v) in x[start + 1..start + size].iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = start + 1 + idx;
                }
            }
            out[r * t_out + o] = best_v;
            argmax[r * t_out + o] = best as u32;
        }
    }
}

pub fn max_pool_backward(dout: &[f64], argmax: &[u32], dx: &mut [f64]) {
    for (g, &idx) in dout.iter().zip(argmax) {
        dx[idx as usize] += g;
    }
}

/// `out [r × d_out] = x [r × d_in] · w [d_in × d_out] + b`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], r: usize, d_in: usize, d_out: usize, out: &mut [f64]) {
    for row in 0..r {
        let orow = &mut out[row * d_out..(row + 1) * d_out];
        orow.copy_from_slice(b);
        let xrow = &x[row * d_in..(row + 1) * d_in];
        for (kk, &xv) in xrow.iter().enumerate() {
            axpy(xv, &w[kk * d_out..(kk + 1) * d_out], orow);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    r: usize,
    d_in: usize,
    d_out: usize,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for row in 0..r {
        let drow = &dout[row * d_out..(row + 1) * d_out];
        for (bv, g) in db.iter_mut().zip(drow) {
            *bv += g;
        }
        let xrow = &x[row * d_in..(row + 1) * d_in];
        for kk in 0..d_in {
            let wrow = &w[kk * d_out..(kk + 1) * d_out];
            axpy(xrow[kk], drow, &mut dw[kk * d_out..(kk + 1) * d_out]);
            if let Some(dx) = dx.as_deref_mut() {
                dx[row * d_in + kk] += dot(drow, wrow);
            }
        }
    }
}

/// Row-wise softmax with max subtraction, `rows × cols`.
/// Numerically stable softmax of one row, in place.
pub fn softmax_rows_forward_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v -= m;
    }
    exp_nonpositive_in_place(row);
    let inv = 1.0 / sum(row);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows_forward(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let orow = &mut out[r * cols..(r + 1) * cols];
        orow.copy_from_slice(&x[r * cols..(r + 1) * cols]);
        softmax_rows_forward_in_place(orow);
    }
}

/// Backward of a row softmax given its output `y`.
pub fn softmax_rows_backward(y: &[f64], dy: &[f64], rows: usize, cols: usize, dx: &mut [f64]) {
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let dyr = &dy[r * cols..(r + 1) * cols];
        let s = dot(yr, dyr);
        for ((d, &yv), &g) in dx[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - s);
        }
    }
}

/// Layer normalisation over the last axis. Stores the normalised values and
/// per-row inverse standard deviations for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_forward(
    x: &[f64],
    gain: &[f64],
    shift: &[f64],
    rows: usize,
    d: usize,
    eps: f64,
    out: &mut [f64],
    xhat: &mut [f64],
    inv_std: &mut [f64],
) {
    let inv_d = 1.0 / d as f64;
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() * inv_d;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
        let is = 1.0 / sqrt(var + eps);
        inv_std[r] = is;
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[r * d + i] = h;
            out[r * d + i] = h * gain[i] + shift[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    dy: &[f64],
    rows: usize,
    d: usize,
    mut dx: Option<&mut [f64]>,
    dgain: Option<&mut [f64]>,
    dshift: Option<&mut [f64]>,
) {
    if let Some(dg) = dgain {
        for r in 0..rows {
            for i in 0..d {
                dg[i] += dy[r * d + i] * xhat[r * d + i];
            }
        }
    }
    if let Some(ds) = dshift {
        for r in 0..rows {
            for i in 0..d {
                ds[i] += dy[r * d + i];
            }
        }
    }
    if let Some(dx) = dx.as_deref_mut() {
        let inv_d = 1.0 / d as f64;
        for r in 0..rows {
            let mut mean_g = 0.0;
            let mut mean_gx = 0.0;
            for i in 0..d {
                let g = dy[r * d + i] * gain[i];
                mean_g += g;
                mean_gx += g * xhat[r * d + i];
            }
            mean_g *= inv_d;
            mean_gx *= inv_d;
            for i in 0..d {
                let g = dy[r * d + i] * gain[i];
                dx[r * d + i] += inv_std[r] * (g - mean_g - xhat[r * d + i] * mean_gx);
            }
        }
    }
}

/// Mean cross-entropy of `logits [b × k]`; writes the softmax probabilities.
pub fn cross_entropy_forward(logits: &[f64], labels: &[usize], b: usize, k: usize, probs: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..b {
        let lr = &logits[r * k..(r + 1) * k];
        let m = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lr.iter().map(|v| exp(v - m)).sum();
        let lse = m + ln(z);
        total += lse - lr[labels[r]];
        for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(lr) {
            *p = exp(v - lse);
        }
    }
    total / b as f64
}

pub fn cross_entropy_backward(probs: &[f64], labels: &[usize], b: usize, k: usize, g: f64, dlogits: &mut [f64]) {
    let scale = g / b as f64;
    for r in 0..b {
        for c in 0..k {
            let target = if labels[r] == c { 1.0 } else { 0.0 };
            dlogits[r * k + c] += scale * (probs[r * k + c] - target);
        }
    }
}

/// Extract head `h` of width `dk` from column block `block` of a fused
/// `[t × 3d]` projection into a contiguous `[t × dk]` buffer.
fn gather_head(qkv: &[f64], t: usize, d: usize, block: usize, h: usize, dk: usize, out: &mut [f64]) {
    let stride = 3 * d;
    for i in 0..t {
        let src = &qkv[i * stride + block * d + h * dk..i * stride + block * d + (h + 1) * dk];
        out[i * dk..(i + 1) * dk].copy_from_slice(src);
    }
}

fn transpose_into(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
}

/// Multi-head scaled dot-product self-attention over a fused projection
/// `qkv [t × 3d]` (query, key, value blocks in that order, each split into
/// `heads` contiguous column groups). Writes concatenated head outputs
/// `[t × d]` and attention weights `[heads × t × t]`.
pub fn attention_forward(qkv: &[f64], t: usize, d: usize, heads: usize, out: &mut [f64], probs: &mut [f64]) {
    let dk = d / heads;
    let scale = 1.0 / sqrt(dk as f64);
    let mut q = alloc::vec![0.0; t * dk];
    let mut kmat = alloc::vec![0.0; t * dk];
    let mut v = alloc::vec![0.0; t * dk];
    let mut vt = alloc::vec![0.0; t * dk];
    let mut kt = alloc::vec![0.0; t * dk];
    for h in 0..heads {
        gather_head(qkv, t, d, 0, h, dk, &mut q);
        gather_head(qkv, t, d, 1, h, dk, &mut kmat);
        gather_head(qkv, t, d, 2, h, dk, &mut v);
        transpose_into(&v, t, dk, &mut vt);
        transpose_into(&kmat, t, dk, &mut kt);
        let a = &mut probs[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            // score row s · q_i · Kᵀ built from the columns of K, then softmax in place
            let row = &mut a[i * t..(i + 1) * t];
            row.fill(0.0);
            for c in 0..dk {
                axpy(scale * q[i * dk + c], &kt[c * t..(c + 1) * t], row);
            }
            softmax_rows_forward_in_place(row);
            for c in 0..dk {
                out[i * d + h * dk + c] = dot(row, &vt[c * t..(c + 1) * t]);
            }
        }
    }
}

/// Backward of [`attention_forward`]; accumulates into `dqkv [t × 3d]`.
/// Works one query row at a time, so no `t × t` scratch is needed.
pub fn attention_backward(qkv: &[f64], probs: &[f64], dout: &[f64], t: usize, d: usize, heads: usize, dqkv: &mut [f64]) {
    let dk = d / heads;
    let scale = 1.0 / sqrt(dk as f64);
    let mut q = alloc::vec![0.0; t * dk];
    let mut kmat = alloc::vec![0.0; t * dk];
    let mut v = alloc::vec![0.0; t * dk];
    let mut kt = alloc::vec![0.0; t * dk];
    let mut vt = alloc::vec![0.0; t * dk];
    let mut dkt = alloc::vec![0.0; t * dk];
    let mut dvt = alloc::vec![0.0; t * dk];
    let mut dq = alloc::vec![0.0; t * dk];
    let mut ds = alloc::vec![0.0; t];
    for h in 0..heads {
        gather_head(qkv, t, d, 0, h, dk, &mut q);
        gather_head(qkv, t, d, 1, h, dk, &mut kmat);
        gather_head(qkv, t, d, 2, h, dk, &mut v);
        transpose_into(&kmat, t, dk, &mut kt);
        transpose_into(&v, t, dk, &mut vt);
        dkt.fill(0.0);
        dvt.fill(0.0);
        let a = &probs[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let arow = &a[i * t..(i + 1) * t];
            let dh = &dout[i * d + h * dk..i * d + (h + 1) * dk];
            // dA_i = dO_i · Vᵀ, dVᵀ += dO_iᵀ · A_i
            ds.fill(0.0);
            for c in 0..dk {
                axpy(dh[c], &vt[c * t..(c + 1) * t], &mut ds);
                axpy(dh[c], arow, &mut dvt[c * t..(c + 1) * t]);
            }
            // softmax backward: dS_i = A_i ⊙ (dA_i − <A_i, dA_i>)
            let m = dot(arow, &ds);
            for (g, &p) in ds.iter_mut().zip(arow) {
                *g = p * (*g - m);
            }
            // dQ_i = s · dS_i · K, dKᵀ += s · q_iᵀ · dS_i
            for c in 0..dk {
                dq[i * dk + c] = scale * dot(&ds, &kt[c * t..(c + 1) * t]);
                axpy(scale * q[i * dk + c], &ds, &mut dkt[c * t..(c + 1) * t]);
            }
        }
        let stride = 3 * d;
        for i in 0..t {
            for c in 0..dk {
                dqkv[i * stride + h * dk + c] += dq[i * dk + c];
                dqkv[i * stride + d + h * dk + c] += dkt[c * t + i];
                dqkv[i * stride + 2 * d + h * dk + c] += dvt[c * t + i];
            }
        }
    }
}
