//! Straight-line reference implementations used only to verify the real
//! kernels (feature `oracles`; the test suites turn it on). Everything here
//! is written directly from the operation definitions with plain nested
//! loops over flat slices — deliberately independent of the tensor kernels
//! and of the reverse-mode graph.

use alloc::vec;
use alloc::vec::Vec;

/// `a[m x k] * b[k x n]` by the definition, scalar accumulation.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Masked softmax by exp/sum; fully masked input becomes uniform.
pub fn softmax_masked(x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let n = x.len();
    let live = |i: usize| mask.map_or(true, |m| !m[i]);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        if live(i) {
            max = max.max(x[i]);
        }
    }
    if max == f64::NEG_INFINITY {
        return vec![1.0 / n as f64; n];
    }
    let mut out = vec![0.0; n];
    let mut denom = 0.0;
    for i in 0..n {
        if live(i) {
            out[i] = libm::exp(x[i] - max);
            denom += out[i];
        }
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    out
}

/// Relation embedding of one node pair:
/// `pre = relu(wattr [u;v])`; degenerate norm gives the uniform vector, else
/// softmax of `pre/|pre|` masked at the exact zeros.
pub fn hmrr_relation(u: &[f64], v: &[f64], wattr: &[f64], d: usize, c: usize) -> Vec<f64> {
    let mut pre = vec![0.0; d];
    for di in 0..d {
        let mut acc = 0.0;
        for t in 0..c {
            acc += wattr[di * 2 * c + t] * u[t] + wattr[di * 2 * c + c + t] * v[t];
        }
        pre[di] = if acc > 0.0 { acc } else { 0.0 };
    }
    let norm = libm::sqrt(pre.iter().map(|p| p * p).sum());
    if norm <= 1e-12 {
        return vec![1.0 / d as f64; d];
    }
    let scaled: Vec<f64> = pre.iter().map(|p| p / norm).collect();
    let mask: Vec<bool> = pre.iter().map(|&p| p == 0.0).collect();
    softmax_masked(&scaled, Some(&mask))
}

/// Triplet-convolution score of `(u, r, v)` with filters `omega[k x 3]`,
/// filter bias `bconv[k]`, readout `wread[c*k]` flattened `(row, filter)`.
pub fn convkb_score(
    u: &[f64],
    r: f64,
    v: &[f64],
    omega: &[f64],
    bconv: &[f64],
    wread: &[f64],
    c: usize,
    k: usize,
) -> f64 {
    let mut score = 0.0;
    for t in 0..c {
        for ki in 0..k {
            let z = u[t] * omega[ki * 3] + r * omega[ki * 3 + 1] + v[t] * omega[ki * 3 + 2]
                + bconv[ki];
            let a = if z > 0.0 { z } else { 0.0 };
            score += wread[t * k + ki] * a;
        }
    }
    score
}

/// All-pairs attribute extraction, hierarchical mode:
/// `f_d = relu(mean_{i,j} score(u_i, r_d(i,j), v_j) + bias)`.
#[allow(clippy::too_many_arguments)]
pub fn extract_attributes_hmrr(
    u: &[f64],
    v: &[f64],
    wattr: &[f64],
    omega: &[f64],
    bconv: &[f64],
    wread: &[f64],
    bias: f64,
    j: usize,
    c: usize,
    d: usize,
    k: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for i in 0..j {
        for jj in 0..j {
            let ui = &u[i * c..(i + 1) * c];
            let vj = &v[jj * c..(jj + 1) * c];
            let r = hmrr_relation(ui, vj, wattr, d, c);
            for di in 0..d {
                acc[di] += convkb_score(ui, r[di], vj, omega, bconv, wread, c, k);
            }
        }
    }
    acc.iter()
        .map(|a| {
            let f = a / (j * j) as f64 + bias;
            if f > 0.0 {
                f
            } else {
                0.0
            }
        })
        .collect()
}

/// Row-wise softmax of `m / temp`.
pub fn row_softmax(m: &[f64], rows: usize, cols: usize, temp: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let scaled: Vec<f64> = m[r * cols..(r + 1) * cols].iter().map(|v| v / temp).collect();
        let sm = softmax_masked(&scaled, None);
        out[r * cols..(r + 1) * cols].copy_from_slice(&sm);
    }
    out
}

/// Layer attention `A = (wk g)(wq g)^T`, `f x h`.
pub fn layer_attention(g: &[f64], wq: &[f64], wk: &[f64], h: usize, f: usize) -> Vec<f64> {
    let mut key = vec![0.0; f];
    for i in 0..f {
        for t in 0..h {
            key[i] += wk[i * h + t] * g[t];
        }
    }
    let mut query = vec![0.0; h];
    for i in 0..h {
        for t in 0..h {
            query[i] += wq[i * h + t] * g[t];
        }
    }
    let mut a = vec![0.0; f * h];
    for i in 0..f {
        for jj in 0..h {
            a[i * h + jj] = key[i] * query[jj];
        }
    }
    a
}

/// Second-layer relation matrix by the two-step definition: carried block
/// `T^1 (Wt^1)^T` concatenated with `A^2` column-wise, then row-normalized.
#[allow(clippy::too_many_arguments)]
pub fn recursive_relation_n2(
    t1: &[f64],
    wt1: &[f64],
    a2: &[f64],
    f: usize,
    h: usize,
) -> Vec<f64> {
    // carried[f x f] = T^1 [f x h] * (Wt^1 [f x h])^T
    let mut carried = vec![0.0; f * f];
    for i in 0..f {
        for jj in 0..f {
            let mut acc = 0.0;
            for t in 0..h {
                acc += t1[i * h + t] * wt1[jj * h + t];
            }
            carried[i * f + jj] = acc;
        }
    }
    let mut cat = vec![0.0; f * (f + h)];
    for i in 0..f {
        cat[i * (f + h)..i * (f + h) + f].copy_from_slice(&carried[i * f..(i + 1) * f]);
        cat[i * (f + h) + f..(i + 1) * (f + h)].copy_from_slice(&a2[i * h..(i + 1) * h]);
    }
    row_softmax(&cat, f, f + h, libm::sqrt(h as f64))
}

/// Detail code `relu(T [c_prev; g])` (or `relu(T g)` when no carry).
pub fn generate_code(t: &[f64], c_prev: Option<&[f64]>, g: &[f64], f: usize) -> Vec<f64> {
    let input: Vec<f64> = match c_prev {
        Some(c) => c.iter().chain(g.iter()).copied().collect(),
        None => g.to_vec(),
    };
    let cols = input.len();
    let mut out = vec![0.0; f];
    for i in 0..f {
        let mut acc = 0.0;
        for (jj, &x) in input.iter().enumerate() {
            acc += t[i * cols + jj] * x;
        }
        out[i] = if acc > 0.0 { acc } else { 0.0 };
    }
    out
}

/// One bias-corrected Adam update over a flat parameter slice; the moment
/// slices are updated in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - libm::pow(beta1, t as f64);
    let bc2 = 1.0 - libm::pow(beta2, t as f64);
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        theta[i] -= lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + eps);
    }
}

/// Single-channel-stack 2-D convolution by the definition (zero padding).
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    cin: usize,
    h: usize,
    wid: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wid + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < wid as isize {
                                acc += x[ci * h * wid + iy as usize * wid + ix as usize]
                                    * w[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// Mean squared error by direct summation.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (x - y) * (x - y);
    }
    acc / a.len() as f64
}

/// The full objective given already-evaluated pieces:
/// `mse + alpha * mse(features) + beta * ln(max(1 - d_score, 1e-12))`.
pub fn total_loss(
    yhat: &[f64],
    y: &[f64],
    feat_yhat: &[f64],
    feat_y: &[f64],
    d_score: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    mse(yhat, y) + alpha * mse(feat_yhat, feat_y) + beta * libm::log((1.0 - d_score).max(1e-12))
}
