//! Dense row-major `f64` tensors of rank 1..=4 and the pure kernels that
//! operate on them.
//!
//! Every function here is deterministic and single-threaded; the reverse-mode
//! graph in [`crate::graph`] wraps these kernels with their adjoints.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Threshold below which an L2 norm is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Contiguous row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating rank, shape/length agreement and finiteness.
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::DimMismatch(format!(
                "rank must be 1..={MAX_RANK}, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::DimMismatch(format!("zero dimension in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::DimMismatch(format!(
                "shape {dims:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Internal constructor for kernels whose outputs are finite by
    /// construction. Only the shape arithmetic is checked.
    pub(crate) fn from_raw(dims: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        debug_assert!(!dims.is_empty() && dims.len() <= MAX_RANK);
        Tensor { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Result<Tensor> {
        let numel: usize = dims.iter().product();
        Tensor::new(dims, vec![0.0; numel])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_raw(vec![1], vec![v])
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Tensor> {
        let n = data.len();
        Tensor::new(&[n], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar payload of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::DimMismatch(format!(
                "item() on tensor of shape {:?}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        let numel: usize = dims.iter().product();
        if numel != self.len() || dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::DimMismatch(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        Ok(Tensor::from_raw(dims.to_vec(), self.data.clone()))
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `a[m x k] * b[k x n]`, row-major triple loop with `k` innermost on `b` rows.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "matmul wants two matrices, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::DimMismatch(format!(
            "matmul inner dims: {:?} x {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data()[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.data()[p * n..(p + 1) * n];
            for (o, &b_pj) in o_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * b_pj;
            }
        }
    }
    Ok(Tensor::from_raw(vec![m, n], out))
}

/// `m[a x b] * v[b]` -> `[a]`.
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 || v.rank() != 1 || m.dims()[1] != v.dims()[0] {
        return Err(Error::DimMismatch(format!(
            "matvec: {:?} x {:?}",
            m.dims(),
            v.dims()
        )));
    }
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let mrow = &m.data()[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in mrow.iter().zip(v.data().iter()) {
            acc += a * b;
        }
        out[i] = acc;
    }
    Ok(Tensor::from_raw(vec![rows], out))
}

/// Outer product of two vectors: `a[p] (x) b[q]` -> `[p x q]`.
pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 1 || b.rank() != 1 {
        return Err(Error::DimMismatch(format!(
            "outer wants two vectors, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (p, q) = (a.len(), b.len());
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        let ai = a.data()[i];
        for j in 0..q {
            out[i * q + j] = ai * b.data()[j];
        }
    }
    Ok(Tensor::from_raw(vec![p, q], out))
}

pub fn transpose2(m: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "transpose wants a matrix, got {:?}",
            m.dims()
        )));
    }
    let (r, c) = (m.dims()[0], m.dims()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.data()[i * c + j];
        }
    }
    Ok(Tensor::from_raw(vec![c, r], out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    Ok(Tensor::from_raw(a.dims().to_vec(), data))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "sub")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    Ok(Tensor::from_raw(a.dims().to_vec(), data))
}

/// Elementwise product.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "mul")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    Ok(Tensor::from_raw(a.dims().to_vec(), data))
}

pub fn scale(x: &Tensor, k: f64) -> Tensor {
    Tensor::from_raw(x.dims().to_vec(), x.data().iter().map(|v| v * k).collect())
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(
        x.dims().to_vec(),
        x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    )
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    Tensor::from_raw(
        x.dims().to_vec(),
        x.data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
    )
}

/// Distance of the closest entry to a ReLU/leaky kink at zero.
pub fn kink_gap(x: &[f64]) -> f64 {
    x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Running record of ReLU-family pre-activations: the closest approach to
/// the kink and an order-sensitive fold of which side each value fell on.
#[derive(Clone, Copy, Debug)]
pub struct KinkTracker {
    pub gap: f64,
    pub signature: u64,
}

impl KinkTracker {
    pub fn new() -> KinkTracker {
        KinkTracker { gap: f64::INFINITY, signature: 0 }
    }

    #[inline]
    pub fn note(&mut self, pre: f64) {
        self.gap = self.gap.min(pre.abs());
        self.signature = self.signature.rotate_left(1) ^ (pre > 0.0) as u64;
    }
}

impl Default for KinkTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Softmax over a vector with an optional exclusion mask.
///
/// Masked entries come out exactly zero. If everything is masked the result
/// is the uniform vector — the only permutation-symmetric completion of the
/// degenerate case.
pub fn softmax_masked(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::DimMismatch(format!(
            "softmax wants a vector, got {:?}",
            x.dims()
        )));
    }
    let n = x.len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::DimMismatch(format!(
                "mask length {} vs vector length {n}",
                m.len()
            )));
        }
    }
    let live = |i: usize| mask.map_or(true, |m| !m[i]);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        if live(i) {
            max = max.max(x.data()[i]);
        }
    }
    if max == f64::NEG_INFINITY {
        // Fully masked: uniform.
        return Ok(Tensor::from_raw(vec![n], vec![1.0 / n as f64; n]));
    }
    let mut out = vec![0.0; n];
    let mut denom = 0.0;
    for i in 0..n {
        if live(i) {
            let e = libm::exp(x.data()[i] - max);
            out[i] = e;
            denom += e;
        }
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    Ok(Tensor::from_raw(vec![n], out))
}

/// Row-wise softmax of `m / temp`; rows of the result sum to one.
pub fn row_softmax(m: &Tensor, temp: f64) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "row_softmax wants a matrix, got {:?}",
            m.dims()
        )));
    }
    let (r, c) = (m.dims()[0], m.dims()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &m.data()[i * c..(i + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temp));
        let orow = &mut out[i * c..(i + 1) * c];
        let mut denom = 0.0;
        for (o, &v) in orow.iter_mut().zip(row.iter()) {
            let e = libm::exp(v / temp - max);
            *o = e;
            denom += e;
        }
        for o in orow.iter_mut() {
            *o /= denom;
        }
    }
    Ok(Tensor::from_raw(vec![r, c], out))
}

/// L2-normalize a vector. Returns the (possibly unchanged) vector and a flag
/// saying whether the input was degenerate (norm <= `NORM_EPS`).
pub fn l2_normalize(x: &Tensor) -> Result<(Tensor, bool)> {
    if x.rank() != 1 {
        return Err(Error::DimMismatch(format!(
            "l2_normalize wants a vector, got {:?}",
            x.dims()
        )));
    }
    let norm = l2_norm(x.data());
    if norm <= NORM_EPS {
        return Ok((x.clone(), true));
    }
    let data = x.data().iter().map(|v| v / norm).collect();
    Ok((Tensor::from_raw(x.dims().to_vec(), data), false))
}

pub fn l2_norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum())
}

pub fn sum(x: &Tensor) -> f64 {
    x.data().iter().sum()
}

pub fn mean(x: &Tensor) -> f64 {
    sum(x) / x.len() as f64
}

/// Concatenate two tensors of equal rank along `axis`; all other dims must
/// agree.
pub fn concat(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    if a.rank() != b.rank() {
        return Err(Error::DimMismatch(format!(
            "concat rank: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if axis >= a.rank() {
        return Err(Error::DimMismatch(format!(
            "concat axis {axis} out of range for rank {}",
            a.rank()
        )));
    }
    for (i, (da, db)) in a.dims().iter().zip(b.dims().iter()).enumerate() {
        if i != axis && da != db {
            return Err(Error::DimMismatch(format!(
                "concat along {axis}: {:?} vs {:?}",
                a.dims(),
                b.dims()
            )));
        }
    }
    let mut dims = a.dims().to_vec();
    dims[axis] += b.dims()[axis];

    // Treat the tensor as [outer, axis, inner] and interleave slabs.
    let outer: usize = a.dims()[..axis].iter().product();
    let inner: usize = a.dims()[axis + 1..].iter().product();
    let slab_a = a.dims()[axis] * inner;
    let slab_b = b.dims()[axis] * inner;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * slab_a..(o + 1) * slab_a]);
        data.extend_from_slice(&b.data()[o * slab_b..(o + 1) * slab_b]);
    }
    Ok(Tensor::from_raw(dims, data))
}

/// Contiguous slice of the flattened payload, reshaped to a vector.
pub fn slice_flat(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if len == 0 || start + len > x.len() {
        return Err(Error::DimMismatch(format!(
            "slice [{start}, {}) of tensor with {} values",
            start + len,
            x.len()
        )));
    }
    Ok(Tensor::from_raw(
        vec![len],
        x.data()[start..start + len].to_vec(),
    ))
}

/// Human-readable shape, for error messages.
pub fn shape_str(dims: &[usize]) -> String {
    format!("{dims:?}")
}
