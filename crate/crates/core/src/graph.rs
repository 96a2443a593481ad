//! Trace-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only record of eagerly evaluated operations:
//! every builder method validates shapes, computes the forward value
//! immediately and pushes one node, so insertion order is already a
//! topological order. [`Graph::backward`] sweeps the trace once in reverse,
//! accumulating vector-Jacobian products, and reports gradients for the
//! named parameter leaves (zeros for parameters the loss never touched).
//!
//! The graph also tracks how close any ReLU/leaky-ReLU pre-activation came
//! to its kink during the forward pass; the finite-difference checker uses
//! that to skip coordinates where the loss is locally non-smooth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gdm::GdmExtractSpec;
use crate::tensor::{self, Tensor};

/// Index of a node in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

/// Logit clamp for the discriminator sigmoid; keeps outputs strictly inside
/// `(0, 1)` in f64.
pub const SIGMOID_CLAMP: f64 = 30.0;

/// Floor for logarithm arguments in loss terms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Outer(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    SoftmaxMasked {
        x: NodeId,
        mask: Option<Vec<bool>>,
        all_masked: bool,
    },
    RowSoftmax {
        x: NodeId,
        temp: f64,
    },
    L2Normalize {
        x: NodeId,
        degenerate: bool,
    },
    SigmoidClamped(NodeId),
    LnClamped(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    SliceFlat {
        x: NodeId,
        start: usize,
    },
    Concat {
        a: NodeId,
        b: NodeId,
        axis: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Upsample2x(NodeId),
    ModulateChannels {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    AddGainedMap {
        x: NodeId,
        map: NodeId,
        gain: NodeId,
    },
    GdmExtract {
        inputs: [NodeId; 7],
        spec: GdmExtractSpec,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar loss with respect to the registered parameters.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Global L2 norm over every reported gradient entry.
    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self
            .map
            .values()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        libm::sqrt(sq)
    }

    /// Fixed-order accumulation of another gradient set, scaled by `k`.
    pub fn accumulate_scaled(&mut self, other: &Gradients, k: f64) {
        for (name, grad) in other.map.iter() {
            match self.map.get_mut(name) {
                Some(acc) => {
                    for (a, g) in acc.data_mut().iter_mut().zip(grad.data().iter()) {
                        *a += k * g;
                    }
                }
                None => {
                    self.map.insert(name.clone(), tensor::scale(grad, k));
                }
            }
        }
    }
}

/// Reverse-mode trace. See the module docs.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    min_kink_gap: f64,
    kink_signature: u64,
    degenerate_relations: usize,
    degenerate_norms: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            min_kink_gap: f64::INFINITY,
            kink_signature: 0,
            degenerate_relations: 0,
            degenerate_norms: 0,
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Closest approach of any ReLU-family pre-activation to its kink during
    /// forward evaluation of this graph.
    pub fn min_kink_gap(&self) -> f64 {
        self.min_kink_gap
    }

    /// Order-sensitive fold of every ReLU-family pre-activation sign seen
    /// during the forward pass. Two builds of the same graph structure
    /// disagree exactly when some activation changed sides, i.e. when a
    /// kink lies between the two evaluation points.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    /// Number of relation embeddings that fell back to the uniform vector.
    pub fn degenerate_relations(&self) -> usize {
        self.degenerate_relations
    }

    /// Number of L2 normalizations that hit the zero-norm guard.
    pub fn degenerate_norms(&self) -> usize {
        self.degenerate_norms
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub(crate) fn note_degenerate_relation(&mut self) {
        self.degenerate_relations += 1;
    }

    // ---- leaves ------------------------------------------------------

    /// Non-trainable leaf (inputs, frozen weights, constants).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Named trainable leaf. Gradients are reported under this name.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::DimMismatch(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let id = self.push(Op::Leaf, value.clone());
        self.params.insert(String::from(name), id);
        Ok(id)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.input(Tensor::scalar(v))
    }

    /// Copy of an existing node's value with the gradient path severed.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.value(id).clone();
        self.input(value)
    }

    // ---- pointwise and linear ops -------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = tensor::scale(self.value(x), k);
        self.push(Op::Scale(x, k), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let value = tensor::matvec(self.value(m), self.value(v))?;
        Ok(self.push(Op::MatVec(m, v), value))
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::outer(self.value(a), self.value(b))?;
        Ok(self.push(Op::Outer(a, b), value))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let value = tensor::transpose2(self.value(x))?;
        Ok(self.push(Op::Transpose(x), value))
    }

    fn note_kinks(&mut self, x: NodeId) {
        let mut tracker = tensor::KinkTracker::new();
        for &v in self.value(x).data() {
            tracker.note(v);
        }
        if tracker.gap < self.min_kink_gap {
            self.min_kink_gap = tracker.gap;
        }
        self.kink_signature = self.kink_signature.rotate_left(17) ^ tracker.signature;
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.note_kinks(x);
        let value = tensor::relu(self.value(x));
        self.push(Op::Relu(x), value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.note_kinks(x);
        let value = tensor::leaky_relu(self.value(x), slope);
        self.push(Op::LeakyRelu(x, slope), value)
    }

    pub fn softmax_masked(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let value = tensor::softmax_masked(self.value(x), mask)?;
        let all_masked = mask.map_or(false, |m| m.iter().all(|&b| b));
        Ok(self.push(
            Op::SoftmaxMasked {
                x,
                mask: mask.map(|m| m.to_vec()),
                all_masked,
            },
            value,
        ))
    }

    /// Row-wise softmax of `x / temp`.
    pub fn row_softmax(&mut self, x: NodeId, temp: f64) -> Result<NodeId> {
        let value = tensor::row_softmax(self.value(x), temp)?;
        Ok(self.push(Op::RowSoftmax { x, temp }, value))
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let (value, degenerate) = tensor::l2_normalize(self.value(x))?;
        if degenerate {
            self.degenerate_norms += 1;
        }
        Ok(self.push(Op::L2Normalize { x, degenerate }, value))
    }

    /// Sigmoid with logits clamped to `[-SIGMOID_CLAMP, SIGMOID_CLAMP]`.
    pub fn sigmoid_clamped(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| {
                let c = v.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
                1.0 / (1.0 + libm::exp(-c))
            })
            .collect();
        let value = Tensor::from_raw(self.value(x).dims().to_vec(), data);
        self.push(Op::SigmoidClamped(x), value)
    }

    /// `ln(max(x, LOG_FLOOR))` elementwise.
    pub fn ln_clamped(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| libm::log(v.max(LOG_FLOOR)))
            .collect();
        let value = Tensor::from_raw(self.value(x).dims().to_vec(), data);
        self.push(Op::LnClamped(x), value)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(tensor::sum(self.value(x)));
        self.push(Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(tensor::mean(self.value(x)));
        self.push(Op::Mean(x), value)
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(dims)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    pub fn slice_flat(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = tensor::slice_flat(self.value(x), start, len)?;
        Ok(self.push(Op::SliceFlat { x, start }, value))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let value = tensor::concat(self.value(a), self.value(b), axis)?;
        Ok(self.push(Op::Concat { a, b, axis }, value))
    }

    // ---- image ops -----------------------------------------------------

    /// 2-D convolution: `x [Cin,H,W]`, `w [Cout,Cin,k,k]`, `b [Cout]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let value = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, value))
    }

    /// Nearest-neighbour 2x upsample of `[C,H,W]`.
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let value = upsample2x_forward(self.value(x))?;
        Ok(self.push(Op::Upsample2x(x), value))
    }

    /// Channel-wise affine: `y[c,h,w] = scale[c] * x[c,h,w] + shift[c]`.
    pub fn modulate_channels(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    ) -> Result<NodeId> {
        let value =
            modulate_forward(self.value(x), self.value(scale), self.value(shift))?;
        Ok(self.push(Op::ModulateChannels { x, scale, shift }, value))
    }

    /// Noise-slot injection: `y[c,h,w] = x[c,h,w] + gain[c] * map[h,w]`.
    pub fn add_gained_map(&mut self, x: NodeId, map: NodeId, gain: NodeId) -> Result<NodeId> {
        let value = add_gained_map_forward(self.value(x), self.value(map), self.value(gain))?;
        Ok(self.push(Op::AddGainedMap { x, map, gain }, value))
    }

    /// Fused streaming relation-reasoning + attribute extraction. Inputs are
    /// `[u, v, wattr, omega, conv_bias, readout_w, readout_bias]`.
    pub fn gdm_extract(&mut self, inputs: [NodeId; 7], spec: GdmExtractSpec) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
        let out = spec.forward(&tensors)?;
        if out.stats.kinks.gap < self.min_kink_gap {
            self.min_kink_gap = out.stats.kinks.gap;
        }
        self.kink_signature = self.kink_signature.rotate_left(17) ^ out.stats.kinks.signature;
        self.degenerate_relations += out.stats.degenerate_relations;
        Ok(self.push(Op::GdmExtract { inputs, spec }, out.value))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar loss. Every registered parameter gets an
    /// entry; parameters off the loss path get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(i, &g, &mut grads);
            // Leaves keep their accumulated gradient for reporting.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let mut map = BTreeMap::new();
        for (name, id) in self.params.iter() {
            let dims = self.value(*id).dims().to_vec();
            let data = match &grads[id.0] {
                Some(g) => g.clone(),
                None => vec![0.0; self.value(*id).len()],
            };
            map.insert(name.clone(), Tensor::from_raw(dims, data));
        }
        Ok(Gradients { map })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta.iter()) {
                    *a += d;
                }
            }
            None => grads[id.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                Self::accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(*b).data().iter())
                    .map(|(x, y)| x * y)
                    .collect();
                Self::accumulate(grads, *a, &da);
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data().iter())
                    .map(|(x, y)| x * y)
                    .collect();
                Self::accumulate(grads, *b, &db);
            }
            Op::Scale(x, k) => {
                let dx: Vec<f64> = g.iter().map(|v| v * k).collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.dims()[0], av.dims()[1]);
                let n = bv.dims()[1];
                // dA = G * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for p in 0..k {
                        let brow = &bv.data()[p * n..(p + 1) * n];
                        let grow = &g[r * n..(r + 1) * n];
                        let mut acc = 0.0;
                        for (gv, bvv) in grow.iter().zip(brow.iter()) {
                            acc += gv * bvv;
                        }
                        da[r * k + p] = acc;
                    }
                }
                Self::accumulate(grads, *a, &da);
                // dB = A^T * G
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let arow = &av.data()[r * k..(r + 1) * k];
                    let grow = &g[r * n..(r + 1) * n];
                    for (p, &a_rp) in arow.iter().enumerate() {
                        let drow = &mut db[p * n..(p + 1) * n];
                        for (d, gv) in drow.iter_mut().zip(grow.iter()) {
                            *d += a_rp * gv;
                        }
                    }
                }
                Self::accumulate(grads, *b, &db);
            }
            Op::MatVec(m, v) => {
                let mv = self.value(*m);
                let vv = self.value(*v);
                let (rows, cols) = (mv.dims()[0], mv.dims()[1]);
                let mut dm = vec![0.0; rows * cols];
                for r in 0..rows {
                    let gr = g[r];
                    let drow = &mut dm[r * cols..(r + 1) * cols];
                    for (d, x) in drow.iter_mut().zip(vv.data().iter()) {
                        *d = gr * x;
                    }
                }
                Self::accumulate(grads, *m, &dm);
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g[r];
                    let mrow = &mv.data()[r * cols..(r + 1) * cols];
                    for (d, w) in dv.iter_mut().zip(mrow.iter()) {
                        *d += gr * w;
                    }
                }
                Self::accumulate(grads, *v, &dv);
            }
            Op::Outer(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (p, q) = (av.len(), bv.len());
                let mut da = vec![0.0; p];
                let mut db = vec![0.0; q];
                for r in 0..p {
                    let grow = &g[r * q..(r + 1) * q];
                    let mut acc = 0.0;
                    for (gv, bvv) in grow.iter().zip(bv.data().iter()) {
                        acc += gv * bvv;
                    }
                    da[r] = acc;
                    let ar = av.data()[r];
                    for (d, gv) in db.iter_mut().zip(grow.iter()) {
                        *d += ar * gv;
                    }
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.dims()[0], node.value.dims()[1]);
                let mut dx = vec![0.0; r * c];
                for i0 in 0..r {
                    for j0 in 0..c {
                        dx[j0 * r + i0] = g[i0 * c + j0];
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv.data().iter())
                    .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv.data().iter())
                    .map(|(gv, &v)| if v > 0.0 { *gv } else { slope * gv })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::SoftmaxMasked { x, mask, all_masked } => {
                if *all_masked {
                    return; // constant uniform output
                }
                let r = node.value.data();
                let dot: f64 = g.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
                let live = |i: usize| mask.as_ref().map_or(true, |m| !m[i]);
                let dx: Vec<f64> = (0..r.len())
                    .map(|i| if live(i) { r[i] * (g[i] - dot) } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::RowSoftmax { x, temp } => {
                let s = node.value.data();
                let (rows, cols) = (node.value.dims()[0], node.value.dims()[1]);
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let srow = &s[r * cols..(r + 1) * cols];
                    let grow = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = srow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                    let drow = &mut dx[r * cols..(r + 1) * cols];
                    for ((d, &sv), &gv) in drow.iter_mut().zip(srow.iter()).zip(grow.iter()) {
                        *d = sv * (gv - dot) / temp;
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }
            Op::L2Normalize { x, degenerate } => {
                if *degenerate {
                    // Below the guard the op is the identity.
                    Self::accumulate(grads, *x, g);
                    return;
                }
                let xv = self.value(*x);
                let y = node.value.data();
                let norm = tensor::l2_norm(xv.data());
                let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                let dx: Vec<f64> = y
                    .iter()
                    .zip(g.iter())
                    .map(|(yv, gv)| (gv - yv * dot) / norm)
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::SigmoidClamped(x) => {
                let xv = self.value(*x);
                let dx: Vec<f64> = node
                    .value
                    .data()
                    .iter()
                    .zip(xv.data().iter())
                    .zip(g.iter())
                    .map(|((y, &v), gv)| {
                        if v.abs() < SIGMOID_CLAMP {
                            gv * y * (1.0 - y)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::LnClamped(x) => {
                let xv = self.value(*x);
                let dx: Vec<f64> = xv
                    .data()
                    .iter()
                    .zip(g.iter())
                    .map(|(&v, gv)| if v > LOG_FLOOR { gv / v } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                Self::accumulate(grads, *x, &dx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let dx = vec![g[0] / n; self.value(*x).len()];
                Self::accumulate(grads, *x, &dx);
            }
            Op::Reshape(x) => {
                Self::accumulate(grads, *x, g);
            }
            Op::SliceFlat { x, start } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                dx[*start..start + g.len()].copy_from_slice(g);
                Self::accumulate(grads, *x, &dx);
            }
            Op::Concat { a, b, axis } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let outer: usize = av.dims()[..*axis].iter().product();
                let inner: usize = av.dims()[*axis + 1..].iter().product();
                let slab_a = av.dims()[*axis] * inner;
                let slab_b = bv.dims()[*axis] * inner;
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for o in 0..outer {
                    let base = o * (slab_a + slab_b);
                    da[o * slab_a..(o + 1) * slab_a]
                        .copy_from_slice(&g[base..base + slab_a]);
                    db[o * slab_b..(o + 1) * slab_b]
                        .copy_from_slice(&g[base + slab_a..base + slab_a + slab_b]);
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) =
                    conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad);
                Self::accumulate(grads, *x, &dx);
                Self::accumulate(grads, *w, &dw);
                Self::accumulate(grads, *b, &db);
            }
            Op::Upsample2x(x) => {
                let xv = self.value(*x);
                let (c, h, w) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![0.0; xv.len()];
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            let mut acc = 0.0;
                            for dy in 0..2 {
                                for dxp in 0..2 {
                                    acc += g[ci * h2 * w2 + (2 * y + dy) * w2 + 2 * xx + dxp];
                                }
                            }
                            dx[ci * h * w + y * w + xx] = acc;
                        }
                    }
                }
                Self::accumulate(grads, *x, &dx);
            }
            Op::ModulateChannels { x, scale, shift } => {
                let xv = self.value(*x);
                let sv = self.value(*scale);
                let (c, hw) = (xv.dims()[0], xv.dims()[1] * xv.dims()[2]);
                let mut dx = vec![0.0; xv.len()];
                let mut ds = vec![0.0; c];
                let mut dt = vec![0.0; c];
                for ci in 0..c {
                    let s = sv.data()[ci];
                    let xs = &xv.data()[ci * hw..(ci + 1) * hw];
                    let gs = &g[ci * hw..(ci + 1) * hw];
                    let dxs = &mut dx[ci * hw..(ci + 1) * hw];
                    let mut acc_s = 0.0;
                    let mut acc_t = 0.0;
                    for ((d, &gv), &x0) in dxs.iter_mut().zip(gs.iter()).zip(xs.iter()) {
                        *d = s * gv;
                        acc_s += gv * x0;
                        acc_t += gv;
                    }
                    ds[ci] = acc_s;
                    dt[ci] = acc_t;
                }
                Self::accumulate(grads, *x, &dx);
                Self::accumulate(grads, *scale, &ds);
                Self::accumulate(grads, *shift, &dt);
            }
            Op::AddGainedMap { x, map, gain } => {
                let xv = self.value(*x);
                let mv = self.value(*map);
                let gv = self.value(*gain);
                let (c, hw) = (xv.dims()[0], mv.len());
                let mut dmap = vec![0.0; hw];
                let mut dgain = vec![0.0; c];
                for ci in 0..c {
                    let gs = &g[ci * hw..(ci + 1) * hw];
                    let gain_c = gv.data()[ci];
                    let mut acc = 0.0;
                    for ((dm, &gg), &m0) in dmap.iter_mut().zip(gs.iter()).zip(mv.data().iter()) {
                        *dm += gain_c * gg;
                        acc += gg * m0;
                    }
                    dgain[ci] = acc;
                }
                Self::accumulate(grads, *x, g);
                Self::accumulate(grads, *map, &dmap);
                Self::accumulate(grads, *gain, &dgain);
            }
            Op::GdmExtract { inputs, spec } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
                let input_grads = spec.backward(&tensors, &node.value, g);
                for (id, grad) in inputs.iter().zip(input_grads.iter()) {
                    Self::accumulate(grads, *id, grad);
                }
            }
        }
    }
}

// ---- convolution kernels -------------------------------------------------

fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 4 || b.rank() != 1 {
        return Err(Error::DimMismatch(format!(
            "conv2d: x {:?}, w {:?}, b {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    let (cin, h, wid) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (cout, cin_w, kh, kw) = (w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]);
    if cin != cin_w || kh != kw || b.dims()[0] != cout {
        return Err(Error::DimMismatch(format!(
            "conv2d: x {:?}, w {:?}, b {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    let k = kh;
    if h + 2 * pad < k || wid + 2 * pad < k || stride == 0 {
        return Err(Error::DimMismatch(format!(
            "conv2d: kernel {k} too large for input {:?} with pad {pad}",
            x.dims()
        )));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wid + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        let bias = b.data()[co];
        for v in out[co * ho * wo..(co + 1) * ho * wo].iter_mut() {
            *v = bias;
        }
        for ci in 0..cin {
            let xplane = &x.data()[ci * h * wid..(ci + 1) * h * wid];
            let wbase = ((co * cin + ci) * k) * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w.data()[wbase + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * wid..(iy as usize + 1) * wid];
                        let orow = &mut out[co * ho * wo + oy * wo..co * ho * wo + (oy + 1) * wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wid as isize {
                                *o += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(vec![cout, ho, wo], out))
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (cin, h, wid) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (cout, _, k, _) = (w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wid + 2 * pad - k) / stride + 1;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for co in 0..cout {
        let gplane = &g[co * ho * wo..(co + 1) * ho * wo];
        db[co] += gplane.iter().sum::<f64>();
        for ci in 0..cin {
            let xplane = &x.data()[ci * h * wid..(ci + 1) * h * wid];
            let dxplane_base = ci * h * wid;
            let wbase = ((co * cin + ci) * k) * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w.data()[wbase + ky * k + kx];
                    let mut dw_acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        let xrow = &xplane[iy as usize * wid..(iy as usize + 1) * wid];
                        for (ox, &gv) in grow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wid as isize {
                                dw_acc += gv * xrow[ix as usize];
                                dx[dxplane_base + iy as usize * wid + ix as usize] += gv * wv;
                            }
                        }
                    }
                    dw[wbase + ky * k + kx] += dw_acc;
                }
            }
        }
    }
    (dx, dw, db)
}

fn upsample2x_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::DimMismatch(format!(
            "upsample2x wants [C,H,W], got {:?}",
            x.dims()
        )));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ci in 0..c {
        for y in 0..h {
            let xrow = &x.data()[ci * h * w + y * w..ci * h * w + (y + 1) * w];
            for dy in 0..2 {
                let orow =
                    &mut out[ci * h2 * w2 + (2 * y + dy) * w2..ci * h2 * w2 + (2 * y + dy + 1) * w2];
                for (xx, &v) in xrow.iter().enumerate() {
                    orow[2 * xx] = v;
                    orow[2 * xx + 1] = v;
                }
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, h2, w2], out))
}

fn modulate_forward(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    if x.rank() != 3
        || scale.rank() != 1
        || shift.rank() != 1
        || scale.dims()[0] != x.dims()[0]
        || shift.dims()[0] != x.dims()[0]
    {
        return Err(Error::DimMismatch(format!(
            "modulate_channels: x {:?}, scale {:?}, shift {:?}",
            x.dims(),
            scale.dims(),
            shift.dims()
        )));
    }
    let (c, hw) = (x.dims()[0], x.dims()[1] * x.dims()[2]);
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        let (s, t) = (scale.data()[ci], shift.data()[ci]);
        let xs = &x.data()[ci * hw..(ci + 1) * hw];
        let os = &mut out[ci * hw..(ci + 1) * hw];
        for (o, &v) in os.iter_mut().zip(xs.iter()) {
            *o = s * v + t;
        }
    }
    Ok(Tensor::from_raw(x.dims().to_vec(), out))
}

fn add_gained_map_forward(x: &Tensor, map: &Tensor, gain: &Tensor) -> Result<Tensor> {
    if x.rank() != 3
        || map.rank() != 2
        || gain.rank() != 1
        || map.dims()[0] != x.dims()[1]
        || map.dims()[1] != x.dims()[2]
        || gain.dims()[0] != x.dims()[0]
    {
        return Err(Error::DimMismatch(format!(
            "add_gained_map: x {:?}, map {:?}, gain {:?}",
            x.dims(),
            map.dims(),
            gain.dims()
        )));
    }
    let (c, hw) = (x.dims()[0], map.len());
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        let gc = gain.data()[ci];
        let xs = &x.data()[ci * hw..(ci + 1) * hw];
        let os = &mut out[ci * hw..(ci + 1) * hw];
        for ((o, &v), &m) in os.iter_mut().zip(xs.iter()).zip(map.data().iter()) {
            *o = v + gc * m;
        }
    }
    Ok(Tensor::from_raw(x.dims().to_vec(), out))
}
