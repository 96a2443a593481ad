//! Graph disentangled module: turns one entangled latent vector into `N`
//! per-layer codes by reasoning `D = N*H` attribute-level relations over a
//! node graph built from the latent.
//!
//! The pipeline is `build_nodes` (project the latent into two node sets) ->
//! per-pair relation embeddings -> triplet-convolution attribute extraction
//! -> contiguous split into the per-layer codes. Relation reasoning comes in
//! two flavours: `Hmrr` scores all `D` attribute relations per node pair
//! separately; `Vrr` is the ablation baseline that models a single scalar
//! relation per pair and broadcasts it. A third `Affine` mode bypasses the
//! graph entirely with one linear map, standing in for plain intermediate
//! latent spaces.
//!
//! The all-pairs extraction is evaluated streaming, one pair at a time, both
//! forward and backward; the `J^2 x D` relation block is never materialized.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Pcg32;
use crate::tensor::{self, KinkTracker, Tensor, NORM_EPS};

/// Hyper-parameters of the module. `d() = n * h` is the number of latent
/// dimensions of the disentangled space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GdmConfig {
    /// Latent dimension of the encoder output.
    pub h: usize,
    /// Number of generator layers (one code per layer).
    pub n: usize,
    /// Nodes per node set.
    pub j: usize,
    /// Node dimension.
    pub c: usize,
    /// Triplet-convolution filter count.
    pub k: usize,
}

impl GdmConfig {
    pub fn d(&self) -> usize {
        self.n * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.n == 0 || self.j == 0 || self.c == 0 || self.k == 0 {
            return Err(Error::DimMismatch(format!("gdm config has a zero field: {self:?}")));
        }
        if self.j * self.c < 2 {
            return Err(Error::DimMismatch(
                "gdm config needs j*c >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// How relations between node pairs are modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationMode {
    /// Hierarchical multi-relation reasoning: one relation per attribute.
    Hmrr,
    /// Vanilla relation reasoning: one scalar relation per pair, broadcast.
    Vrr,
}

/// Latent-to-codes mode selected at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdmMode {
    Hmrr,
    Vrr,
    /// Single linear layer `z -> f`; the plain-latent-space baseline.
    Affine,
}

/// Trainable parameters. Shapes:
/// `wu, wv: (J*C) x H`, `wattr: D x 2C`, `omega: K x 3`, `conv_bias: K`,
/// `readout_w: C*K`, `readout_bias: 1`, `affine: D x H`.
#[derive(Clone, Debug)]
pub struct GdmParams {
    pub wu: Tensor,
    pub wv: Tensor,
    pub wattr: Tensor,
    pub omega: Tensor,
    pub conv_bias: Tensor,
    pub readout_w: Tensor,
    pub readout_bias: Tensor,
    pub affine: Tensor,
}

impl GdmParams {
    /// Fresh parameters: projections `~ N(0, 1/fan_in)`, conv biases zero.
    /// The readout bias starts at 1: the cross-pair score mean shares one
    /// sign across all attributes, so a zero bias strands the final ReLU
    /// below its kink for about half the seeds and no gradient ever reaches
    /// the module. The rng is consumed in field order, so initialization is
    /// reproducible.
    pub fn init(cfg: &GdmConfig, rng: &mut Pcg32) -> GdmParams {
        let (h, j, c, k, d) = (cfg.h, cfg.j, cfg.c, cfg.k, cfg.d());
        let std_h = 1.0 / libm::sqrt(h as f64);
        GdmParams {
            wu: rng.normal_tensor(&[j * c, h], std_h),
            wv: rng.normal_tensor(&[j * c, h], std_h),
            wattr: rng.normal_tensor(&[d, 2 * c], 1.0 / libm::sqrt(2.0 * c as f64)),
            omega: rng.normal_tensor(&[k, 3], 1.0 / libm::sqrt(3.0)),
            conv_bias: Tensor::from_raw(vec![k], vec![0.0; k]),
            readout_w: rng.normal_tensor(&[c * k], 1.0 / libm::sqrt((c * k) as f64)),
            readout_bias: Tensor::scalar(1.0),
            affine: rng.normal_tensor(&[d, h], std_h),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("gdm.wu".into(), &self.wu),
            ("gdm.wv".into(), &self.wv),
            ("gdm.wattr".into(), &self.wattr),
            ("gdm.omega".into(), &self.omega),
            ("gdm.conv_bias".into(), &self.conv_bias),
            ("gdm.readout_w".into(), &self.readout_w),
            ("gdm.readout_bias".into(), &self.readout_bias),
            ("gdm.affine".into(), &self.affine),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("gdm.wu".into(), &mut self.wu),
            ("gdm.wv".into(), &mut self.wv),
            ("gdm.wattr".into(), &mut self.wattr),
            ("gdm.omega".into(), &mut self.omega),
            ("gdm.conv_bias".into(), &mut self.conv_bias),
            ("gdm.readout_w".into(), &mut self.readout_w),
            ("gdm.readout_bias".into(), &mut self.readout_bias),
            ("gdm.affine".into(), &mut self.affine),
        ]
    }
}

/// Graph nodes of the registered parameters.
#[derive(Clone, Copy, Debug)]
pub struct GdmNodes {
    pub wu: NodeId,
    pub wv: NodeId,
    pub wattr: NodeId,
    pub omega: NodeId,
    pub conv_bias: NodeId,
    pub readout_w: NodeId,
    pub readout_bias: NodeId,
    pub affine: NodeId,
}

/// Register the parameters on a graph, trainably or as frozen inputs.
pub fn register_params(g: &mut Graph, p: &GdmParams, trainable: bool) -> Result<GdmNodes> {
    let mut reg = |name: &str, t: &Tensor| -> Result<NodeId> {
        if trainable {
            g.param(name, t)
        } else {
            Ok(g.input(t.clone()))
        }
    };
    Ok(GdmNodes {
        wu: reg("gdm.wu", &p.wu)?,
        wv: reg("gdm.wv", &p.wv)?,
        wattr: reg("gdm.wattr", &p.wattr)?,
        omega: reg("gdm.omega", &p.omega)?,
        conv_bias: reg("gdm.conv_bias", &p.conv_bias)?,
        readout_w: reg("gdm.readout_w", &p.readout_w)?,
        readout_bias: reg("gdm.readout_bias", &p.readout_bias)?,
        affine: reg("gdm.affine", &p.affine)?,
    })
}

/// Relation embedding of one ordered node pair: a distribution over the `D`
/// attribute relations whose support is confined to positive pre-activations.
#[derive(Clone, Debug)]
pub struct RelationEmbedding {
    pub r: Vec<f64>,
    /// `support[d]` iff the pre-activation for attribute `d` was positive.
    pub support: Vec<bool>,
    /// All pre-activations vanished; `r` fell back to the uniform vector.
    pub degenerate: bool,
}

pub(crate) struct RelationParts {
    pub rel: RelationEmbedding,
    /// ReLU output (= pre-activation clamped at zero), kept for the adjoint.
    pub pre: Vec<f64>,
    pub norm: f64,
}

/// Value-level relation reasoning for one pair; shared by the fused all-pairs
/// op and by callers that inspect single relations.
pub(crate) fn relation_parts(u: &[f64], v: &[f64], wattr: &Tensor, kinks: &mut KinkTracker) -> RelationParts {
    let d = wattr.dims()[0];
    let two_c = wattr.dims()[1];
    let c = two_c / 2;
    debug_assert_eq!(u.len(), c);
    debug_assert_eq!(v.len(), c);

    let mut pre = vec![0.0; d];
    for (di, p) in pre.iter_mut().enumerate() {
        let row = wattr.row(di);
        let mut acc = 0.0;
        for t in 0..c {
            acc += row[t] * u[t] + row[c + t] * v[t];
        }
        kinks.note(acc);
        *p = if acc > 0.0 { acc } else { 0.0 };
    }
    let norm = tensor::l2_norm(&pre);
    let support: Vec<bool> = pre.iter().map(|&p| p > 0.0).collect();
    if norm <= NORM_EPS {
        return RelationParts {
            rel: RelationEmbedding {
                r: vec![1.0 / d as f64; d],
                support,
                degenerate: true,
            },
            pre,
            norm,
        };
    }
    // Softmax over the support of pre/norm; exact zeros are masked out.
    let mut max = f64::NEG_INFINITY;
    for (di, &s) in support.iter().enumerate() {
        if s {
            max = max.max(pre[di] / norm);
        }
    }
    let mut r = vec![0.0; d];
    let mut denom = 0.0;
    for di in 0..d {
        if support[di] {
            let e = libm::exp(pre[di] / norm - max);
            r[di] = e;
            denom += e;
        }
    }
    for v in r.iter_mut() {
        *v /= denom;
    }
    RelationParts {
        rel: RelationEmbedding {
            r,
            support,
            degenerate: false,
        },
        pre,
        norm,
    }
}

/// Relation embedding of a single ordered node pair.
pub fn hmrr_relation_value(u: &[f64], v: &[f64], wattr: &Tensor) -> Result<RelationEmbedding> {
    if wattr.rank() != 2 || wattr.dims()[1] % 2 != 0 {
        return Err(Error::DimMismatch(format!(
            "wattr must be D x 2C, got {:?}",
            wattr.dims()
        )));
    }
    let c = wattr.dims()[1] / 2;
    if u.len() != c || v.len() != c {
        return Err(Error::DimMismatch(format!(
            "node dims {} and {} vs wattr {:?}",
            u.len(),
            v.len(),
            wattr.dims()
        )));
    }
    Ok(relation_parts(u, v, wattr, &mut KinkTracker::new()).rel)
}

/// Differentiable single-pair relation, built out of graph primitives.
/// `u` and `v` are node vectors of length `C`; the result is the `D`-vector
/// relation embedding node.
pub fn hmrr_relation(g: &mut Graph, u: NodeId, v: NodeId, wattr: NodeId) -> Result<NodeId> {
    let c = g.value(u).len();
    if g.value(v).len() != c || g.value(wattr).dims()[1] != 2 * c {
        return Err(Error::DimMismatch(format!(
            "hmrr_relation: u {:?}, v {:?}, wattr {:?}",
            g.value(u).dims(),
            g.value(v).dims(),
            g.value(wattr).dims()
        )));
    }
    let x = g.concat(u, v, 0)?;
    let wx = g.matvec(wattr, x)?;
    let pre = g.relu(wx);
    let pre_val = g.value(pre).clone();
    let norm = tensor::l2_norm(pre_val.data());
    if norm <= NORM_EPS {
        let d = pre_val.len();
        g.note_degenerate_relation();
        return Ok(g.input(Tensor::from_raw(vec![d], vec![1.0 / d as f64; d])));
    }
    let y = g.l2_normalize(pre)?;
    let mask: Vec<bool> = pre_val.data().iter().map(|&p| p == 0.0).collect();
    g.softmax_masked(y, Some(&mask))
}

/// Shape and mode of the fused all-pairs extraction op.
#[derive(Clone, Copy, Debug)]
pub struct GdmExtractSpec {
    pub j: usize,
    pub c: usize,
    pub d: usize,
    pub k: usize,
    pub mode: RelationMode,
}

pub(crate) struct ExtractStats {
    pub kinks: KinkTracker,
    pub degenerate_relations: usize,
}

pub(crate) struct ExtractOut {
    pub value: Tensor,
    pub stats: ExtractStats,
}

impl GdmExtractSpec {
    fn check_inputs(&self, t: &[&Tensor]) -> Result<()> {
        let (j, c, d, k) = (self.j, self.c, self.d, self.k);
        let want: [(&str, &[usize]); 7] = [
            ("u", &[j, c]),
            ("v", &[j, c]),
            ("wattr", &[d, 2 * c]),
            ("omega", &[k, 3]),
            ("conv_bias", &[k]),
            ("readout_w", &[c * k]),
            ("readout_bias", &[1]),
        ];
        for (i, (name, dims)) in want.iter().enumerate() {
            if t[i].dims() != *dims {
                return Err(Error::DimMismatch(format!(
                    "gdm extract input `{name}`: want {dims:?}, got {:?}",
                    t[i].dims()
                )));
            }
        }
        Ok(())
    }

    /// Streaming forward pass over all `J^2` ordered pairs.
    pub(crate) fn forward(&self, t: &[&Tensor]) -> Result<ExtractOut> {
        self.check_inputs(t)?;
        let (j, c, d, k) = (self.j, self.c, self.d, self.k);
        let (u, v, wattr, omega, bconv, wread, bread) =
            (t[0], t[1], t[2], t[3], t[4], t[5], t[6]);
        let pairs = (j * j) as f64;
        let mut acc = vec![0.0; d];
        let mut kinks = KinkTracker::new();
        let mut degenerate = 0usize;

        let vrr_scores = match self.mode {
            RelationMode::Vrr => Some(vrr_attention(u, v)),
            RelationMode::Hmrr => None,
        };

        for i in 0..j {
            let urow = u.row(i);
            for jj in 0..j {
                let vrow = v.row(jj);
                match self.mode {
                    RelationMode::Hmrr => {
                        let parts = relation_parts(urow, vrow, wattr, &mut kinks);
                        if parts.rel.degenerate {
                            degenerate += 1;
                        }
                        for (di, a) in acc.iter_mut().enumerate() {
                            *a += convkb_score(
                                urow,
                                parts.rel.r[di],
                                vrow,
                                omega,
                                bconv,
                                wread,
                                c,
                                k,
                                &mut kinks,
                            );
                        }
                    }
                    RelationMode::Vrr => {
                        let r = vrr_scores.as_ref().unwrap()[i * j + jj];
                        let score =
                            convkb_score(urow, r, vrow, omega, bconv, wread, c, k, &mut kinks);
                        for a in acc.iter_mut() {
                            *a += score;
                        }
                    }
                }
            }
        }

        let bias = bread.data()[0];
        let mut out = vec![0.0; d];
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            let fpre = a / pairs + bias;
            kinks.note(fpre);
            *o = if fpre > 0.0 { fpre } else { 0.0 };
        }
        Ok(ExtractOut {
            value: Tensor::from_raw(vec![d], out),
            stats: ExtractStats {
                kinks,
                degenerate_relations: degenerate,
            },
        })
    }

    /// Streaming adjoint; recomputes per-pair relations instead of storing
    /// the relation block.
    pub(crate) fn backward(&self, t: &[&Tensor], output: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
        let (j, c, d, k) = (self.j, self.c, self.d, self.k);
        let (u, v, wattr, omega, bconv, wread) = (t[0], t[1], t[2], t[3], t[4], t[5]);
        let pairs = (j * j) as f64;

        // ReLU mask of the final activation is recoverable from the output.
        let g_fpre: Vec<f64> = g
            .iter()
            .zip(output.data().iter())
            .map(|(gv, &o)| if o > 0.0 { *gv } else { 0.0 })
            .collect();
        let g_bread: f64 = g_fpre.iter().sum();
        // Per-pair score gradient, identical across pairs.
        let g_score: Vec<f64> = g_fpre.iter().map(|gv| gv / pairs).collect();

        let mut du = vec![0.0; u.len()];
        let mut dv = vec![0.0; v.len()];
        let mut dwattr = vec![0.0; wattr.len()];
        let mut domega = vec![0.0; omega.len()];
        let mut dbconv = vec![0.0; bconv.len()];
        let mut dwread = vec![0.0; wread.len()];

        let vrr_scores = match self.mode {
            RelationMode::Vrr => Some(vrr_attention(u, v)),
            RelationMode::Hmrr => None,
        };
        let mut g_vrr = vec![0.0; j * j];
        let g_score_sum: f64 = g_score.iter().sum();

        for i in 0..j {
            let urow = u.row(i);
            for jj in 0..j {
                let vrow = v.row(jj);
                match self.mode {
                    RelationMode::Hmrr => {
                        let parts =
                            relation_parts(urow, vrow, wattr, &mut KinkTracker::new());
                        let mut g_r = vec![0.0; d];
                        for di in 0..d {
                            if g_score[di] == 0.0 {
                                continue;
                            }
                            convkb_backward(
                                urow,
                                parts.rel.r[di],
                                vrow,
                                omega,
                                bconv,
                                wread,
                                c,
                                k,
                                g_score[di],
                                &mut du[i * c..(i + 1) * c],
                                &mut g_r[di],
                                &mut dv[jj * c..(jj + 1) * c],
                                &mut domega,
                                &mut dbconv,
                                &mut dwread,
                            );
                        }
                        relation_backward(
                            &parts,
                            &g_r,
                            urow,
                            vrow,
                            wattr,
                            &mut du[i * c..(i + 1) * c],
                            &mut dv[jj * c..(jj + 1) * c],
                            &mut dwattr,
                        );
                    }
                    RelationMode::Vrr => {
                        let r = vrr_scores.as_ref().unwrap()[i * j + jj];
                        // The triplet score is shared by every attribute, so
                        // one adjoint with the summed upstream gradient.
                        if g_score_sum != 0.0 {
                            convkb_backward(
                                urow,
                                r,
                                vrow,
                                omega,
                                bconv,
                                wread,
                                c,
                                k,
                                g_score_sum,
                                &mut du[i * c..(i + 1) * c],
                                &mut g_vrr[i * j + jj],
                                &mut dv[jj * c..(jj + 1) * c],
                                &mut domega,
                                &mut dbconv,
                                &mut dwread,
                            );
                        }
                    }
                }
            }
        }

        if let Some(scores) = vrr_scores {
            vrr_attention_backward(u, v, &scores, &g_vrr, &mut du, &mut dv);
        }

        vec![du, dv, dwattr, domega, dbconv, dwread, vec![g_bread]]
    }
}

/// Row-softmax attention `softmax_j((U_i . V_j) / sqrt(C))`, flattened row-major.
fn vrr_attention(u: &Tensor, v: &Tensor) -> Vec<f64> {
    let (j, c) = (u.dims()[0], u.dims()[1]);
    let temp = libm::sqrt(c as f64);
    let mut logits = vec![0.0; j * j];
    for i in 0..j {
        let urow = u.row(i);
        for jj in 0..j {
            let vrow = v.row(jj);
            let mut acc = 0.0;
            for t in 0..c {
                acc += urow[t] * vrow[t];
            }
            logits[i * j + jj] = acc / temp;
        }
    }
    let lt = Tensor::from_raw(vec![j, j], logits);
    tensor::row_softmax(&lt, 1.0).expect("square matrix").into_data()
}

fn vrr_attention_backward(
    u: &Tensor,
    v: &Tensor,
    scores: &[f64],
    g_scores: &[f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    let (j, c) = (u.dims()[0], u.dims()[1]);
    let temp = libm::sqrt(c as f64);
    for i in 0..j {
        let srow = &scores[i * j..(i + 1) * j];
        let grow = &g_scores[i * j..(i + 1) * j];
        let dot: f64 = srow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
        let urow = u.row(i);
        for jj in 0..j {
            let gl = srow[jj] * (grow[jj] - dot) / temp;
            if gl == 0.0 {
                continue;
            }
            let vrow = v.row(jj);
            for t in 0..c {
                du[i * c + t] += gl * vrow[t];
                dv[jj * c + t] += gl * urow[t];
            }
        }
    }
}

/// Width-3 triplet convolution score for one (node, relation, node) triplet.
/// The triplet matrix `[u | r*1 | v]` is scanned row-wise by each filter; the
/// activations are flattened row-major `(row, filter)` and read out by `w`.
#[allow(clippy::too_many_arguments)]
fn convkb_score(
    u: &[f64],
    r: f64,
    v: &[f64],
    omega: &Tensor,
    bconv: &Tensor,
    wread: &Tensor,
    c: usize,
    k: usize,
    kinks: &mut KinkTracker,
) -> f64 {
    let mut score = 0.0;
    for t in 0..c {
        for ki in 0..k {
            let om = omega.row(ki);
            let z = u[t] * om[0] + r * om[1] + v[t] * om[2] + bconv.data()[ki];
            kinks.note(z);
            if z > 0.0 {
                score += wread.data()[t * k + ki] * z;
            }
        }
    }
    score
}

#[allow(clippy::too_many_arguments)]
fn convkb_backward(
    u: &[f64],
    r: f64,
    v: &[f64],
    omega: &Tensor,
    bconv: &Tensor,
    wread: &Tensor,
    c: usize,
    k: usize,
    g_score: f64,
    du: &mut [f64],
    dr: &mut f64,
    dv: &mut [f64],
    domega: &mut [f64],
    dbconv: &mut [f64],
    dwread: &mut [f64],
) {
    for t in 0..c {
        for ki in 0..k {
            let om = omega.row(ki);
            let z = u[t] * om[0] + r * om[1] + v[t] * om[2] + bconv.data()[ki];
            if z <= 0.0 {
                continue;
            }
            dwread[t * k + ki] += g_score * z;
            let gz = g_score * wread.data()[t * k + ki];
            domega[ki * 3] += gz * u[t];
            domega[ki * 3 + 1] += gz * r;
            domega[ki * 3 + 2] += gz * v[t];
            dbconv[ki] += gz;
            du[t] += gz * om[0];
            *dr += gz * om[1];
            dv[t] += gz * om[2];
        }
    }
}

/// Adjoint of one pair's relation embedding: softmax-on-support, then the
/// normalization, then the ReLU, then the linear map into `wattr`/`u`/`v`.
fn relation_backward(
    parts: &RelationParts,
    g_r: &[f64],
    u: &[f64],
    v: &[f64],
    wattr: &Tensor,
    du: &mut [f64],
    dv: &mut [f64],
    dwattr: &mut [f64],
) {
    if parts.rel.degenerate {
        return; // uniform fallback is constant
    }
    let d = g_r.len();
    let c = u.len();
    let r = &parts.rel.r;
    let dot_r: f64 = g_r.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
    // y = pre / norm; g_y on the softmax support, zero elsewhere.
    let norm = parts.norm;
    let mut g_y = vec![0.0; d];
    for di in 0..d {
        if parts.rel.support[di] {
            g_y[di] = r[di] * (g_r[di] - dot_r);
        }
    }
    let mut dot_y = 0.0;
    for di in 0..d {
        dot_y += (parts.pre[di] / norm) * g_y[di];
    }
    for di in 0..d {
        // through the normalization, then the ReLU (support = positive pre)
        let g_pre = (g_y[di] - (parts.pre[di] / norm) * dot_y) / norm;
        if !parts.rel.support[di] || g_pre == 0.0 {
            continue;
        }
        let row = wattr.row(di);
        for t in 0..c {
            dwattr[di * 2 * c + t] += g_pre * u[t];
            dwattr[di * 2 * c + c + t] += g_pre * v[t];
            du[t] += g_pre * row[t];
            dv[t] += g_pre * row[c + t];
        }
    }
}

/// Project the latent into the two node sets: `U = reshape(Wu z, J x C)`,
/// `V = reshape(Wv z, J x C)`. At `J = 1` this is exactly the single-node
/// projection form.
pub fn build_nodes(
    g: &mut Graph,
    z: NodeId,
    wu: NodeId,
    wv: NodeId,
    cfg: &GdmConfig,
) -> Result<(NodeId, NodeId)> {
    if g.value(z).dims() != [cfg.h] {
        return Err(Error::DimMismatch(format!(
            "latent must be [{}], got {:?}",
            cfg.h,
            g.value(z).dims()
        )));
    }
    let uf = g.matvec(wu, z)?;
    let u = g.reshape(uf, &[cfg.j, cfg.c])?;
    let vf = g.matvec(wv, z)?;
    let v = g.reshape(vf, &[cfg.j, cfg.c])?;
    Ok((u, v))
}

/// Split the `D`-vector of extracted attributes into `n` contiguous codes of
/// length `h`. Pure slicing; no remixing.
pub fn split_codes(g: &mut Graph, f: NodeId, n: usize, h: usize) -> Result<Vec<NodeId>> {
    if g.value(f).len() != n * h {
        return Err(Error::DimMismatch(format!(
            "split_codes: {} values into {n} codes of {h}",
            g.value(f).len()
        )));
    }
    (0..n).map(|i| g.slice_flat(f, i * h, h)).collect()
}

/// Full module forward: latent vector in, `N` disentangled codes out.
pub fn gdm_forward(
    g: &mut Graph,
    z: NodeId,
    nodes: &GdmNodes,
    cfg: &GdmConfig,
    mode: GdmMode,
) -> Result<Vec<NodeId>> {
    cfg.validate()?;
    let f = match mode {
        GdmMode::Affine => g.matvec(nodes.affine, z)?,
        GdmMode::Hmrr | GdmMode::Vrr => {
            let (u, v) = build_nodes(g, z, nodes.wu, nodes.wv, cfg)?;
            let spec = GdmExtractSpec {
                j: cfg.j,
                c: cfg.c,
                d: cfg.d(),
                k: cfg.k,
                mode: if mode == GdmMode::Hmrr {
                    RelationMode::Hmrr
                } else {
                    RelationMode::Vrr
                },
            };
            g.gdm_extract(
                [
                    u,
                    v,
                    nodes.wattr,
                    nodes.omega,
                    nodes.conv_bias,
                    nodes.readout_w,
                    nodes.readout_bias,
                ],
                spec,
            )?
        }
    };
    split_codes(g, f, cfg.n, cfg.h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> GdmConfig {
        GdmConfig { h: 16, n: 4, j: 8, c: 4, k: 3 }
    }

    fn setup(cfg: &GdmConfig, seed: u64) -> (Graph, GdmNodes, NodeId, GdmParams) {
        let mut rng = Pcg32::new(seed, 0);
        let params = GdmParams::init(cfg, &mut rng);
        let mut g = Graph::new();
        let nodes = register_params(&mut g, &params, true).unwrap();
        let z = g.input(rng.normal_tensor(&[cfg.h], 1.0));
        (g, nodes, z, params)
    }

    #[test]
    fn config_invariants() {
        assert!(toy_cfg().validate().is_ok());
        assert_eq!(toy_cfg().d(), 64);
        assert!(GdmConfig { h: 4, n: 1, j: 1, c: 1, k: 1 }.validate().is_err());
        assert!(GdmConfig { h: 4, n: 0, j: 2, c: 2, k: 1 }.validate().is_err());
    }

    #[test]
    fn build_nodes_zero_latent_gives_zero_nodes() {
        let cfg = toy_cfg();
        let (mut g, nodes, _, _) = setup(&cfg, 1);
        let z0 = g.input(Tensor::zeros(&[cfg.h]).unwrap());
        let (u, v) = build_nodes(&mut g, z0, nodes.wu, nodes.wv, &cfg).unwrap();
        assert_eq!(g.value(u).dims(), &[cfg.j, cfg.c]);
        assert!(g.value(u).data().iter().all(|&x| x == 0.0));
        assert!(g.value(v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn build_nodes_j1_matches_plain_projection() {
        let cfg = GdmConfig { h: 4, n: 2, j: 1, c: 3, k: 2 };
        let (mut g, nodes, z, params) = setup(&cfg, 2);
        let (u, _) = build_nodes(&mut g, z, nodes.wu, nodes.wv, &cfg).unwrap();
        let direct = tensor::matvec(&params.wu, g.value(z)).unwrap();
        assert_eq!(g.value(u).data(), direct.data());
    }

    #[test]
    fn relation_single_support_and_symmetry() {
        // wattr engineered so pre = (a, 0) with a > 0 -> r = (1, 0).
        let wattr = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let rel = hmrr_relation_value(&[2.0], &[-1.0], &wattr).unwrap();
        assert_eq!(rel.r, vec![1.0, 0.0]);
        assert!(!rel.degenerate);

        // pre = (a, a) -> r = (0.5, 0.5).
        let wattr = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let rel = hmrr_relation_value(&[2.0], &[0.0], &wattr).unwrap();
        assert_eq!(rel.r, vec![0.5, 0.5]);
    }

    #[test]
    fn relation_degenerate_returns_uniform() {
        let wattr = Tensor::new(&[3, 2], vec![-1.0, 0.0, -2.0, 0.0, -3.0, 0.0]).unwrap();
        let rel = hmrr_relation_value(&[1.0], &[1.0], &wattr).unwrap();
        assert!(rel.degenerate);
        for v in rel.r {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relation_matches_scalar_oracle_c1() {
        // C=1, u=(1), v=(2), wattr rows (1,0),(0,1),(-1,1): pre = (1,2,1).
        let wattr = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 1.0]).unwrap();
        let rel = hmrr_relation_value(&[1.0], &[2.0], &wattr).unwrap();
        let norm = (6.0f64).sqrt();
        let e: Vec<f64> = [1.0, 2.0, 1.0].iter().map(|p| (p / norm).exp()).collect();
        let s: f64 = e.iter().sum();
        for (got, want) in rel.r.iter().zip(e.iter().map(|v| v / s)) {
            assert!((got - want).abs() < 1e-12);
        }
        let total: f64 = rel.r.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relation_graph_path_agrees_with_value_path() {
        let cfg = GdmConfig { h: 6, n: 2, j: 2, c: 3, k: 2 };
        let (mut g, nodes, z, params) = setup(&cfg, 5);
        let (u, v) = build_nodes(&mut g, z, nodes.wu, nodes.wv, &cfg).unwrap();
        let u0 = g.slice_flat(u, 0, cfg.c).unwrap();
        let v1 = g.slice_flat(v, cfg.c, cfg.c).unwrap();
        let r = hmrr_relation(&mut g, u0, v1, nodes.wattr).unwrap();
        let want = hmrr_relation_value(
            &g.value(u).data()[0..cfg.c],
            &g.value(v).data()[cfg.c..2 * cfg.c],
            &params.wattr,
        )
        .unwrap();
        for (a, b) in g.value(r).data().iter().zip(want.r.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn extract_zero_network_gives_zero_attributes() {
        let cfg = GdmConfig { h: 4, n: 2, j: 2, c: 2, k: 1 };
        let mut rng = Pcg32::new(9, 0);
        let mut params = GdmParams::init(&cfg, &mut rng);
        params.omega = Tensor::zeros(&[1, 3]).unwrap();
        params.readout_w = Tensor::zeros(&[2]).unwrap();
        params.conv_bias = Tensor::zeros(&[1]).unwrap();
        params.readout_bias = Tensor::scalar(0.0);
        let mut g = Graph::new();
        let nodes = register_params(&mut g, &params, false).unwrap();
        let z = g.input(rng.normal_tensor(&[cfg.h], 1.0));
        let codes = gdm_forward(&mut g, z, &nodes, &cfg, GdmMode::Hmrr).unwrap();
        for code in codes {
            assert!(g.value(code).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn extract_shape_contract() {
        let cfg = GdmConfig { h: 2, n: 2, j: 2, c: 3, k: 2 };
        let (mut g, nodes, z, _) = setup(&cfg, 3);
        let codes = gdm_forward(&mut g, z, &nodes, &cfg, GdmMode::Hmrr).unwrap();
        assert_eq!(codes.len(), 2);
        for c in codes {
            assert_eq!(g.value(c).dims(), &[2]);
        }
    }

    #[test]
    fn split_codes_slices_and_rejects_mismatch() {
        let mut g = Graph::new();
        let f = g.input(Tensor::from_vec((1..=6).map(|v| v as f64).collect()).unwrap());
        let codes = split_codes(&mut g, f, 2, 3).unwrap();
        assert_eq!(g.value(codes[0]).data(), &[1.0, 2.0, 3.0]);
        assert_eq!(g.value(codes[1]).data(), &[4.0, 5.0, 6.0]);

        let single = split_codes(&mut g, f, 1, 6).unwrap();
        assert_eq!(g.value(single[0]).data(), g.value(f).data());

        assert!(matches!(
            split_codes(&mut g, f, 4, 2),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn split_then_concat_is_identity() {
        let mut g = Graph::new();
        let f = g.input(Tensor::from_vec((0..12).map(|v| v as f64).collect()).unwrap());
        let codes = split_codes(&mut g, f, 3, 4).unwrap();
        let mut cat = codes[0];
        for c in &codes[1..] {
            cat = g.concat(cat, *c, 0).unwrap();
        }
        assert_eq!(g.value(cat).data(), g.value(f).data());
    }

    #[test]
    fn toy_forward_emits_n_codes_of_length_h() {
        let cfg = toy_cfg();
        let (mut g, nodes, z, _) = setup(&cfg, 7);
        let codes = gdm_forward(&mut g, z, &nodes, &cfg, GdmMode::Hmrr).unwrap();
        assert_eq!(codes.len(), cfg.n);
        for c in &codes {
            assert_eq!(g.value(*c).dims(), &[cfg.h]);
        }
    }

    #[test]
    fn hmrr_and_vrr_differ_on_random_input() {
        let cfg = toy_cfg();
        let (mut g, nodes, z, _) = setup(&cfg, 11);
        let h = gdm_forward(&mut g, z, &nodes, &cfg, GdmMode::Hmrr).unwrap();
        let v = gdm_forward(&mut g, z, &nodes, &cfg, GdmMode::Vrr).unwrap();
        let hv: Vec<f64> = h.iter().flat_map(|c| g.value(*c).data().to_vec()).collect();
        let vv: Vec<f64> = v.iter().flat_map(|c| g.value(*c).data().to_vec()).collect();
        assert_ne!(hv, vv);
    }

    #[test]
    fn zero_latent_zero_bias_gives_zero_codes() {
        let cfg = toy_cfg();
        let mut rng = Pcg32::new(13, 0);
        let mut params = GdmParams::init(&cfg, &mut rng);
        params.readout_bias = Tensor::scalar(0.0);
        let mut g = Graph::new();
        let nodes = register_params(&mut g, &params, false).unwrap();
        let z0 = g.input(Tensor::zeros(&[cfg.h]).unwrap());
        let codes = gdm_forward(&mut g, z0, &nodes, &cfg, GdmMode::Hmrr).unwrap();
        for c in codes {
            assert!(g.value(c).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn relation_simplex_invariants_over_many_draws() {
        let mut rng = Pcg32::new(202, 0);
        let (d, c) = (12, 3);
        for _ in 0..1000 {
            let wattr = rng.normal_tensor(&[d, 2 * c], 0.6);
            let u: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let v: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let rel = hmrr_relation_value(&u, &v, &wattr).unwrap();
            let sum: f64 = rel.r.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            for (di, &rv) in rel.r.iter().enumerate() {
                assert!(rv >= 0.0);
                if !rel.degenerate && rv > 0.0 {
                    assert!(rel.support[di], "support violated at {di}");
                }
            }
        }
    }

    #[test]
    fn permuting_nodes_jointly_leaves_attributes_unchanged() {
        let cfg = GdmConfig { h: 6, n: 2, j: 4, c: 3, k: 2 };
        let mut rng = Pcg32::new(77, 0);
        let params = GdmParams::init(&cfg, &mut rng);
        let z = rng.normal_tensor(&[cfg.h], 1.0);

        let forward = |p: &GdmParams| -> Vec<f64> {
            let mut g = Graph::new();
            let nodes = register_params(&mut g, p, false).unwrap();
            let zn = g.input(z.clone());
            let codes = gdm_forward(&mut g, zn, &nodes, &cfg, GdmMode::Hmrr).unwrap();
            codes
                .iter()
                .flat_map(|c| g.value(*c).data().to_vec())
                .collect()
        };
        let base = forward(&params);

        // Rotate the J node blocks of wu and wv by one.
        let mut permuted = params.clone();
        let block = cfg.c * cfg.h;
        for (dst, src) in [(&mut permuted.wu, &params.wu), (&mut permuted.wv, &params.wv)] {
            let mut data = vec![0.0; src.len()];
            for jj in 0..cfg.j {
                let s = ((jj + 1) % cfg.j) * block;
                data[jj * block..(jj + 1) * block]
                    .copy_from_slice(&src.data()[s..s + block]);
            }
            *dst = Tensor::from_raw(vec![cfg.j * cfg.c, cfg.h], data);
        }
        let perm = forward(&permuted);
        for (a, b) in base.iter().zip(perm.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
