//! Code generation module: walks the per-layer codes `g_1..g_N` in order and
//! produces one detail code `c_n` per generator layer, replacing the
//! stochastic noise a progressive generator would otherwise consume.
//!
//! Each layer forms a query/key outer product from its code, normalizes it
//! into a row-stochastic relation matrix, and reads the code out through it:
//!
//! - layer 1: `T^1 = rownorm(A^1)`, `c_1 = relu(T^1 g_1)`;
//! - layer n: `T^n = rownorm([T^{n-1} Wt^{n-1}^T | A^n])`,
//!   `c_n = relu(T^n [c_{n-1} ; g_n])`.
//!
//! `rownorm` is row-wise softmax with `1/sqrt(H)` temperature. The carried
//! `F x F` block is what makes the reasoning recursive (`Rerr`); the `Vrr`
//! ablation drops it, so every layer becomes independent. Consequently the
//! relation matrix is `F x H` at layer 1 and `F x (F+H)` for every later
//! layer, matching the declared per-layer weight shapes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CgmConfig {
    /// Dimension of the per-layer codes coming in.
    pub h: usize,
    /// Number of generator layers.
    pub n: usize,
    /// Dimension of the generated detail codes.
    pub f: usize,
}

impl CgmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.n == 0 || self.f == 0 {
            return Err(Error::DimMismatch(format!("cgm config has a zero field: {self:?}")));
        }
        Ok(())
    }

    /// Column count of `T^n` and of `Wt^n`: `H` for the first relation
    /// matrix, `F + H` afterwards.
    pub fn l(&self, n: usize) -> usize {
        if n <= 1 {
            self.h
        } else {
            self.f + self.h
        }
    }
}

/// Recursive vs vanilla relation reasoning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgmMode {
    Rerr,
    Vrr,
}

/// Trainable parameters: `wq: H x H`, `wk: F x H`, and one carry matrix per
/// layer boundary, `wt[m]: F x l(m+1)` used when building `T^{m+2}`.
#[derive(Clone, Debug)]
pub struct CgmParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wt: Vec<Tensor>,
}

impl CgmParams {
    pub fn init(cfg: &CgmConfig, rng: &mut Pcg32) -> CgmParams {
        let (h, f) = (cfg.h, cfg.f);
        let wq = rng.normal_tensor(&[h, h], 1.0 / libm::sqrt(h as f64));
        let wk = rng.normal_tensor(&[f, h], 1.0 / libm::sqrt(h as f64));
        let wt = (0..cfg.n.saturating_sub(1))
            .map(|m| {
                let l = cfg.l(m + 1);
                rng.normal_tensor(&[f, l], 1.0 / libm::sqrt(l as f64))
            })
            .collect();
        CgmParams { wq, wk, wt }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("cgm.wq".into(), &self.wq),
            ("cgm.wk".into(), &self.wk),
        ];
        for (i, t) in self.wt.iter().enumerate() {
            out.push((format!("cgm.wt.{i}"), t));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("cgm.wq".into(), &mut self.wq),
            ("cgm.wk".into(), &mut self.wk),
        ];
        for (i, t) in self.wt.iter_mut().enumerate() {
            out.push((format!("cgm.wt.{i}"), t));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CgmNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wt: Vec<NodeId>,
}

pub fn register_params(g: &mut Graph, p: &CgmParams, trainable: bool) -> Result<CgmNodes> {
    let mut reg = |name: &str, t: &Tensor| -> Result<NodeId> {
        if trainable {
            g.param(name, t)
        } else {
            Ok(g.input(t.clone()))
        }
    };
    Ok(CgmNodes {
        wq: reg("cgm.wq", &p.wq)?,
        wk: reg("cgm.wk", &p.wk)?,
        wt: p
            .wt
            .iter()
            .enumerate()
            .map(|(i, t)| reg(&format!("cgm.wt.{i}"), t))
            .collect::<Result<Vec<_>>>()?,
    })
}

/// Query/key outer product for one layer: `A = (Wk g)(Wq g)^T`, an `F x H`
/// rank-one matrix. The orientation is the one that type-checks against the
/// declared weight shapes and the `F`-dimensional codes.
pub fn layer_attention(g: &mut Graph, code: NodeId, wq: NodeId, wk: NodeId) -> Result<NodeId> {
    let key = g.matvec(wk, code)?;
    let query = g.matvec(wq, code)?;
    g.outer(key, query)
}

/// One step of relation recursion. `t_prev`/`wt_prev` must both be absent
/// (layer 1) or both present with matching column counts.
pub fn recursive_relation(
    g: &mut Graph,
    t_prev: Option<NodeId>,
    attention: NodeId,
    wt_prev: Option<NodeId>,
    cfg: &CgmConfig,
    n: usize,
) -> Result<NodeId> {
    let temp = libm::sqrt(cfg.h as f64);
    match (t_prev, wt_prev) {
        (None, None) => {
            if n != 1 {
                return Err(Error::WrongLayerShape(format!(
                    "layer {n} needs a previous relation matrix"
                )));
            }
            g.row_softmax(attention, temp)
        }
        (Some(tp), Some(wt)) => {
            if n < 2 {
                return Err(Error::WrongLayerShape(
                    "layer 1 must not carry a previous relation matrix".into(),
                ));
            }
            let want = [cfg.f, cfg.l(n - 1)];
            if g.value(tp).dims() != want {
                return Err(Error::WrongLayerShape(format!(
                    "T^{} must be {:?}, got {:?}",
                    n - 1,
                    want,
                    g.value(tp).dims()
                )));
            }
            if g.value(wt).dims() != want {
                return Err(Error::WrongLayerShape(format!(
                    "Wt^{} must be {:?}, got {:?}",
                    n - 1,
                    want,
                    g.value(wt).dims()
                )));
            }
            let wt_t = g.transpose(wt)?;
            let carried = g.matmul(tp, wt_t)?; // F x F
            let cat = g.concat(carried, attention, 1)?; // F x (F+H)
            g.row_softmax(cat, temp)
        }
        _ => Err(Error::WrongLayerShape(
            "previous relation matrix and carry weight must come together".into(),
        )),
    }
}

/// Detail code from a relation matrix: `c_1 = relu(T^1 g_1)` or
/// `c_n = relu(T^n [c_{n-1} ; g_n])`.
pub fn generate_code(
    g: &mut Graph,
    t_n: NodeId,
    c_prev: Option<NodeId>,
    code: NodeId,
) -> Result<NodeId> {
    let input = match c_prev {
        None => code,
        Some(c) => g.concat(c, code, 0)?,
    };
    if g.value(t_n).dims()[1] != g.value(input).len() {
        return Err(Error::DimMismatch(format!(
            "relation matrix {:?} against input of length {}",
            g.value(t_n).dims(),
            g.value(input).len()
        )));
    }
    let mixed = g.matvec(t_n, input)?;
    Ok(g.relu(mixed))
}

/// Sequential pass over all layers. In `Vrr` mode every layer ignores the
/// carried relations: `T^n = rownorm(A^n)` and `c_n = relu(T^n g_n)`.
pub fn cgm_forward(
    g: &mut Graph,
    codes: &[NodeId],
    nodes: &CgmNodes,
    cfg: &CgmConfig,
    mode: CgmMode,
) -> Result<Vec<NodeId>> {
    cfg.validate()?;
    if codes.len() != cfg.n {
        return Err(Error::DimMismatch(format!(
            "{} codes for {} layers",
            codes.len(),
            cfg.n
        )));
    }
    let mut out = Vec::with_capacity(cfg.n);
    let mut t_prev: Option<NodeId> = None;
    let mut c_prev: Option<NodeId> = None;
    for (idx, &code) in codes.iter().enumerate() {
        let n = idx + 1;
        let attention = layer_attention(g, code, nodes.wq, nodes.wk)?;
        let (t_n, c_n) = if n == 1 || mode == CgmMode::Vrr {
            let t_n = recursive_relation(g, None, attention, None, cfg, 1)?;
            let c_n = generate_code(g, t_n, None, code)?;
            (t_n, c_n)
        } else {
            let wt_prev = nodes.wt[idx - 1];
            let t_n = recursive_relation(g, t_prev, attention, Some(wt_prev), cfg, n)?;
            let c_n = generate_code(g, t_n, c_prev, code)?;
            (t_n, c_n)
        };
        t_prev = Some(t_n);
        c_prev = Some(c_n);
        out.push(c_n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    fn setup(cfg: &CgmConfig, seed: u64) -> (Graph, CgmNodes, Vec<NodeId>, CgmParams) {
        let mut rng = Pcg32::new(seed, 0);
        let params = CgmParams::init(cfg, &mut rng);
        let mut g = Graph::new();
        let nodes = register_params(&mut g, &params, true).unwrap();
        let codes = (0..cfg.n)
            .map(|_| g.input(rng.normal_tensor(&[cfg.h], 1.0)))
            .collect();
        (g, nodes, codes, params)
    }

    #[test]
    fn attention_is_rank_one_and_zero_on_zero_code() {
        let cfg = CgmConfig { h: 5, n: 2, f: 3 };
        let (mut g, nodes, _, _) = setup(&cfg, 1);
        let z = g.input(Tensor::zeros(&[5]).unwrap());
        let a = layer_attention(&mut g, z, nodes.wq, nodes.wk).unwrap();
        assert_eq!(g.value(a).dims(), &[3, 5]);
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));

        // Rank one: every 2x2 minor vanishes.
        let code = g.input(Pcg32::new(4, 4).normal_tensor(&[5], 1.0));
        let a = layer_attention(&mut g, code, nodes.wq, nodes.wk).unwrap();
        let m = g.value(a);
        for i in 0..2 {
            for j in 0..4 {
                let det = m.data()[i * 5 + j] * m.data()[(i + 1) * 5 + j + 1]
                    - m.data()[i * 5 + j + 1] * m.data()[(i + 1) * 5 + j];
                assert!(det.abs() < 1e-12, "minor {det}");
            }
        }
    }

    #[test]
    fn scalar_attention_case() {
        // F=1, H=1, wq = wk = (1), g = (2) -> A = (4).
        let mut g = Graph::new();
        let wq = g.input(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let wk = g.input(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let code = g.input(Tensor::from_vec(vec![2.0]).unwrap());
        let a = layer_attention(&mut g, code, wq, wk).unwrap();
        assert_eq!(g.value(a).data(), &[4.0]);
    }

    #[test]
    fn relation_shape_ladder() {
        // H=3, F=2: T^1 is 2x3, T^2 is 2x5.
        let cfg = CgmConfig { h: 3, n: 3, f: 2 };
        let (mut g, nodes, codes, _) = setup(&cfg, 2);
        let a1 = layer_attention(&mut g, codes[0], nodes.wq, nodes.wk).unwrap();
        let t1 = recursive_relation(&mut g, None, a1, None, &cfg, 1).unwrap();
        assert_eq!(g.value(t1).dims(), &[2, 3]);
        let a2 = layer_attention(&mut g, codes[1], nodes.wq, nodes.wk).unwrap();
        let t2 = recursive_relation(&mut g, Some(t1), a2, Some(nodes.wt[0]), &cfg, 2).unwrap();
        assert_eq!(g.value(t2).dims(), &[2, 5]);
        let a3 = layer_attention(&mut g, codes[2], nodes.wq, nodes.wk).unwrap();
        let t3 = recursive_relation(&mut g, Some(t2), a3, Some(nodes.wt[1]), &cfg, 3).unwrap();
        assert_eq!(g.value(t3).dims(), &[2, 5]);
    }

    #[test]
    fn relation_rows_are_stochastic() {
        let cfg = CgmConfig { h: 4, n: 4, f: 3 };
        let (mut g, nodes, codes, _) = setup(&cfg, 3);
        let cs = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Rerr).unwrap();
        assert_eq!(cs.len(), 4);
        // Row-stochasticity is checked on a fresh T^2 build.
        let a1 = layer_attention(&mut g, codes[0], nodes.wq, nodes.wk).unwrap();
        let t1 = recursive_relation(&mut g, None, a1, None, &cfg, 1).unwrap();
        let a2 = layer_attention(&mut g, codes[1], nodes.wq, nodes.wk).unwrap();
        let t2 = recursive_relation(&mut g, Some(t1), a2, Some(nodes.wt[0]), &cfg, 2).unwrap();
        for t in [t1, t2] {
            let m = g.value(t);
            for i in 0..m.dims()[0] {
                let row = m.row(i);
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn wrong_layer_shapes_are_rejected() {
        let cfg = CgmConfig { h: 3, n: 3, f: 2 };
        let (mut g, nodes, codes, _) = setup(&cfg, 4);
        let a = layer_attention(&mut g, codes[0], nodes.wq, nodes.wk).unwrap();
        // Missing carry at layer 2.
        assert!(matches!(
            recursive_relation(&mut g, None, a, None, &cfg, 2),
            Err(Error::WrongLayerShape(_))
        ));
        // T^1 (F x H) used as if it were T^2 (F x (F+H)).
        let t1 = recursive_relation(&mut g, None, a, None, &cfg, 1).unwrap();
        assert!(matches!(
            recursive_relation(&mut g, Some(t1), a, Some(nodes.wt[1]), &cfg, 3),
            Err(Error::WrongLayerShape(_))
        ));
    }

    #[test]
    fn generate_code_scalar_case() {
        // F=1, H=1: single-entry softmax row is 1, so c_1 = relu(g) = 2.
        let mut g = Graph::new();
        let wq = g.input(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let wk = g.input(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let code = g.input(Tensor::from_vec(vec![2.0]).unwrap());
        let cfg = CgmConfig { h: 1, n: 1, f: 1 };
        let a = layer_attention(&mut g, code, wq, wk).unwrap();
        let t1 = recursive_relation(&mut g, None, a, None, &cfg, 1).unwrap();
        assert_eq!(g.value(t1).data(), &[1.0]);
        let c1 = generate_code(&mut g, t1, None, code).unwrap();
        assert_eq!(g.value(c1).data(), &[2.0]);
    }

    #[test]
    fn relu_floor_can_zero_codes() {
        let mut g = Graph::new();
        let t = g.input(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let code = g.input(Tensor::from_vec(vec![-3.0]).unwrap());
        let c = generate_code(&mut g, t, None, code).unwrap();
        assert_eq!(g.value(c).data(), &[0.0]);
    }

    #[test]
    fn forward_shape_contract_toy() {
        let cfg = CgmConfig { h: 16, n: 4, f: 8 };
        let (mut g, nodes, codes, _) = setup(&cfg, 5);
        let cs = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Rerr).unwrap();
        assert_eq!(cs.len(), 4);
        for c in &cs {
            assert_eq!(g.value(*c).dims(), &[8]);
            assert!(g.value(*c).data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn modes_agree_at_layer_one_and_differ_later() {
        let cfg = CgmConfig { h: 6, n: 3, f: 4 };
        let (mut g, nodes, codes, _) = setup(&cfg, 6);
        let re = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Rerr).unwrap();
        let va = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Vrr).unwrap();
        // c_1 bit-identical, some later code differs.
        assert_eq!(g.value(re[0]).data(), g.value(va[0]).data());
        let later_same = (1..cfg.n).all(|i| g.value(re[i]).data() == g.value(va[i]).data());
        assert!(!later_same);
    }

    #[test]
    fn single_layer_modes_are_identical() {
        let cfg = CgmConfig { h: 5, n: 1, f: 3 };
        let (mut g, nodes, codes, _) = setup(&cfg, 7);
        let re = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Rerr).unwrap();
        let va = cgm_forward(&mut g, &codes, &nodes, &cfg, CgmMode::Vrr).unwrap();
        assert_eq!(g.value(re[0]).data(), g.value(va[0]).data());
    }

    #[test]
    fn perturbing_a_code_only_changes_later_layers() {
        let cfg = CgmConfig { h: 6, n: 4, f: 4 };
        let mut rng = Pcg32::new(8, 0);
        let params = CgmParams::init(&cfg, &mut rng);
        let base: Vec<Tensor> = (0..cfg.n).map(|_| rng.normal_tensor(&[cfg.h], 1.0)).collect();

        let run = |codes: &[Tensor]| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let nodes = register_params(&mut g, &params, false).unwrap();
            let ids: Vec<NodeId> = codes.iter().map(|c| g.input(c.clone())).collect();
            let cs = cgm_forward(&mut g, &ids, &nodes, &cfg, CgmMode::Rerr).unwrap();
            cs.iter().map(|c| g.value(*c).data().to_vec()).collect()
        };

        let reference = run(&base);
        let m = 2; // perturb g_3 (0-based index 2)
        let mut perturbed = base.clone();
        perturbed[m] = tensor::add(&perturbed[m], &Tensor::from_vec(vec![0.5; cfg.h]).unwrap()).unwrap();
        let changed = run(&perturbed);
        for i in 0..m {
            assert_eq!(reference[i], changed[i], "c_{} changed", i + 1);
        }
        assert_ne!(reference[m], changed[m]);
    }
}
