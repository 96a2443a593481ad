//! Central-difference verification of the reverse-mode gradients.
//!
//! `gradcheck` rebuilds the forward graph from scratch for every perturbed
//! coordinate, so the closure must be a pure function of the parameter map.
//! Kink-adjacent coordinates are skipped and counted: a coordinate is
//! kink-adjacent when some ReLU/leaky-ReLU pre-activation changes sides
//! between the two endpoint evaluations, i.e. the kink lies inside the
//! secant interval and the difference quotient is meaningless there. An
//! activation that merely sits close to the kink but does not cross it
//! leaves the loss one-sidedly smooth over the interval, so those
//! coordinates still count. A pre-activation within [`KINK_EPS`] of zero
//! that the coordinate actually influences moves across the kink under the
//! perturbation and is caught by the side change.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Named parameter registry used by the checker and the optimizer.
pub type ParamMap = BTreeMap<String, Tensor>;

/// Pre-activations closer than this to a ReLU kink disqualify a coordinate.
pub const KINK_EPS: f64 = 1e-6;

/// Outcome of a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped for sitting next to a kink.
    pub skipped: usize,
    /// `(param, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn loss_value<F>(build: &F, params: &ParamMap) -> Result<(f64, f64, u64)>
where
    F: Fn(&ParamMap) -> Result<(Graph, NodeId)>,
{
    let (graph, loss) = build(params)?;
    Ok((
        graph.value(loss).item()?,
        graph.min_kink_gap(),
        graph.kink_signature(),
    ))
}

/// Compare analytic gradients of a scalar loss against central differences
/// `(f(p + h) - f(p - h)) / 2h`, coordinate by coordinate. The relative
/// error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradcheck<F>(params: &ParamMap, h: f64, build: F) -> Result<GradcheckReport>
where
    F: Fn(&ParamMap) -> Result<(Graph, NodeId)>,
{
    if h <= 0.0 {
        return Err(Error::DimMismatch("gradcheck step must be positive".into()));
    }
    let (graph, loss) = build(params)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::NonScalarLoss);
    }
    let analytic = graph.backward(loss)?;

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };

    for (name, tensor) in params.iter() {
        let a_grad = analytic
            .get(name)
            .ok_or_else(|| Error::DimMismatch(alloc::format!("no gradient for `{name}`")))?;
        for i in 0..tensor.len() {
            let mut perturbed = params.clone();
            let base = tensor.data()[i];

            perturbed.get_mut(name).unwrap().data_mut()[i] = base + h;
            let (plus, gap_plus, sig_plus) = loss_value(&build, &perturbed)?;
            perturbed.get_mut(name).unwrap().data_mut()[i] = base - h;
            let (minus, gap_minus, sig_minus) = loss_value(&build, &perturbed)?;

            let _ = (gap_plus, gap_minus);
            if sig_plus != sig_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = a_grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    #[test]
    fn quadratic_loss_is_exact_to_rounding() {
        // loss = sum(x^2): analytic and central differences agree to ~1e-9.
        let mut params = ParamMap::new();
        params.insert(
            "x".into(),
            Tensor::from_vec(vec![0.7, -1.3, 2.1]).unwrap(),
        );
        let report = gradcheck(&params, 1e-5, |p| {
            let mut g = Graph::new();
            let x = g.param("x", &p["x"])?;
            let sq = g.mul(x, x)?;
            let loss = g.sum(sq);
            Ok((g, loss))
        })
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_err < 1e-9, "err {}", report.max_rel_err);
    }

    #[test]
    fn relu_network_matches_finite_differences() {
        // loss = sum(relu(Wx)) away from kinks.
        let mut rng = Pcg32::new(31, 2);
        let mut params = ParamMap::new();
        params.insert("w".into(), rng.normal_tensor(&[4, 3], 1.0));
        params.insert("x".into(), rng.normal_tensor(&[3], 1.0));
        let report = gradcheck(&params, 1e-5, |p| {
            let mut g = Graph::new();
            let w = g.param("w", &p["w"])?;
            let x = g.param("x", &p["x"])?;
            let wx = g.matvec(w, x)?;
            let r = g.relu(wx);
            let loss = g.sum(r);
            Ok((g, loss))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "err {}", report.max_rel_err);
    }

    #[test]
    fn off_path_parameter_checks_out_at_zero() {
        let mut params = ParamMap::new();
        params.insert("x".into(), Tensor::scalar(1.5));
        params.insert("unused".into(), Tensor::scalar(9.0));
        let report = gradcheck(&params, 1e-5, |p| {
            let mut g = Graph::new();
            let x = g.param("x", &p["x"])?;
            let _ = g.param("unused", &p["unused"])?;
            let loss = g.mul(x, x)?;
            Ok((g, loss))
        })
        .unwrap();
        // Numeric derivative of the unused coordinate is identically zero.
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn kink_adjacent_coordinates_are_skipped() {
        let mut params = ParamMap::new();
        params.insert("x".into(), Tensor::scalar(1e-5));
        let report = gradcheck(&params, 1e-5, |p| {
            let mut g = Graph::new();
            let x = g.param("x", &p["x"])?;
            let r = g.relu(x);
            let loss = g.sum(r);
            Ok((g, loss))
        })
        .unwrap();
        // x - h lands exactly on the ReLU kink.
        assert_eq!(report.checked, 0);
        assert_eq!(report.skipped, 1);
    }
}
