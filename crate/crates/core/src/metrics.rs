//! Evaluation metrics: PSNR, latent-dimension Pearson correlation, and the
//! DCI disentanglement/completeness/informativeness scores.
//!
//! DCI fits one L1-regularized linear regressor per attribute (cyclic
//! coordinate descent, deterministic), with the penalty chosen from a small
//! fixed grid on a held-out third of the samples. Latent dimensions are
//! standardized on the training split, which makes the scores invariant
//! under positive per-dimension rescaling of the latents. The absolute
//! regression coefficients form the importance matrix; disentanglement and
//! completeness are one minus the normalized entropies of its rows and
//! columns, informativeness is `max(0, 1 - RMSE/std)` on the held-out split.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance below which a dimension or attribute counts as constant.
pub const VAR_EPS: f64 = 1e-12;

/// Penalty grid for the DCI regressors; zero is included so exactly
/// realizable attributes regress exactly.
pub const LASSO_GRID: [f64; 5] = [0.0, 1e-3, 1e-2, 5e-2, 1e-1];

/// `10 log10(peak^2 / mse)` in decibels; identical images give `+inf`.
pub fn psnr(yhat: &Tensor, y: &Tensor, peak: f64) -> Result<f64> {
    if yhat.dims() != y.dims() {
        return Err(Error::DimMismatch(format!(
            "psnr over {:?} vs {:?}",
            yhat.dims(),
            y.dims()
        )));
    }
    if peak <= 0.0 {
        return Err(Error::DimMismatch("psnr peak must be positive".into()));
    }
    let mse = yhat
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / yhat.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(peak * peak / mse)
    }
}

/// Pearson correlations between latent dimensions over `latents[S x P]`.
/// Constant dimensions correlate zero with everything but keep a unit
/// diagonal.
pub fn correlation_matrix(latents: &Tensor) -> Result<Tensor> {
    if latents.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "correlation_matrix wants [samples x dims], got {:?}",
            latents.dims()
        )));
    }
    let (s, p) = (latents.dims()[0], latents.dims()[1]);
    if s < 2 {
        return Err(Error::TooFewSamples { got: s, need: 2 });
    }
    let sn = s as f64;
    let mut mean = vec![0.0; p];
    for i in 0..s {
        for (m, &v) in mean.iter_mut().zip(latents.row(i).iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= sn;
    }
    // Covariance accumulation, then normalize.
    let mut cov = vec![0.0; p * p];
    for i in 0..s {
        let row = latents.row(i);
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in a..p {
                cov[a * p + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let mut out = vec![0.0; p * p];
    for a in 0..p {
        let var_a = cov[a * p + a] / sn;
        out[a * p + a] = 1.0;
        for b in (a + 1)..p {
            let var_b = cov[b * p + b] / sn;
            let val = if var_a <= VAR_EPS || var_b <= VAR_EPS {
                0.0
            } else {
                (cov[a * p + b] / sn / libm::sqrt(var_a * var_b)).clamp(-1.0, 1.0)
            };
            out[a * p + b] = val;
            out[b * p + a] = val;
        }
    }
    Ok(Tensor::from_raw(vec![p, p], out))
}

/// Rectangular slice of a correlation matrix as a CSV block. Ranges are
/// 1-based inclusive, matching how dimension blocks are reported.
/// Header row is `dim,d<c0>,...`; each data row starts with its `d<i>` label.
pub fn dim_subset_report(
    corr: &Tensor,
    rows: (usize, usize),
    cols: (usize, usize),
) -> Result<String> {
    if corr.rank() != 2 || corr.dims()[0] != corr.dims()[1] {
        return Err(Error::DimMismatch(format!(
            "correlation matrix must be square, got {:?}",
            corr.dims()
        )));
    }
    let p = corr.dims()[0];
    for (lo, hi) in [rows, cols] {
        if lo == 0 || hi < lo || hi > p {
            return Err(Error::IndexOutOfRange(format!(
                "range {lo}:{hi} over {p} dimensions"
            )));
        }
    }
    let mut out = String::from("dim");
    for c in cols.0..=cols.1 {
        out.push_str(&format!(",d{c}"));
    }
    out.push('\n');
    for r in rows.0..=rows.1 {
        out.push_str(&format!("d{r}"));
        for c in cols.0..=cols.1 {
            out.push_str(&format!(",{:.6}", corr.data()[(r - 1) * p + (c - 1)]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Mean absolute value over a 1-based inclusive block of a matrix, skipping
/// diagonal entries.
pub fn mean_abs_offdiag_block(
    corr: &Tensor,
    rows: (usize, usize),
    cols: (usize, usize),
) -> Result<f64> {
    let p = corr.dims()[0];
    for (lo, hi) in [rows, cols] {
        if lo == 0 || hi < lo || hi > p {
            return Err(Error::IndexOutOfRange(format!(
                "range {lo}:{hi} over {p} dimensions"
            )));
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rows.0..=rows.1 {
        for c in cols.0..=cols.1 {
            if r == c {
                continue;
            }
            total += corr.data()[(r - 1) * p + (c - 1)].abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::IndexOutOfRange("block holds only diagonal entries".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
}

/// Entropy-based disentanglement and completeness of a nonnegative
/// importance matrix `R[P x Q]`. Zero rows carry zero weight; zero columns
/// contribute zero completeness.
pub fn dci_scores_from_importance(r: &Tensor) -> Result<(f64, f64)> {
    if r.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "importance matrix must be [dims x attrs], got {:?}",
            r.dims()
        )));
    }
    if r.data().iter().any(|&v| v < 0.0) {
        return Err(Error::DimMismatch("importances must be nonnegative".into()));
    }
    let (p, q) = (r.dims()[0], r.dims()[1]);
    let total: f64 = r.data().iter().sum();

    let entropy = |vals: &mut dyn Iterator<Item = f64>, base: usize| -> f64 {
        if base <= 1 {
            return 0.0;
        }
        let mut h = 0.0;
        for v in vals {
            if v > 0.0 {
                h -= v * libm::log(v);
            }
        }
        h / libm::log(base as f64)
    };

    let mut disent = 0.0;
    if total > 0.0 {
        for pi in 0..p {
            let row = r.row(pi);
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                continue; // weight zero
            }
            let h = entropy(&mut row.iter().map(|v| v / s), q);
            disent += (s / total) * (1.0 - h);
        }
    }

    let mut complete = 0.0;
    for qi in 0..q {
        let s: f64 = (0..p).map(|pi| r.data()[pi * q + qi]).sum();
        if s <= 0.0 {
            continue; // contributes zero
        }
        let h = entropy(&mut (0..p).map(|pi| r.data()[pi * q + qi] / s), p);
        complete += 1.0 - h;
    }
    complete /= q as f64;

    Ok((disent, complete))
}

/// Full DCI protocol over `latents[S x P]` and `attributes[S x Q]`.
/// Returns the three scores and the fitted importance matrix.
pub fn dci(latents: &Tensor, attributes: &Tensor) -> Result<(DciScores, Tensor)> {
    if latents.rank() != 2 || attributes.rank() != 2 {
        return Err(Error::DimMismatch(format!(
            "dci wants [S x P] and [S x Q], got {:?} and {:?}",
            latents.dims(),
            attributes.dims()
        )));
    }
    let (s, p) = (latents.dims()[0], latents.dims()[1]);
    let q = attributes.dims()[1];
    if attributes.dims()[0] != s {
        return Err(Error::DimMismatch(format!(
            "{} latent rows vs {} attribute rows",
            s,
            attributes.dims()[0]
        )));
    }
    if s < q + 2 {
        return Err(Error::TooFewSamples { got: s, need: q + 2 });
    }

    // Deterministic split: every third sample is held out.
    let train_idx: Vec<usize> = (0..s).filter(|i| i % 3 != 2).collect();
    let held_idx: Vec<usize> = (0..s).filter(|i| i % 3 == 2).collect();
    let nt = train_idx.len() as f64;

    // Standardize latent dims on the training split.
    let mut mu = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for &i in &train_idx {
        for (m, &v) in mu.iter_mut().zip(latents.row(i).iter()) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= nt;
    }
    for &i in &train_idx {
        for (d, (&v, &m)) in sd.iter_mut().zip(latents.row(i).iter().zip(mu.iter())) {
            *d += (v - m) * (v - m);
        }
    }
    let live: Vec<bool> = sd.iter().map(|&v| v / nt > VAR_EPS).collect();
    for d in sd.iter_mut() {
        *d = libm::sqrt(*d / nt).max(libm::sqrt(VAR_EPS));
    }

    // Column-major standardized features for the two splits.
    let col = |idx: &[usize], pi: usize| -> Vec<f64> {
        idx.iter()
            .map(|&i| (latents.row(i)[pi] - mu[pi]) / sd[pi])
            .collect()
    };
    let x_train: Vec<Vec<f64>> = (0..p).map(|pi| col(&train_idx, pi)).collect();
    let x_held: Vec<Vec<f64>> = (0..p).map(|pi| col(&held_idx, pi)).collect();

    let mut importance = vec![0.0; p * q];
    let mut info_sum = 0.0;
    for qi in 0..q {
        let y_all: Vec<f64> = (0..s).map(|i| attributes.row(i)[qi]).collect();
        let y_mean_all = y_all.iter().sum::<f64>() / s as f64;
        let y_var_all = y_all.iter().map(|v| (v - y_mean_all) * (v - y_mean_all)).sum::<f64>()
            / s as f64;
        if y_var_all <= VAR_EPS {
            return Err(Error::DegenerateAttributes(format!(
                "attribute column {qi} is constant"
            )));
        }
        let y_train: Vec<f64> = train_idx.iter().map(|&i| y_all[i]).collect();
        let y_held: Vec<f64> = held_idx.iter().map(|&i| y_all[i]).collect();
        let y_bar = y_train.iter().sum::<f64>() / nt;
        let y_centered: Vec<f64> = y_train.iter().map(|v| v - y_bar).collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        for &lambda in LASSO_GRID.iter() {
            let beta = lasso_cd(&x_train, &y_centered, lambda, &live);
            let mut se = 0.0;
            for (hi, yh) in y_held.iter().enumerate() {
                let mut pred = y_bar;
                for (pi, b) in beta.iter().enumerate() {
                    if *b != 0.0 {
                        pred += b * x_held[pi][hi];
                    }
                }
                se += (pred - yh) * (pred - yh);
            }
            let rmse = libm::sqrt(se / y_held.len() as f64);
            if best.as_ref().map_or(true, |(r, _)| rmse < *r) {
                best = Some((rmse, beta));
            }
        }
        let (rmse, beta) = best.expect("non-empty grid");
        for (pi, b) in beta.iter().enumerate() {
            importance[pi * q + qi] = b.abs();
        }
        let held_mean = y_held.iter().sum::<f64>() / y_held.len() as f64;
        let held_sd = libm::sqrt(
            y_held.iter().map(|v| (v - held_mean) * (v - held_mean)).sum::<f64>()
                / y_held.len() as f64,
        )
        .max(libm::sqrt(VAR_EPS));
        info_sum += (1.0 - rmse / held_sd).max(0.0);
    }

    let r = Tensor::from_raw(vec![p, q], importance);
    let (disentanglement, completeness) = dci_scores_from_importance(&r)?;
    Ok((
        DciScores {
            disentanglement,
            completeness,
            informativeness: info_sum / q as f64,
        },
        r,
    ))
}

/// Cyclic coordinate-descent lasso on standardized columns:
/// minimizes `1/(2n) ||y - X b||^2 + lambda ||b||_1`.
fn lasso_cd(x_cols: &[Vec<f64>], y: &[f64], lambda: f64, live: &[bool]) -> Vec<f64> {
    let p = x_cols.len();
    let n = y.len();
    let nf = n as f64;
    let denom: Vec<f64> = x_cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();
    let mut beta = vec![0.0; p];
    let mut residual = y.to_vec();
    for _sweep in 0..1000 {
        let mut max_delta = 0.0f64;
        for pi in 0..p {
            if !live[pi] || denom[pi] <= 0.0 {
                continue;
            }
            let col = &x_cols[pi];
            let mut rho = 0.0;
            for (r, &xv) in residual.iter().zip(col.iter()) {
                rho += r * xv;
            }
            rho = rho / nf + denom[pi] * beta[pi];
            let new = soft_threshold(rho, lambda) / denom[pi];
            let delta = new - beta[pi];
            if delta != 0.0 {
                for (r, &xv) in residual.iter_mut().zip(col.iter()) {
                    *r -= delta * xv;
                }
                beta[pi] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-11 {
            break;
        }
    }
    beta
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    #[test]
    fn psnr_anchors() {
        let a = Tensor::from_vec(vec![0.5, -0.5]).unwrap();
        assert!(psnr(&a, &a, 2.0).unwrap().is_infinite());

        // MSE = peak^2 -> 0 dB.
        let y = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let yh = Tensor::from_vec(vec![255.0, -255.0]).unwrap();
        assert!((psnr(&yh, &y, 255.0).unwrap()).abs() < 1e-12);

        // MSE = 1 at peak 255 -> 48.1308 dB.
        let db = psnr_from_mse(1.0, 255.0);
        assert!((db - 48.1308).abs() < 1e-3, "{db}");
    }

    #[test]
    fn correlation_duplicated_and_constant_dims() {
        // dims: x, x (duplicate), constant.
        let mut rng = Pcg32::new(5, 0);
        let s = 64;
        let mut data = Vec::with_capacity(s * 3);
        for _ in 0..s {
            let v = rng.normal();
            data.extend([v, v, 3.0]);
        }
        let latents = Tensor::new(&[s, 3], data).unwrap();
        let corr = correlation_matrix(&latents).unwrap();
        assert!((corr.data()[1] - 1.0).abs() < 1e-12); // corr(x, x) = 1
        assert_eq!(corr.data()[2], 0.0); // corr(x, const) = 0
        assert_eq!(corr.data()[8], 1.0); // unit diagonal everywhere
        assert_eq!(corr.data()[1], corr.data()[3]); // symmetry
    }

    #[test]
    fn correlation_of_independent_flips_is_small() {
        let mut rng = Pcg32::new(9, 1);
        let s = 10_000;
        let mut data = Vec::with_capacity(s * 2);
        for _ in 0..s {
            data.push(if rng.uniform() < 0.5 { -1.0 } else { 1.0 });
            data.push(if rng.uniform() < 0.5 { -1.0 } else { 1.0 });
        }
        let latents = Tensor::new(&[s, 2], data).unwrap();
        let corr = correlation_matrix(&latents).unwrap();
        assert!(corr.data()[1].abs() < 0.05, "{}", corr.data()[1]);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let one = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            correlation_matrix(&one),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn importance_anchors() {
        let id = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let (d, c) = dci_scores_from_importance(&id).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);

        let uniform = Tensor::new(&[3, 3], vec![0.5; 9]).unwrap();
        let (d, c) = dci_scores_from_importance(&uniform).unwrap();
        assert!(d.abs() < 1e-12);
        assert!(c.abs() < 1e-12);

        // Zero rows/columns must not poison the scores.
        let partial = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (d, c) = dci_scores_from_importance(&partial).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dci_on_identity_latents_is_perfect() {
        let mut rng = Pcg32::new(17, 2);
        let (s, q) = (90, 4);
        let mut data = Vec::with_capacity(s * q);
        for _ in 0..s * q {
            data.push(rng.uniform());
        }
        let attrs = Tensor::new(&[s, q], data).unwrap();
        let latents = attrs.clone();
        let (scores, r) = dci(&latents, &attrs).unwrap();
        assert!((scores.informativeness - 1.0).abs() < 1e-6, "{scores:?}");
        assert!(scores.disentanglement > 0.999, "{scores:?}");
        assert!(scores.completeness > 0.999, "{scores:?}");
        assert_eq!(r.dims(), &[q, q]);
    }

    #[test]
    fn dci_rejects_constant_attribute() {
        let mut rng = Pcg32::new(18, 2);
        let s = 30;
        let latents = rng.normal_tensor(&[s, 3], 1.0);
        let mut attr_data = Vec::with_capacity(s * 2);
        for i in 0..s {
            attr_data.push(latents.row(i)[0]);
            attr_data.push(7.5);
        }
        let attrs = Tensor::new(&[s, 2], attr_data).unwrap();
        assert!(matches!(
            dci(&latents, &attrs),
            Err(Error::DegenerateAttributes(_))
        ));
    }

    #[test]
    fn dci_needs_enough_samples() {
        let latents = Tensor::zeros(&[4, 2]).unwrap();
        let attrs = Tensor::zeros(&[4, 3]).unwrap();
        assert!(matches!(dci(&latents, &attrs), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn dci_scores_stay_in_unit_interval_and_permute() {
        let mut rng = Pcg32::new(19, 3);
        let (s, p, q) = (120, 6, 4);
        let latents = rng.normal_tensor(&[s, p], 1.0);
        // Attributes are sparse linear mixes of latents plus noise.
        let mut attr_data = vec![0.0; s * q];
        for i in 0..s {
            let row = latents.row(i);
            for (qi, a) in attr_data[i * q..(i + 1) * q].iter_mut().enumerate() {
                *a = row[qi] + 0.3 * row[(qi + 2) % p] + 0.05 * rng.normal();
            }
        }
        let attrs = Tensor::new(&[s, q], attr_data).unwrap();
        let (scores, _) = dci(&latents, &attrs).unwrap();
        for v in [scores.disentanglement, scores.completeness, scores.informativeness] {
            assert!((0.0..=1.0).contains(&v), "{scores:?}");
        }

        // Permuting latent dimensions leaves disentanglement unchanged.
        let mut permuted = vec![0.0; s * p];
        for i in 0..s {
            for pi in 0..p {
                permuted[i * p + pi] = latents.row(i)[(pi + 1) % p];
            }
        }
        let (scores_p, _) = dci(&Tensor::new(&[s, p], permuted).unwrap(), &attrs).unwrap();
        assert!((scores.disentanglement - scores_p.disentanglement).abs() < 1e-9);
    }

    #[test]
    fn dci_is_invariant_to_positive_rescaling() {
        let mut rng = Pcg32::new(20, 3);
        let (s, p, q) = (90, 4, 3);
        let latents = rng.normal_tensor(&[s, p], 1.0);
        let mut attr_data = vec![0.0; s * q];
        for i in 0..s {
            let row = latents.row(i);
            for (qi, a) in attr_data[i * q..(i + 1) * q].iter_mut().enumerate() {
                *a = 0.8 * row[qi] + 0.1 * row[(qi + 1) % p];
            }
        }
        let attrs = Tensor::new(&[s, q], attr_data).unwrap();
        let (base, _) = dci(&latents, &attrs).unwrap();

        let scales = [3.0, 0.2, 11.0, 0.7];
        let mut scaled = vec![0.0; s * p];
        for i in 0..s {
            for pi in 0..p {
                scaled[i * p + pi] = latents.row(i)[pi] * scales[pi];
            }
        }
        let (after, _) = dci(&Tensor::new(&[s, p], scaled).unwrap(), &attrs).unwrap();
        assert!((base.disentanglement - after.disentanglement).abs() < 1e-9);
        assert!((base.completeness - after.completeness).abs() < 1e-9);
    }

    #[test]
    fn subset_report_full_range_is_whole_matrix() {
        let corr = Tensor::new(&[2, 2], vec![1.0, 0.25, 0.25, 1.0]).unwrap();
        let csv = dim_subset_report(&corr, (1, 2), (1, 2)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "dim,d1,d2");
        assert!(lines[1].starts_with("d1,1.000000,0.250000"));

        assert!(matches!(
            dim_subset_report(&corr, (1, 3), (1, 2)),
            Err(Error::IndexOutOfRange(_))
        ));
        let block = dim_subset_report(&corr, (2, 2), (1, 1)).unwrap();
        assert_eq!(block.lines().count(), 2);
    }
}
