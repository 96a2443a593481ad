//! Training objective and optimizer.
//!
//! The scalar loss is `mean((yhat-y)^2) + alpha * mean((phi(yhat)-phi(y))^2)
//! + beta * ln(1 - D(yhat))`, with the feature extractor `phi` a frozen
//! seeded two-layer conv stack standing in for a pretrained perceptual
//! network. Mean reductions keep `alpha`/`beta` meaningful across image
//! sizes, and the log argument is floored at 1e-12 so a saturated
//! discriminator cannot produce `-inf`.
//!
//! The discriminator trains on a separate step with the conventional
//! `-ln D(y) - ln(1 - D(yhat))` split, on detached generator outputs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::metrics;
use crate::model::{build_sr, Model};
use crate::prior::{self, DiscParams};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

/// Loss term weights; defaults follow the training recipe.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.01, beta: 0.01 }
    }
}

/// Frozen random two-layer conv feature extractor.
#[derive(Clone, Debug)]
pub struct PerceptualParams {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
}

impl PerceptualParams {
    pub fn init(channels: usize, rng: &mut Pcg32) -> PerceptualParams {
        let g1 = libm::sqrt(2.0) / libm::sqrt(27.0);
        let g2 = libm::sqrt(2.0) / libm::sqrt((channels * 9) as f64);
        PerceptualParams {
            conv1_w: rng.normal_tensor(&[channels, 3, 3, 3], g1),
            conv1_b: Tensor::from_raw(alloc::vec![channels], alloc::vec![0.0; channels]),
            conv2_w: rng.normal_tensor(&[channels, channels, 3, 3], g2),
            conv2_b: Tensor::from_raw(alloc::vec![channels], alloc::vec![0.0; channels]),
        }
    }
}

/// Feature map of the frozen extractor (always non-trainable).
pub fn perceptual_features(g: &mut Graph, img: NodeId, p: &PerceptualParams) -> Result<NodeId> {
    let w1 = g.input(p.conv1_w.clone());
    let b1 = g.input(p.conv1_b.clone());
    let x = g.conv2d(img, w1, b1, 1, 1)?;
    let x = g.relu(x);
    let w2 = g.input(p.conv2_w.clone());
    let b2 = g.input(p.conv2_b.clone());
    g.conv2d(x, w2, b2, 1, 1)
}

/// Node handles of the loss and its reported components.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub mse: NodeId,
    pub perceptual: NodeId,
    pub adversarial: NodeId,
}

/// Assemble the full objective against a ground-truth image node. The
/// discriminator enters frozen; its own update happens elsewhere.
pub fn total_loss(
    g: &mut Graph,
    yhat: NodeId,
    y: NodeId,
    phi: &PerceptualParams,
    disc: &DiscParams,
    weights: &LossWeights,
) -> Result<LossNodes> {
    if g.value(yhat).dims() != g.value(y).dims() {
        return Err(Error::DimMismatch(format!(
            "loss over {:?} vs {:?}",
            g.value(yhat).dims(),
            g.value(y).dims()
        )));
    }
    let diff = g.sub(yhat, y)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq);

    let fy_hat = perceptual_features(g, yhat, phi)?;
    let fy = perceptual_features(g, y, phi)?;
    let fdiff = g.sub(fy_hat, fy)?;
    let fsq = g.mul(fdiff, fdiff)?;
    let perceptual = g.mean(fsq);

    let score = prior::discriminate(g, yhat, disc, false)?;
    let one = g.input(Tensor::from_raw(alloc::vec![1], alloc::vec![1.0]));
    let one_minus = g.sub(one, score)?;
    let adversarial = g.ln_clamped(one_minus);

    let weighted_per = g.scale(perceptual, weights.alpha);
    let weighted_adv = g.scale(adversarial, weights.beta);
    let partial = g.add(mse, weighted_per)?;
    let total = g.add(partial, weighted_adv)?;
    Ok(LossNodes { total, mse, perceptual, adversarial })
}

// ---- Adam ------------------------------------------------------------------

/// Bias-corrected Adam with per-parameter moment tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over the given parameters. Every parameter must have a
    /// same-shaped gradient entry; missing moments start at zero.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &Gradients,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (name, tensor) in params.iter_mut() {
            let grad = grads.get(name).ok_or_else(|| {
                Error::DimMismatch(format!("no gradient for parameter `{name}`"))
            })?;
            if grad.dims() != tensor.dims() {
                return Err(Error::DimMismatch(format!(
                    "gradient shape {:?} vs parameter `{name}` {:?}",
                    grad.dims(),
                    tensor.dims()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::from_raw(tensor.dims().to_vec(), alloc::vec![0.0; tensor.len()]));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::from_raw(tensor.dims().to_vec(), alloc::vec![0.0; tensor.len()]));
            for ((p, g), (mi, vi)) in tensor
                .data_mut()
                .iter_mut()
                .zip(grad.data().iter())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

// ---- train step ------------------------------------------------------------

/// One training sample: float images plus optional pre-drawn noise codes for
/// the stochastic-noise baseline.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub lr: Tensor,
    pub hr: Tensor,
    pub noise: Option<Vec<Tensor>>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub weights: LossWeights,
    /// Peak value for the PSNR report; images live in `[-1, 1]`.
    pub peak: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { weights: LossWeights::default(), peak: 2.0 }
    }
}

/// Loss components, gradient norms and batch PSNR of one step.
#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub l_mse: f64,
    pub l_per: f64,
    pub l_adv: f64,
    pub total: f64,
    pub psnr: f64,
    pub grad_norm_gen: f64,
    pub grad_norm_disc: f64,
}

/// One optimization step: update encoder/GDM/CGM on the full objective, then
/// the discriminator on its own split, both averaged over the batch. The
/// frozen generator is never part of either parameter set.
pub fn train_step(
    model: &mut Model,
    batch: &[TrainSample],
    gen_opt: &mut AdamState,
    disc_opt: &mut AdamState,
    opts: &TrainOptions,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut gen_grads = Gradients::default();
    let mut sums = [0.0f64; 4]; // mse, per, adv, total
    let mut yhats: Vec<Tensor> = Vec::with_capacity(batch.len());

    for sample in batch {
        let mut g = Graph::new();
        let fwd = build_sr(&mut g, model, &sample.lr, true, sample.noise.as_deref())?;
        let y = g.input(sample.hr.clone());
        let loss = total_loss(
            &mut g,
            fwd.yhat,
            y,
            &model.perceptual,
            &model.disc,
            &opts.weights,
        )?;
        let grads = g.backward(loss.total)?;
        gen_grads.accumulate_scaled(&grads, inv_b);
        sums[0] += g.value(loss.mse).item()? * inv_b;
        sums[1] += g.value(loss.perceptual).item()? * inv_b;
        sums[2] += g.value(loss.adversarial).item()? * inv_b;
        sums[3] += g.value(loss.total).item()? * inv_b;
        yhats.push(g.value(fwd.yhat).clone());
    }

    let grad_norm_gen = gen_grads.l2_norm();
    {
        let mut params = model.generator_side_params_mut();
        gen_opt.step(&mut params, &gen_grads)?;
    }

    // Discriminator split on the pre-update generator outputs, detached.
    let mut disc_grads = Gradients::default();
    for (sample, yhat) in batch.iter().zip(yhats.iter()) {
        let mut g = Graph::new();
        let (convs, lw, lb) = prior::register_disc(&mut g, &model.disc, true)?;
        let real = g.input(sample.hr.clone());
        let fake = g.input(yhat.clone());
        let d_real = prior::discriminate_with(&mut g, real, &convs, lw, lb)?;
        let d_fake = prior::discriminate_with(&mut g, fake, &convs, lw, lb)?;
        let one = g.input(Tensor::from_raw(alloc::vec![1], alloc::vec![1.0]));
        let ln_real = g.ln_clamped(d_real);
        let one_minus_fake = g.sub(one, d_fake)?;
        let ln_fake = g.ln_clamped(one_minus_fake);
        let sum = g.add(ln_real, ln_fake)?;
        let loss_d = g.scale(sum, -1.0);
        let grads = g.backward(loss_d)?;
        disc_grads.accumulate_scaled(&grads, inv_b);
    }
    let grad_norm_disc = disc_grads.l2_norm();
    {
        let mut params = model.disc.named_mut();
        disc_opt.step(&mut params, &disc_grads)?;
    }

    Ok(StepMetrics {
        l_mse: sums[0],
        l_per: sums[1],
        l_adv: sums[2],
        total: sums[3],
        psnr: metrics::psnr_from_mse(sums[0], opts.peak),
        grad_norm_gen,
        grad_norm_disc,
    })
}

/// Noise codes for the stochastic baseline, deterministic in
/// `(seed, step, sample slot)`.
pub fn noise_codes(seed: u64, step: u64, slot: u64, n_layers: usize, f: usize) -> Vec<Tensor> {
    let mut rng = Pcg32::new(
        seed ^ step.wrapping_mul(0x9e3779b97f4a7c15),
        crate::rng::streams::NOISE + slot,
    );
    (0..n_layers).map(|_| rng.normal_tensor(&[f], 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn identity_inputs_reduce_to_the_adversarial_term() {
        // yhat = y, D(yhat) = 0.5 -> loss = 0.01 * ln(0.5).
        let mut rng = Pcg32::new(1, 1);
        let phi = PerceptualParams::init(4, &mut rng);
        let mut disc = DiscParams::init(4, 4, &mut rng).unwrap();
        for (w, b) in disc.convs.iter_mut() {
            *w = Tensor::zeros(w.dims()).unwrap();
            *b = Tensor::zeros(b.dims()).unwrap();
        }
        disc.lin_w = Tensor::zeros(&[1, 4]).unwrap();
        disc.lin_b = Tensor::zeros(&[1]).unwrap();

        let img = rng.normal_tensor(&[3, 4, 4], 0.5);
        let mut g = Graph::new();
        let yhat = g.input(img.clone());
        let y = g.input(img);
        let loss = total_loss(&mut g, yhat, y, &phi, &disc, &LossWeights::default()).unwrap();
        let expect = 0.01 * (0.5f64).ln();
        assert!((g.value(loss.total).item().unwrap() - expect).abs() < 1e-9);
        assert_eq!(g.value(loss.mse).item().unwrap(), 0.0);
        assert_eq!(g.value(loss.perceptual).item().unwrap(), 0.0);

        // With beta = 0 the loss vanishes entirely.
        let mut g = Graph::new();
        let img = Pcg32::new(2, 2).normal_tensor(&[3, 4, 4], 0.5);
        let yhat = g.input(img.clone());
        let y = g.input(img);
        let w0 = LossWeights { alpha: 0.01, beta: 0.0 };
        let loss = total_loss(&mut g, yhat, y, &phi, &disc, &w0).unwrap();
        assert_eq!(g.value(loss.total).item().unwrap(), 0.0);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut state = AdamState::new(1e-3);
        let mut p = Tensor::from_vec(vec![1.0, -2.0]).unwrap();
        let mut g = Graph::new();
        let pn = g.param("p", &p).unwrap();
        let gvec = g.input(Tensor::from_vec(vec![0.3, -0.7]).unwrap());
        let prod = g.mul(pn, gvec).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();

        let before = p.data().to_vec();
        let mut params = alloc::vec![(String::from("p"), &mut p)];
        state.step(&mut params, &grads).unwrap();
        // First bias-corrected step is -lr * sign(g) up to eps.
        assert!((p.data()[0] - (before[0] - 1e-3)).abs() < 1e-9);
        assert!((p.data()[1] - (before[1] + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut state = AdamState::new(1e-3);
        let mut p = Tensor::from_vec(vec![0.5, 0.25]).unwrap();
        let mut g = Graph::new();
        let _pn = g.param("p", &p).unwrap();
        let c = g.constant_scalar(1.0);
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        let before = p.data().to_vec();
        let mut params = alloc::vec![(String::from("p"), &mut p)];
        state.step(&mut params, &grads).unwrap();
        assert_eq!(p.data(), &before[..]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_scale_covariance_of_first_step_direction() {
        let run = |k: f64| {
            let mut state = AdamState::new(1e-3);
            let mut p = Tensor::from_vec(vec![0.4, -0.9, 1.7]).unwrap();
            let mut g = Graph::new();
            let pn = g.param("p", &p).unwrap();
            let gv = g.input(Tensor::from_vec(vec![0.2 * k, -0.5 * k, 0.9 * k]).unwrap());
            let prod = g.mul(pn, gv).unwrap();
            let loss = g.sum(prod);
            let grads = g.backward(loss).unwrap();
            let before = p.data().to_vec();
            let mut params = alloc::vec![(String::from("p"), &mut p)];
            state.step(&mut params, &grads).unwrap();
            p.data()
                .iter()
                .zip(before.iter())
                .map(|(a, b)| (a - b).signum())
                .collect::<Vec<f64>>()
        };
        assert_eq!(run(1.0), run(2.0));
    }

    #[test]
    fn adam_three_step_trace_matches_scalar_oracle() {
        // Hand-rolled scalar Adam over three constant-gradient steps.
        let (lr, b1, b2, eps) = (1e-2, 0.9, 0.999, 1e-8);
        let grads_seq = [0.4, -0.2, 0.1];
        let mut theta_oracle = 0.7f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g0) in grads_seq.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g0;
            v = b2 * v + (1.0 - b2) * g0 * g0;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta_oracle -= lr * mh / (vh.sqrt() + eps);
        }

        let mut state = AdamState::new(lr);
        let mut p = Tensor::scalar(0.7);
        for g0 in grads_seq {
            let mut g = Graph::new();
            let pn = g.param("p", &p).unwrap();
            let c = g.constant_scalar(g0);
            let prod = g.mul(pn, c).unwrap();
            let loss = g.sum(prod);
            let grads = g.backward(loss).unwrap();
            let mut params = alloc::vec![(String::from("p"), &mut p)];
            state.step(&mut params, &grads).unwrap();
        }
        assert!((p.data()[0] - theta_oracle).abs() < 1e-12);
    }

    #[test]
    fn train_step_runs_and_freezes_the_prior() {
        let cfg = ModelConfig::tiny_for_tests();
        let mut model = Model::init(&cfg).unwrap();
        let frozen_before: Vec<Vec<u64>> = model
            .gen
            .all_tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();

        let mut rng = Pcg32::new(88, 0);
        let lr_size = cfg.hr_size / cfg.scale;
        let batch: Vec<TrainSample> = (0..2)
            .map(|_| TrainSample {
                lr: rng.normal_tensor(&[3, lr_size, lr_size], 0.3),
                hr: rng.normal_tensor(&[3, cfg.hr_size, cfg.hr_size], 0.3),
                noise: None,
            })
            .collect();
        let mut gen_opt = AdamState::new(1e-4);
        let mut disc_opt = AdamState::new(1e-4);
        let metrics = train_step(
            &mut model,
            &batch,
            &mut gen_opt,
            &mut disc_opt,
            &TrainOptions::default(),
        )
        .unwrap();
        assert!(metrics.total.is_finite());
        assert!(metrics.grad_norm_gen > 0.0);
        assert!(metrics.grad_norm_disc > 0.0);

        let frozen_after: Vec<Vec<u64>> = model
            .gen
            .all_tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(frozen_before, frozen_after);
    }

    #[test]
    fn train_step_is_deterministic() {
        let run = || {
            let cfg = ModelConfig::tiny_for_tests();
            let mut model = Model::init(&cfg).unwrap();
            let mut rng = Pcg32::new(77, 0);
            let lr_size = cfg.hr_size / cfg.scale;
            let batch: Vec<TrainSample> = (0..2)
                .map(|_| TrainSample {
                    lr: rng.normal_tensor(&[3, lr_size, lr_size], 0.3),
                    hr: rng.normal_tensor(&[3, cfg.hr_size, cfg.hr_size], 0.3),
                    noise: None,
                })
                .collect();
            let mut gen_opt = AdamState::new(1e-4);
            let mut disc_opt = AdamState::new(1e-4);
            let m1 = train_step(&mut model, &batch, &mut gen_opt, &mut disc_opt, &TrainOptions::default()).unwrap();
            let m2 = train_step(&mut model, &batch, &mut gen_opt, &mut disc_opt, &TrainOptions::default()).unwrap();
            (m1.total.to_bits(), m2.total.to_bits())
        };
        assert_eq!(run(), run());
    }
}
