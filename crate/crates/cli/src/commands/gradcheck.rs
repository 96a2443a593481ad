//! Finite-difference verification of the full toy loss, module by module:
//! encoder/GDM/CGM against the objective with the adversarial weight set to
//! zero, and the discriminator against its own split. Exits nonzero if any
//! module exceeds the 1e-4 tolerance.

use std::path::Path;

use relsr_core::gradcheck::{gradcheck, GradcheckReport, ParamMap};
use relsr_core::graph::Graph;
use relsr_core::model::{build_sr, CodeMode, Model};
use relsr_core::objective::{self, LossWeights};
use relsr_core::prior;
use relsr_core::synthdata;
use relsr_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn subset(model: &Model, prefix: &str) -> ParamMap {
    model
        .generator_side_param_map()
        .into_iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .collect()
}

/// Sweep one generator-side module against the beta = 0 objective.
pub fn check_module(
    model: &Model,
    lr: &Tensor,
    hr: &Tensor,
    params: ParamMap,
    alpha: f64,
) -> Result<GradcheckReport> {
    let weights = LossWeights { alpha, beta: 0.0 };
    let model0 = model.clone();
    let lr0 = lr.clone();
    let hr0 = hr.clone();
    gradcheck(&params, STEP, move |p| {
        let mut m = model0.clone();
        m.load_trainable(p)?;
        let mut g = Graph::new();
        let noise = match m.cfg.code_mode {
            CodeMode::Noise => Some(objective::noise_codes(m.cfg.seed, 0, 0, m.cfg.gdm.n, m.cfg.f)),
            _ => None,
        };
        let fwd = build_sr(&mut g, &m, &lr0, true, noise.as_deref())?;
        let y = g.input(hr0.clone());
        let loss = objective::total_loss(&mut g, fwd.yhat, y, &m.perceptual, &m.disc, &weights)?;
        Ok((g, loss.total))
    })
    .map_err(|e| CliError::numerical(e.to_string()))
}

/// Sweep the discriminator against its own loss on a fixed real/fake pair.
pub fn check_discriminator(model: &Model, real: &Tensor, fake: &Tensor) -> Result<GradcheckReport> {
    let mut params = ParamMap::new();
    for (name, t) in model.disc.named() {
        params.insert(name, t.clone());
    }
    let model0 = model.clone();
    let real0 = real.clone();
    let fake0 = fake.clone();
    gradcheck(&params, STEP, move |p| {
        let mut m = model0.clone();
        m.load_trainable(p)?;
        let mut g = Graph::new();
        let (convs, lw, lb) = prior::register_disc(&mut g, &m.disc, true)?;
        let r = g.input(real0.clone());
        let f = g.input(fake0.clone());
        let d_real = prior::discriminate_with(&mut g, r, &convs, lw, lb)?;
        let d_fake = prior::discriminate_with(&mut g, f, &convs, lw, lb)?;
        let one = g.input(Tensor::scalar(1.0));
        let ln_r = g.ln_clamped(d_real);
        let omf = g.sub(one, d_fake)?;
        let ln_f = g.ln_clamped(omf);
        let sum = g.add(ln_r, ln_f)?;
        let loss = g.scale(sum, -1.0);
        Ok((g, loss))
    })
    .map_err(|e| CliError::numerical(e.to_string()))
}

pub fn gradcheck_cmd(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let model = Model::init(&cfg.model_config()).map_err(|e| CliError::bad_config(e.to_string()))?;
    let sample = synthdata::make_sample(cfg.seed, 0, cfg.hr_size, cfg.scale)
        .map_err(|e| CliError::bad_config(e.to_string()))?;

    let mut failed = false;
    let mut run = |name: &str, report: GradcheckReport| {
        let ok = report.passes(TOLERANCE);
        println!(
            "module={name} max_rel_err={:.3e} checked={} skipped={} {}",
            report.max_rel_err,
            report.checked,
            report.skipped,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed = true;
        }
    };

    run("encoder", check_module(&model, &sample.lr, &sample.hr, subset(&model, "enc."), cfg.alpha)?);
    run("gdm", check_module(&model, &sample.lr, &sample.hr, subset(&model, "gdm."), cfg.alpha)?);
    if cfg.cgm_mode != CodeMode::Noise {
        run("cgm", check_module(&model, &sample.lr, &sample.hr, subset(&model, "cgm."), cfg.alpha)?);
    }
    let fake = model
        .reconstruct(&sample.lr, match cfg.cgm_mode {
            CodeMode::Noise => Some(objective::noise_codes(cfg.seed, 0, 0, cfg.n, cfg.f)),
            _ => None,
        }.as_deref())
        .map_err(|e| CliError::bad_config(e.to_string()))?;
    run("discriminator", check_discriminator(&model, &sample.hr, &fake)?);

    if failed {
        return Err(CliError::numerical(format!(
            "gradient check exceeded {TOLERANCE:e}"
        )));
    }
    println!("overall=pass");
    Ok(())
}
