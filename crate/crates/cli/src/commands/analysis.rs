//! Evaluation commands: held-out PSNR, DCI over the disentangled latents,
//! and latent-correlation CSV blocks for both spaces.

use std::path::Path;

use relsr_core::metrics;
use relsr_core::model::{CodeMode, Model};
use relsr_core::objective;
use relsr_core::synthdata::{box_upsample, NUM_ATTRS};
use relsr_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::dataset::{self, StoredSample};
use crate::error::{CliError, Result};

fn load_model(ckpt_path: &Path) -> Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = ckpt.restore_model()?;
    Ok((ckpt, model))
}

fn check_shapes(model: &Model, data: &[StoredSample]) -> Result<()> {
    let hr = model.cfg.hr_size;
    let lr = model.cfg.lr_size();
    for s in data {
        if s.hr.dims() != [3, hr, hr] || s.lr.dims() != [3, lr, lr] {
            return Err(CliError::bad_config(format!(
                "dataset sample {} ({:?}/{:?}) conflicts with checkpoint config ({hr}/{lr})",
                s.id,
                s.hr.dims(),
                s.lr.dims()
            )));
        }
    }
    Ok(())
}

fn reconstruct(model: &Model, sample: &StoredSample) -> Result<Tensor> {
    let noise = match model.cfg.code_mode {
        CodeMode::Noise => Some(objective::noise_codes(
            model.cfg.seed,
            0,
            sample.id,
            model.cfg.gdm.n,
            model.cfg.f,
        )),
        _ => None,
    };
    model
        .reconstruct(&sample.lr, noise.as_deref())
        .map_err(|e| CliError::bad_config(e.to_string()))
}

/// Mean held-out PSNR of the model and of the box-upsample baseline.
pub fn eval_psnr(model: &Model, data: &[StoredSample]) -> Result<(usize, f64, f64)> {
    let test: Vec<&StoredSample> = data.iter().filter(|s| s.is_test()).collect();
    if test.is_empty() {
        return Err(CliError::bad_config("test split is empty"));
    }
    let mut model_sum = 0.0;
    let mut base_sum = 0.0;
    for s in &test {
        let yhat = reconstruct(model, s)?;
        model_sum += metrics::psnr(&yhat, &s.hr, 2.0).map_err(|e| CliError::bad_config(e.to_string()))?;
        let up = box_upsample(&s.lr, model.cfg.scale).map_err(|e| CliError::bad_config(e.to_string()))?;
        base_sum += metrics::psnr(&up, &s.hr, 2.0).map_err(|e| CliError::bad_config(e.to_string()))?;
    }
    let n = test.len();
    Ok((n, model_sum / n as f64, base_sum / n as f64))
}

pub fn eval(ckpt_path: &Path, data_dir: &Path) -> Result<()> {
    let (_, model) = load_model(ckpt_path)?;
    let data = dataset::read_dataset(data_dir)?;
    check_shapes(&model, &data)?;
    let (n, psnr, baseline) = eval_psnr(&model, &data)?;
    println!("samples = {n}");
    println!("psnr = {psnr:.4}");
    println!("psnr_baseline = {baseline:.4}");
    Ok(())
}

/// Latent matrices over the whole dataset: `z` is `[samples x H]`, the
/// disentangled space is `[samples x D]`.
pub fn latent_matrices(model: &Model, data: &[StoredSample]) -> Result<(Tensor, Tensor)> {
    let (s, h, d) = (data.len(), model.cfg.gdm.h, model.cfg.gdm.d());
    let mut zs = Vec::with_capacity(s * h);
    let mut gs = Vec::with_capacity(s * d);
    for sample in data {
        let (z, flat) = model
            .latents(&sample.lr)
            .map_err(|e| CliError::bad_config(e.to_string()))?;
        zs.extend_from_slice(z.data());
        gs.extend_from_slice(flat.data());
    }
    Ok((
        Tensor::new(&[s, h], zs).map_err(|e| CliError::numerical(e.to_string()))?,
        Tensor::new(&[s, d], gs).map_err(|e| CliError::numerical(e.to_string()))?,
    ))
}

pub fn attribute_matrix(data: &[StoredSample]) -> Result<Tensor> {
    let mut a = Vec::with_capacity(data.len() * NUM_ATTRS);
    for s in data {
        a.extend_from_slice(&s.attrs);
    }
    Tensor::new(&[data.len(), NUM_ATTRS], a).map_err(|e| CliError::numerical(e.to_string()))
}

pub fn dci(ckpt_path: &Path, data_dir: &Path) -> Result<()> {
    let (_, model) = load_model(ckpt_path)?;
    let data = dataset::read_dataset(data_dir)?;
    check_shapes(&model, &data)?;
    let (_, latents) = latent_matrices(&model, &data)?;
    let attrs = attribute_matrix(&data)?;
    let (scores, _) = metrics::dci(&latents, &attrs).map_err(CliError::from)?;
    println!("disentanglement = {:.6}", scores.disentanglement);
    println!("completeness = {:.6}", scores.completeness);
    println!("informativeness = {:.6}", scores.informativeness);
    Ok(())
}

/// Parse a 1-based inclusive `a:b` range.
pub fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::bad_config(format!("range `{s}` must look like a:b")))?;
    let lo: usize = a
        .trim()
        .parse()
        .map_err(|_| CliError::bad_config(format!("range `{s}`: bad lower bound")))?;
    let hi: usize = b
        .trim()
        .parse()
        .map_err(|_| CliError::bad_config(format!("range `{s}`: bad upper bound")))?;
    Ok((lo, hi))
}

pub fn corr(ckpt_path: &Path, data_dir: &Path, rows: &str, cols: &str) -> Result<()> {
    let rows = parse_range(rows)?;
    let cols = parse_range(cols)?;
    let (_, model) = load_model(ckpt_path)?;
    let data = dataset::read_dataset(data_dir)?;
    check_shapes(&model, &data)?;
    let (z, g) = latent_matrices(&model, &data)?;
    for (name, latents) in [("z", &z), ("g", &g)] {
        let corr = metrics::correlation_matrix(latents).map_err(CliError::from)?;
        let block = metrics::dim_subset_report(&corr, rows, cols).map_err(CliError::from)?;
        println!("space={name}");
        print!("{block}");
    }
    Ok(())
}
