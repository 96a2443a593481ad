//! Training driver: deterministic batch sampling, periodic checkpoints,
//! metrics CSV, and resumption from the newest checkpoint in the output
//! directory (step numbering continues; optimizer moments restart).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use relsr_core::model::{CodeMode, Model};
use relsr_core::objective::{self, AdamState, LossWeights, TrainOptions, TrainSample};
use relsr_core::rng::{streams, Pcg32};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, StoredSample};
use crate::error::{CliError, Result};

fn ckpt_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("ckpt_{step:07}.lckp"))
}

/// Newest checkpoint in a directory, by step number in the file name.
pub fn find_latest_checkpoint(out: &Path) -> Result<Option<(PathBuf, u64)>> {
    if !out.exists() {
        return Ok(None);
    }
    let mut best: Option<(PathBuf, u64)> = None;
    for entry in fs::read_dir(out)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".lckp")) {
            if let Ok(step) = stem.parse::<u64>() {
                if best.as_ref().map_or(true, |(_, s)| step > *s) {
                    best = Some((entry.path(), step));
                }
            }
        }
    }
    Ok(best)
}

/// Deterministic batch of train-split indices for a step.
pub fn batch_indices(seed: u64, step: u64, batch: usize, pool: usize) -> Vec<usize> {
    let mut rng = Pcg32::new(seed ^ step.wrapping_mul(0x9e3779b97f4a7c15), streams::BATCH);
    (0..batch).map(|_| rng.next_u32() as usize % pool).collect()
}

fn configs_compatible(a: &RunConfig, b: &RunConfig) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    // Extending a run only changes the step budget.
    a.iters = 0;
    b.iters = 0;
    a == b
}

pub fn train(config_path: &Path, data_dir: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let data = dataset::read_dataset(data_dir)?;
    for s in &data {
        if s.hr.dims() != [3, cfg.hr_size, cfg.hr_size] {
            return Err(CliError::bad_config(format!(
                "dataset sample {} is {:?}, config wants [3, {}, {}]",
                s.id,
                s.hr.dims(),
                cfg.hr_size,
                cfg.hr_size
            )));
        }
    }
    let train_split: Vec<&StoredSample> = data.iter().filter(|s| !s.is_test()).collect();
    if train_split.is_empty() {
        return Err(CliError::bad_config("train split is empty"));
    }
    fs::create_dir_all(out_dir)?;

    let (mut model, start_step) = match find_latest_checkpoint(out_dir)? {
        Some((path, _)) => {
            let ckpt = Checkpoint::load(&path)?;
            if !configs_compatible(&ckpt.config, &cfg) {
                return Err(CliError::bad_config(format!(
                    "checkpoint {} was trained under a different config",
                    path.display()
                )));
            }
            let model = ckpt.restore_model()?;
            println!("resuming from {} at step {}", path.display(), ckpt.step);
            (model, ckpt.step)
        }
        None => (
            Model::init(&cfg.model_config()).map_err(|e| CliError::bad_config(e.to_string()))?,
            0,
        ),
    };

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics_file = if start_step > 0 && metrics_path.exists() {
        fs::OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = fs::File::create(&metrics_path)?;
        writeln!(f, "step,l_mse,l_per,l_adv,total,psnr")?;
        f
    };

    let mut gen_opt = AdamState::new(cfg.lr);
    let mut disc_opt = AdamState::new(cfg.lr);
    let opts = TrainOptions {
        weights: LossWeights { alpha: cfg.alpha, beta: cfg.beta },
        peak: 2.0,
    };

    if start_step >= cfg.iters {
        println!("nothing to do: checkpoint is at step {start_step}, iters = {}", cfg.iters);
        if start_step == 0 {
            // A zero-iteration run still materializes the initial state.
            Checkpoint::from_model(&cfg, &model, 0).save(&ckpt_path(out_dir, 0))?;
        }
        return Ok(());
    }

    for step in (start_step + 1)..=cfg.iters {
        let indices = batch_indices(cfg.seed, step, cfg.batch, train_split.len());
        let batch: Vec<TrainSample> = indices
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                let s = train_split[i];
                let noise = match cfg.cgm_mode {
                    CodeMode::Noise => Some(objective::noise_codes(
                        cfg.seed,
                        step,
                        slot as u64,
                        cfg.n,
                        cfg.f,
                    )),
                    _ => None,
                };
                TrainSample { lr: s.lr.clone(), hr: s.hr.clone(), noise }
            })
            .collect();

        let metrics = objective::train_step(&mut model, &batch, &mut gen_opt, &mut disc_opt, &opts)
            .map_err(|e| CliError::numerical(e.to_string()))?;
        if !metrics.total.is_finite() {
            return Err(CliError::numerical(format!(
                "non-finite loss at step {step}: {}",
                metrics.total
            )));
        }
        writeln!(
            metrics_file,
            "{step},{},{},{},{},{}",
            metrics.l_mse, metrics.l_per, metrics.l_adv, metrics.total, metrics.psnr
        )?;

        if step % cfg.ckpt_every == 0 || step == cfg.iters {
            Checkpoint::from_model(&cfg, &model, step).save(&ckpt_path(out_dir, step))?;
        }
    }
    metrics_file.flush()?;
    println!("trained to step {} ({} new steps)", cfg.iters, cfg.iters - start_step);
    Ok(())
}
