use std::path::Path;

use relsr_core::model::CodeMode;
use relsr_core::objective;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use crate::ppm;

pub fn synth(ckpt_path: &Path, lr_path: &Path, out_path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = ckpt.restore_model()?;
    let lr = ppm::load(lr_path)?;
    let want = model.cfg.lr_size();
    if lr.dims() != [3, want, want] {
        return Err(CliError::bad_config(format!(
            "LR image is {:?}, checkpoint wants [3, {want}, {want}]",
            lr.dims()
        )));
    }
    let noise = match model.cfg.code_mode {
        CodeMode::Noise => Some(objective::noise_codes(
            model.cfg.seed,
            0,
            0,
            model.cfg.gdm.n,
            model.cfg.f,
        )),
        _ => None,
    };
    let img = model
        .reconstruct(&lr, noise.as_deref())
        .map_err(|e| CliError::bad_config(e.to_string()))?;
    ppm::save(out_path, &img)?;
    println!("wrote {}", out_path.display());
    Ok(())
}
