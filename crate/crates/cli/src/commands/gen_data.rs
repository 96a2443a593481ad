use std::path::Path;

use crate::config::RunConfig;
use crate::dataset;
use crate::error::Result;

pub fn gen_data(config_path: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let n = dataset::write_dataset(out_dir, cfg.samples, cfg.hr_size, cfg.scale, cfg.seed)?;
    println!("wrote {n} samples to {}", out_dir.display());
    Ok(())
}
