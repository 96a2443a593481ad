//! On-disk dataset layout: `manifest.csv` plus, per sample, HR and LR
//! images as both PPM (for eyes) and LTSR (exact floats, used by training
//! and evaluation).
//!
//! Manifest header: `id,bg,x,y,size,hue,orient`. Sample `id % 5 == 4` is
//! the held-out test split; everything else trains.

use std::fs;
use std::path::{Path, PathBuf};

use relsr_core::synthdata::{self, NUM_ATTRS};
use relsr_core::Tensor;

use crate::error::{CliError, Result};
use crate::{ltsr, ppm};

pub const MANIFEST_HEADER: &str = "id,bg,x,y,size,hue,orient";

pub fn hr_ltsr_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("hr_{id:05}.ltsr"))
}

pub fn lr_ltsr_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("lr_{id:05}.ltsr"))
}

pub fn hr_ppm_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("hr_{id:05}.ppm"))
}

pub fn lr_ppm_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("lr_{id:05}.ppm"))
}

/// Generate and write the dataset; returns the number of samples written.
pub fn write_dataset(dir: &Path, n: usize, hr_size: usize, scale: usize, seed: u64) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let samples = synthdata::make_dataset(n, hr_size, scale, seed)
        .map_err(|e| CliError::bad_config(e.to_string()))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in &samples {
        ltsr::save(&hr_ltsr_path(dir, s.id), &s.hr)?;
        ltsr::save(&lr_ltsr_path(dir, s.id), &s.lr)?;
        ppm::save(&hr_ppm_path(dir, s.id), &s.hr)?;
        ppm::save(&lr_ppm_path(dir, s.id), &s.lr)?;
        let a = s.attrs;
        manifest.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.id, a[0], a[1], a[2], a[3], a[4], a[5]
        ));
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(samples.len())
}

/// A loaded dataset entry referencing the exact float tensors.
#[derive(Clone, Debug)]
pub struct StoredSample {
    pub id: u64,
    pub attrs: [f64; NUM_ATTRS],
    pub hr: Tensor,
    pub lr: Tensor,
}

impl StoredSample {
    pub fn is_test(&self) -> bool {
        self.id % 5 == 4
    }
}

/// Read the manifest and every referenced tensor pair.
pub fn read_dataset(dir: &Path) -> Result<Vec<StoredSample>> {
    let manifest_path = dir.join("manifest.csv");
    if !manifest_path.exists() {
        return Err(CliError::io(format!(
            "missing dataset manifest {}",
            manifest_path.display()
        )));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => {
            return Err(CliError::io(format!(
                "bad manifest header {other:?}, want `{MANIFEST_HEADER}`"
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + NUM_ATTRS {
            return Err(CliError::io(format!(
                "manifest line {}: want {} fields, got {}",
                lineno + 2,
                1 + NUM_ATTRS,
                fields.len()
            )));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| CliError::io(format!("manifest line {}: bad id", lineno + 2)))?;
        let mut attrs = [0.0; NUM_ATTRS];
        for (a, f) in attrs.iter_mut().zip(fields[1..].iter()) {
            *a = f
                .parse()
                .map_err(|_| CliError::io(format!("manifest line {}: bad attr", lineno + 2)))?;
        }
        out.push(StoredSample {
            id,
            attrs,
            hr: ltsr::load(&hr_ltsr_path(dir, id))?,
            lr: ltsr::load(&lr_ltsr_path(dir, id))?,
        });
    }
    if out.is_empty() {
        return Err(CliError::io("dataset manifest has no samples"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_round_trips_exactly() {
        let dir = std::env::temp_dir().join(format!("relsr_ds_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let n = write_dataset(&dir, 6, 16, 4, 11).unwrap();
        assert_eq!(n, 6);
        let ds = read_dataset(&dir).unwrap();
        assert_eq!(ds.len(), 6);
        for (i, s) in ds.iter().enumerate() {
            assert_eq!(s.id, i as u64);
            let regen = synthdata::make_sample(11, s.id, 16, 4).unwrap();
            assert_eq!(s.attrs, regen.attrs);
            assert!(s
                .hr
                .data()
                .iter()
                .zip(regen.hr.data().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        // Split rule: id 4 is test, ids 0..4 train.
        assert!(ds[4].is_test());
        assert!(!ds[0].is_test());
        let _ = fs::remove_dir_all(&dir);
    }
}
