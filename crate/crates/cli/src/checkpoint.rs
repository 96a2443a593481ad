//! Checkpoint container: magic `LCKP1`, a length-prefixed canonical config
//! snapshot, the step counter, then the named trainable tensors as embedded
//! LTSR blobs. The frozen generator and perceptual stack are reconstructed
//! from the seed in the snapshot, so save/load round-trips bit-identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use relsr_core::model::Model;
use relsr_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ltsr;

pub const MAGIC: &[u8; 5] = b"LCKP1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Snapshot a model's trainable tensors at a step.
    pub fn from_model(config: &RunConfig, model: &Model, step: u64) -> Checkpoint {
        let tensors = model
            .trainable_named()
            .into_iter()
            .map(|(name, t)| (name, t.clone()))
            .collect();
        Checkpoint { config: config.clone(), step, tensors }
    }

    /// Rebuild the model: frozen parts from the seed, trainables from the
    /// stored tensors. Shape conflicts are configuration errors.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::init(&self.config.model_config())
            .map_err(|e| CliError::bad_config(e.to_string()))?;
        model
            .load_trainable(&self.tensors)
            .map_err(|e| CliError::bad_config(e.to_string()))?;
        Ok(model)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let cfg = self.config.to_text();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.tensors.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            ltsr::write_to(w, t)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CliError::io("bad checkpoint magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let cfg_len = u32::from_le_bytes(u32buf) as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let cfg_text = String::from_utf8(cfg_bytes)
            .map_err(|_| CliError::io("checkpoint config is not UTF-8"))?;
        let config = RunConfig::parse(&cfg_text)?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let step = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            r.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CliError::io("checkpoint tensor name is not UTF-8"))?;
            tensors.insert(name, ltsr::read_from(r)?);
        }
        Ok(Checkpoint { config, step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(CliError::io(format!("missing checkpoint {}", path.display())));
        }
        let mut r = BufReader::new(File::open(path)?);
        Checkpoint::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_run_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.h = 6;
        cfg.n = 2;
        cfg.j = 2;
        cfg.c = 2;
        cfg.k = 2;
        cfg.f = 3;
        cfg.hr_size = 4;
        cfg.scale = 2;
        cfg.gen_channels = 4;
        cfg.enc_channels = 4;
        cfg.disc_channels = 4;
        cfg.perc_channels = 4;
        cfg
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let cfg = tiny_run_config();
        let model = Model::init(&cfg.model_config()).unwrap();
        let ckpt = Checkpoint::from_model(&cfg, &model, 42);

        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut &bytes[..]).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.config, cfg);

        let mut bytes2 = Vec::new();
        back.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn restore_rebuilds_the_same_model() {
        let cfg = tiny_run_config();
        let mut model = Model::init(&cfg.model_config()).unwrap();
        // Nudge a trainable tensor so restore has something to prove.
        model.gdm.readout_bias = Tensor::scalar(0.75);
        let ckpt = Checkpoint::from_model(&cfg, &model, 7);
        let restored = ckpt.restore_model().unwrap();
        assert_eq!(restored.gdm.readout_bias.data(), &[0.75]);
        // Frozen generator identical because it comes from the seed.
        for (a, b) in model.gen.all_tensors().iter().zip(restored.gen.all_tensors().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn shape_conflict_is_a_config_error() {
        let cfg = tiny_run_config();
        let model = Model::init(&cfg.model_config()).unwrap();
        let mut ckpt = Checkpoint::from_model(&cfg, &model, 0);
        ckpt.tensors.insert("gdm.wu".into(), Tensor::zeros(&[1, 1]).unwrap());
        let err = ckpt.restore_model().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
