//! Run configuration: a flat UTF-8 `key = value` file with `#` comments.
//!
//! Unknown keys are rejected by name. `LAREN_SEED` in the environment
//! overrides the seed whenever a config file is read (checkpoints carry
//! their own frozen snapshot and are not affected).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use relsr_core::gdm::{GdmConfig, GdmMode};
use relsr_core::model::{CodeMode, ModelConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub h: usize,
    pub n: usize,
    pub j: usize,
    pub c: usize,
    pub k: usize,
    pub f: usize,
    pub hr_size: usize,
    pub scale: usize,
    pub gen_channels: usize,
    pub enc_channels: usize,
    pub disc_channels: usize,
    pub perc_channels: usize,
    pub gdm_mode: GdmMode,
    pub cgm_mode: CodeMode,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub iters: u64,
    pub ckpt_every: u64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    /// The documented toy defaults: 32x32 HR at 8x, eight generator layers.
    fn default() -> Self {
        RunConfig {
            h: 16,
            n: 8,
            j: 8,
            c: 4,
            k: 3,
            f: 8,
            hr_size: 32,
            scale: 8,
            gen_channels: 8,
            enc_channels: 8,
            disc_channels: 8,
            perc_channels: 6,
            gdm_mode: GdmMode::Hmrr,
            cgm_mode: CodeMode::Rerr,
            alpha: 0.01,
            beta: 0.01,
            lr: 1e-4,
            batch: 8,
            iters: 2000,
            ckpt_every: 500,
            samples: 500,
            seed: 7,
        }
    }
}

fn gdm_mode_str(m: GdmMode) -> &'static str {
    match m {
        GdmMode::Hmrr => "hmrr",
        GdmMode::Vrr => "vrr",
        GdmMode::Affine => "affine",
    }
}

fn code_mode_str(m: CodeMode) -> &'static str {
    match m {
        CodeMode::Rerr => "rerr",
        CodeMode::Vrr => "vrr",
        CodeMode::Noise => "noise",
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            gdm: GdmConfig { h: self.h, n: self.n, j: self.j, c: self.c, k: self.k },
            f: self.f,
            hr_size: self.hr_size,
            scale: self.scale,
            gen_channels: self.gen_channels,
            enc_channels: self.enc_channels,
            disc_channels: self.disc_channels,
            perc_channels: self.perc_channels,
            seed: self.seed,
            gdm_mode: self.gdm_mode,
            code_mode: self.cgm_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()
            .validate()
            .map_err(|e| CliError::bad_config(e.to_string()))?;
        if self.batch == 0 {
            return Err(CliError::bad_config("batch must be positive"));
        }
        if self.samples == 0 {
            return Err(CliError::bad_config("samples must be positive"));
        }
        if self.ckpt_every == 0 {
            return Err(CliError::bad_config("ckpt_every must be positive"));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.lr.is_finite()) {
            return Err(CliError::bad_config("alpha, beta and lr must be finite"));
        }
        if self.lr <= 0.0 {
            return Err(CliError::bad_config("lr must be positive"));
        }
        Ok(())
    }

    /// Canonical key = value text; `parse` of the output reproduces the
    /// config exactly (floats print in shortest round-trip form).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "j = {}", self.j);
        let _ = writeln!(s, "c = {}", self.c);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "f = {}", self.f);
        let _ = writeln!(s, "hr_size = {}", self.hr_size);
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "gen_channels = {}", self.gen_channels);
        let _ = writeln!(s, "enc_channels = {}", self.enc_channels);
        let _ = writeln!(s, "disc_channels = {}", self.disc_channels);
        let _ = writeln!(s, "perc_channels = {}", self.perc_channels);
        let _ = writeln!(s, "gdm_mode = {}", gdm_mode_str(self.gdm_mode));
        let _ = writeln!(s, "cgm_mode = {}", code_mode_str(self.cgm_mode));
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "iters = {}", self.iters);
        let _ = writeln!(s, "ckpt_every = {}", self.ckpt_every);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Parse config text. Every key is optional (defaults apply), unknown
    /// keys are errors, duplicate keys take the last value.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::bad_config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            seen.insert(key.to_string());

            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|_| {
                        CliError::bad_config(format!("key `{key}`: bad value `{value}`"))
                    })?
                };
            }
            match key {
                "h" => cfg.h = num!(usize),
                "n" => cfg.n = num!(usize),
                "j" => cfg.j = num!(usize),
                "c" => cfg.c = num!(usize),
                "k" => cfg.k = num!(usize),
                "f" => cfg.f = num!(usize),
                "hr_size" => cfg.hr_size = num!(usize),
                "scale" => cfg.scale = num!(usize),
                "gen_channels" => cfg.gen_channels = num!(usize),
                "enc_channels" => cfg.enc_channels = num!(usize),
                "disc_channels" => cfg.disc_channels = num!(usize),
                "perc_channels" => cfg.perc_channels = num!(usize),
                "gdm_mode" => {
                    cfg.gdm_mode = match value.to_ascii_lowercase().as_str() {
                        "hmrr" => GdmMode::Hmrr,
                        "vrr" => GdmMode::Vrr,
                        "affine" => GdmMode::Affine,
                        other => {
                            return Err(CliError::bad_config(format!(
                                "key `gdm_mode`: unknown mode `{other}` (hmrr|vrr|affine)"
                            )))
                        }
                    }
                }
                "cgm_mode" => {
                    cfg.cgm_mode = match value.to_ascii_lowercase().as_str() {
                        "rerr" => CodeMode::Rerr,
                        "vrr" => CodeMode::Vrr,
                        "noise" => CodeMode::Noise,
                        other => {
                            return Err(CliError::bad_config(format!(
                                "key `cgm_mode`: unknown mode `{other}` (rerr|vrr|noise)"
                            )))
                        }
                    }
                }
                "alpha" => cfg.alpha = num!(f64),
                "beta" => cfg.beta = num!(f64),
                "lr" => cfg.lr = num!(f64),
                "batch" => cfg.batch = num!(usize),
                "iters" => cfg.iters = num!(u64),
                "ckpt_every" => cfg.ckpt_every = num!(u64),
                "samples" => cfg.samples = num!(usize),
                "seed" => cfg.seed = num!(u64),
                other => {
                    return Err(CliError::bad_config(format!("unknown key `{other}`")));
                }
            }
        }
        let _ = seen;
        Ok(cfg)
    }

    /// Read a config file, apply the `LAREN_SEED` override, validate.
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(CliError::io(format!("missing config {}", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Ok(seed) = std::env::var("LAREN_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| CliError::bad_config(format!("LAREN_SEED: bad value `{seed}`")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.alpha = 0.012345678901234567;
        cfg.gdm_mode = GdmMode::Affine;
        cfg.cgm_mode = CodeMode::Noise;
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\nh = 8 # trailing\n").unwrap();
        assert_eq!(cfg.h, 8);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = RunConfig::parse("bogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_value_is_rejected() {
        assert!(RunConfig::parse("h = not_a_number\n").is_err());
        assert!(RunConfig::parse("gdm_mode = sideways\n").is_err());
    }

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn ladder_mismatch_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.n = 4; // emits 8x8, hr_size still 32
        assert!(cfg.validate().is_err());
    }
}
