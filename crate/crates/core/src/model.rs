//! Full pipeline wiring: LR image -> encoder -> disentangled codes ->
//! detail codes -> frozen generator -> SR image, with run-time selectable
//! reasoning modes for both graph modules.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cgm::{self, CgmConfig, CgmMode, CgmParams};
use crate::error::{Error, Result};
use crate::gdm::{self, GdmConfig, GdmMode, GdmParams};
use crate::gradcheck::ParamMap;
use crate::graph::{Graph, NodeId};
use crate::objective::PerceptualParams;
use crate::prior::{self, output_resolution, DiscParams, EncoderParams, GeneratorParams};
use crate::rng::{streams, Pcg32};
use crate::tensor::Tensor;

/// Where the generator's per-layer detail input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeMode {
    /// Recursive relation reasoning over the disentangled codes.
    Rerr,
    /// Vanilla (layer-independent) relation reasoning.
    Vrr,
    /// Seeded Gaussian noise — the stochastic-input baseline.
    Noise,
}

/// Everything needed to build the model deterministically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub gdm: GdmConfig,
    /// Dimension of the generated detail codes.
    pub f: usize,
    pub hr_size: usize,
    pub scale: usize,
    pub gen_channels: usize,
    pub enc_channels: usize,
    pub disc_channels: usize,
    pub perc_channels: usize,
    pub seed: u64,
    pub gdm_mode: GdmMode,
    pub code_mode: CodeMode,
}

impl ModelConfig {
    pub fn lr_size(&self) -> usize {
        self.hr_size / self.scale.max(1)
    }

    pub fn cgm(&self) -> CgmConfig {
        CgmConfig { h: self.gdm.h, n: self.gdm.n, f: self.f }
    }

    pub fn validate(&self) -> Result<()> {
        self.gdm.validate()?;
        self.cgm().validate()?;
        let want = output_resolution(self.gdm.n);
        if self.hr_size != want {
            return Err(Error::DimMismatch(format!(
                "{} generator layers emit {want}x{want}, config says hr_size = {}",
                self.gdm.n, self.hr_size
            )));
        }
        if self.scale == 0 || self.hr_size % self.scale != 0 {
            return Err(Error::DimMismatch(format!(
                "scale {} must divide hr_size {}",
                self.scale, self.hr_size
            )));
        }
        let lr = self.lr_size();
        if lr == 0 || !lr.is_power_of_two() {
            return Err(Error::DimMismatch(format!(
                "LR size {lr} must be a power of two"
            )));
        }
        if self.gen_channels == 0
            || self.enc_channels == 0
            || self.disc_channels == 0
            || self.perc_channels == 0
        {
            return Err(Error::DimMismatch("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Small config used across the unit tests.
    pub fn tiny_for_tests() -> ModelConfig {
        ModelConfig {
            gdm: GdmConfig { h: 6, n: 2, j: 2, c: 2, k: 2 },
            f: 3,
            hr_size: 4,
            scale: 2,
            gen_channels: 4,
            enc_channels: 4,
            disc_channels: 4,
            perc_channels: 4,
            seed: 11,
            gdm_mode: GdmMode::Hmrr,
            code_mode: CodeMode::Rerr,
        }
    }
}

/// All parameter groups. Encoder, GDM, CGM and discriminator train; the
/// generator and the perceptual stub are frozen functions of the seed.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub gdm: GdmParams,
    pub cgm: CgmParams,
    pub disc: DiscParams,
    pub gen: GeneratorParams,
    pub perceptual: PerceptualParams,
}

impl Model {
    pub fn init(cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Pcg32::new(cfg.seed, streams::MODEL_INIT);
        let encoder = EncoderParams::init(cfg.lr_size(), cfg.gdm.h, cfg.enc_channels, &mut rng)?;
        let gdm = GdmParams::init(&cfg.gdm, &mut rng);
        let cgm = CgmParams::init(&cfg.cgm(), &mut rng);
        let disc = DiscParams::init(cfg.hr_size, cfg.disc_channels, &mut rng)?;
        let gen = GeneratorParams::init(
            cfg.gdm.n,
            cfg.gdm.h,
            cfg.f,
            &vec![cfg.gen_channels; cfg.gdm.n],
            cfg.seed,
        );
        let mut perc_rng = Pcg32::new(cfg.seed, streams::PERCEPTUAL);
        let perceptual = PerceptualParams::init(cfg.perc_channels, &mut perc_rng);
        Ok(Model { cfg: *cfg, encoder, gdm, cgm, disc, gen, perceptual })
    }

    /// Parameters updated by the generator-side optimizer step. The CGM only
    /// participates when its codes are actually on the loss path.
    pub fn generator_side_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut();
        out.extend(self.gdm.named_mut());
        if self.cfg.code_mode != CodeMode::Noise {
            out.extend(self.cgm.named_mut());
        }
        out
    }

    /// Snapshot of the trainable generator-side parameters, keyed exactly as
    /// the graph registers them.
    pub fn generator_side_param_map(&self) -> ParamMap {
        let mut map = ParamMap::new();
        for (name, t) in self.encoder.named() {
            map.insert(name, t.clone());
        }
        for (name, t) in self.gdm.named() {
            map.insert(name, t.clone());
        }
        if self.cfg.code_mode != CodeMode::Noise {
            for (name, t) in self.cgm.named() {
                map.insert(name, t.clone());
            }
        }
        map
    }

    /// Overwrite trainable tensors by name; shapes must match.
    pub fn load_trainable(&mut self, src: &ParamMap) -> Result<()> {
        let mut all = self.encoder.named_mut();
        all.extend(self.gdm.named_mut());
        all.extend(self.cgm.named_mut());
        all.extend(self.disc.named_mut());
        for (name, tensor) in all {
            if let Some(new) = src.get(&name) {
                if new.dims() != tensor.dims() {
                    return Err(Error::DimMismatch(format!(
                        "checkpoint tensor `{name}` has shape {:?}, model wants {:?}",
                        new.dims(),
                        tensor.dims()
                    )));
                }
                *tensor = new.clone();
            }
        }
        Ok(())
    }

    /// All trainable tensors by name (encoder, GDM, CGM, discriminator).
    pub fn trainable_named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        out.extend(self.gdm.named());
        out.extend(self.cgm.named());
        out.extend(self.disc.named());
        out
    }

    /// Inference-mode reconstruction of one LR image.
    pub fn reconstruct(&self, lr: &Tensor, noise: Option<&[Tensor]>) -> Result<Tensor> {
        let mut g = Graph::new();
        let fwd = build_sr(&mut g, self, lr, false, noise)?;
        Ok(g.value(fwd.yhat).clone())
    }

    /// Latents of one LR image: the encoder output `z` and the flat
    /// disentangled vector (all per-layer codes concatenated, i.e. the
    /// extraction output before splitting).
    pub fn latents(&self, lr: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let lr_node = g.input(lr.clone());
        let z = prior::encode(&mut g, lr_node, &self.encoder, false)?;
        let nodes = gdm::register_params(&mut g, &self.gdm, false)?;
        let codes = gdm::gdm_forward(&mut g, z, &nodes, &self.cfg.gdm, self.cfg.gdm_mode)?;
        let mut flat = Vec::with_capacity(self.cfg.gdm.d());
        for c in &codes {
            flat.extend_from_slice(g.value(*c).data());
        }
        Ok((
            g.value(z).clone(),
            Tensor::from_raw(vec![self.cfg.gdm.d()], flat),
        ))
    }
}

/// Handles into a built forward pass.
#[derive(Clone, Debug)]
pub struct SrForward {
    pub z: NodeId,
    pub style_codes: Vec<NodeId>,
    pub detail_codes: Vec<NodeId>,
    pub yhat: NodeId,
}

/// Build the full SR forward pass on a graph. With `trainable` the encoder,
/// GDM and CGM register as named parameters; the generator always enters
/// frozen. `Noise` mode requires pre-drawn codes (one `F`-vector per layer).
pub fn build_sr(
    g: &mut Graph,
    model: &Model,
    lr: &Tensor,
    trainable: bool,
    noise: Option<&[Tensor]>,
) -> Result<SrForward> {
    let cfg = &model.cfg;
    let lr_node = g.input(lr.clone());
    let z = prior::encode(g, lr_node, &model.encoder, trainable)?;
    let gdm_nodes = gdm::register_params(g, &model.gdm, trainable)?;
    let style_codes = gdm::gdm_forward(g, z, &gdm_nodes, &cfg.gdm, cfg.gdm_mode)?;

    let detail_codes = match cfg.code_mode {
        CodeMode::Rerr | CodeMode::Vrr => {
            if noise.is_some() {
                return Err(Error::DimMismatch(
                    "noise codes supplied but the code mode is not Noise".into(),
                ));
            }
            let cgm_nodes = cgm::register_params(g, &model.cgm, trainable)?;
            let mode = if cfg.code_mode == CodeMode::Rerr {
                CgmMode::Rerr
            } else {
                CgmMode::Vrr
            };
            cgm::cgm_forward(g, &style_codes, &cgm_nodes, &cfg.cgm(), mode)?
        }
        CodeMode::Noise => {
            let noise = noise.ok_or_else(|| {
                Error::DimMismatch("Noise mode needs pre-drawn noise codes".into())
            })?;
            if noise.len() != cfg.gdm.n {
                return Err(Error::DimMismatch(format!(
                    "{} noise codes for {} layers",
                    noise.len(),
                    cfg.gdm.n
                )));
            }
            noise
                .iter()
                .map(|t| {
                    if t.dims() != [cfg.f] {
                        return Err(Error::DimMismatch(format!(
                            "noise code shape {:?}, want [{}]",
                            t.dims(),
                            cfg.f
                        )));
                    }
                    Ok(g.input(t.clone()))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let yhat = prior::synthesize(g, &style_codes, &detail_codes, &model.gen)?;
    Ok(SrForward { z, style_codes, detail_codes, yhat })
}

/// Box-upsampled LR as the no-model reconstruction baseline.
pub fn baseline_upsample(lr: &Tensor, scale: usize) -> Result<Tensor> {
    crate::synthdata::box_upsample(lr, scale)
}
