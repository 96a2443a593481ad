//! Frozen seeded progressive generator standing in for a pre-trained prior,
//! plus the trainable LR encoder and the discriminator.
//!
//! The generator is a minimal style-modulated ladder: a learned-constant
//! 4x4 base, two conv layers per resolution with nearest-neighbour x2
//! upsampling in between, and a final 1x1 toRGB. Layer `n` consumes the
//! disentangled code `g_n` through a channel-wise scale/shift affine and the
//! detail code `c_n` through the noise-injection slot (a projected spatial
//! map added with per-channel gains). All generator weights are a pure
//! function of the seed and receive no gradient updates, ever.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{streams, Pcg32};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BASE_RESOLUTION: usize = 4;

/// Output resolution of an `n`-layer ladder: two layers per resolution,
/// starting at 4.
pub fn output_resolution(n_layers: usize) -> usize {
    BASE_RESOLUTION << ((n_layers.max(1) - 1) / 2)
}

/// Input resolution of layer `idx` (0-based): upsampling happens before
/// every odd 1-based layer from 3 on.
fn layer_resolution(idx: usize) -> usize {
    BASE_RESOLUTION << (idx / 2)
}

#[derive(Clone, Debug)]
pub struct GenLayer {
    /// Style affine `(2*Cin) x H`: first half scales (around 1), second half
    /// shifts.
    pub mod_w: Tensor,
    pub mod_b: Tensor,
    /// Detail projection `(R*R) x F` into the layer's spatial map.
    pub noise_proj: Tensor,
    /// Per-channel gain on the injected map.
    pub noise_gain: Tensor,
    pub conv_w: Tensor,
    pub conv_b: Tensor,
}

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub base: Tensor,
    pub layers: Vec<GenLayer>,
    pub to_rgb_w: Tensor,
    pub to_rgb_b: Tensor,
    pub seed: u64,
}

/// Spread of the frozen style scales/shifts and noise gains around their
/// neutral values. Keeps the ladder variance roughly constant per layer, as
/// a trained prior would be; a unit spread doubles the variance at every
/// layer and the output scale explodes with depth.
const MODULATION_SPREAD: f64 = 0.25;

impl GeneratorParams {
    /// Deterministic frozen weights from the seed alone.
    pub fn init(n_layers: usize, h: usize, f: usize, channels: &[usize], seed: u64) -> GeneratorParams {
        assert_eq!(channels.len(), n_layers, "one channel count per layer");
        let mut rng = Pcg32::new(seed, streams::GENERATOR);
        let c0 = channels[0];
        let base = rng.normal_tensor(&[c0, BASE_RESOLUTION, BASE_RESOLUTION], 1.0);
        let mut layers = Vec::with_capacity(n_layers);
        for idx in 0..n_layers {
            let cin = if idx == 0 { c0 } else { channels[idx - 1] };
            let cout = channels[idx];
            let res = layer_resolution(idx);
            let conv_fan_in = (cin * 9) as f64;
            layers.push(GenLayer {
                mod_w: rng
                    .normal_tensor(&[2 * cin, h], MODULATION_SPREAD / libm::sqrt(h as f64)),
                mod_b: Tensor::from_raw(vec![2 * cin], vec![0.0; 2 * cin]),
                noise_proj: rng.normal_tensor(&[res * res, f], 1.0 / libm::sqrt(f as f64)),
                noise_gain: rng.normal_tensor(&[cin], MODULATION_SPREAD),
                conv_w: rng.normal_tensor(
                    &[cout, cin, 3, 3],
                    libm::sqrt(2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)) / libm::sqrt(conv_fan_in),
                ),
                conv_b: Tensor::from_raw(vec![cout], vec![0.0; cout]),
            });
        }
        let c_last = channels[n_layers - 1];
        GeneratorParams {
            base,
            layers,
            to_rgb_w: rng.normal_tensor(&[3, c_last, 1, 1], 1.0 / libm::sqrt(c_last as f64)),
            to_rgb_b: Tensor::from_raw(vec![3], vec![0.0; 3]),
            seed,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Every tensor of the frozen prior, for the bit-identity invariant.
    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.base, &self.to_rgb_w, &self.to_rgb_b];
        for l in &self.layers {
            out.extend([&l.mod_w, &l.mod_b, &l.noise_proj, &l.noise_gain, &l.conv_w, &l.conv_b]);
        }
        out
    }
}

/// Run the frozen ladder. `g_codes` and `detail_codes` both carry one vector
/// per layer (`H` and `F` long respectively); the output is `[3, S, S]` with
/// no final activation, so its range is unbounded.
pub fn synthesize(
    g: &mut Graph,
    g_codes: &[NodeId],
    detail_codes: &[NodeId],
    gen: &GeneratorParams,
) -> Result<NodeId> {
    let n = gen.n_layers();
    if g_codes.len() != n || detail_codes.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} style and {} detail codes for {n} layers",
            g_codes.len(),
            detail_codes.len()
        )));
    }
    let mut x = g.input(gen.base.clone());
    for (idx, layer) in gen.layers.iter().enumerate() {
        if idx >= 2 && idx % 2 == 0 {
            x = g.upsample2x(x)?;
        }
        let cin = g.value(x).dims()[0];
        let res = g.value(x).dims()[1];

        // Channel-wise style: scale sits around 1 so a zero affine is a no-op.
        let mod_w = g.input(layer.mod_w.clone());
        let mod_b = g.input(layer.mod_b.clone());
        let affine = g.matvec(mod_w, g_codes[idx])?;
        let affine = g.add(affine, mod_b)?;
        let raw_scale = g.slice_flat(affine, 0, cin)?;
        let ones = g.input(Tensor::from_raw(vec![cin], vec![1.0; cin]));
        let scale = g.add(raw_scale, ones)?;
        let shift = g.slice_flat(affine, cin, cin)?;
        x = g.modulate_channels(x, scale, shift)?;

        // Detail code through the noise slot.
        let proj = g.input(layer.noise_proj.clone());
        let map_flat = g.matvec(proj, detail_codes[idx])?;
        let map = g.reshape(map_flat, &[res, res])?;
        let gain = g.input(layer.noise_gain.clone());
        x = g.add_gained_map(x, map, gain)?;

        let w = g.input(layer.conv_w.clone());
        let b = g.input(layer.conv_b.clone());
        x = g.conv2d(x, w, b, 1, 1)?;
        x = g.leaky_relu(x, LEAKY_SLOPE);
    }
    let w = g.input(gen.to_rgb_w.clone());
    let b = g.input(gen.to_rgb_b.clone());
    g.conv2d(x, w, b, 1, 0)
}

// ---- encoder ---------------------------------------------------------------

/// Stride-2 conv stack from the LR image down to 1x1, then a linear head.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub convs: Vec<(Tensor, Tensor)>,
    pub lin_w: Tensor,
    pub lin_b: Tensor,
}

impl EncoderParams {
    pub fn init(lr_size: usize, h: usize, channels: usize, rng: &mut Pcg32) -> Result<EncoderParams> {
        if lr_size == 0 || !lr_size.is_power_of_two() {
            return Err(Error::DimMismatch(format!(
                "encoder input size must be a power of two, got {lr_size}"
            )));
        }
        let depth = lr_size.trailing_zeros() as usize;
        let mut convs = Vec::with_capacity(depth);
        let mut cin = 3;
        for _ in 0..depth {
            let fan_in = (cin * 9) as f64;
            convs.push((
                rng.normal_tensor(&[channels, cin, 3, 3], 1.0 / libm::sqrt(fan_in)),
                Tensor::from_raw(vec![channels], vec![0.0; channels]),
            ));
            cin = channels;
        }
        let flat = if depth == 0 { 3 } else { channels };
        Ok(EncoderParams {
            convs,
            lin_w: rng.normal_tensor(&[h, flat], 1.0 / libm::sqrt(flat as f64)),
            lin_b: Tensor::from_raw(vec![h], vec![0.0; h]),
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.convs.iter().enumerate() {
            out.push((format!("enc.conv{i}.w"), w));
            out.push((format!("enc.conv{i}.b"), b));
        }
        out.push(("enc.lin.w".into(), &self.lin_w));
        out.push(("enc.lin.b".into(), &self.lin_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.convs.iter_mut().enumerate() {
            out.push((format!("enc.conv{i}.w"), w));
            out.push((format!("enc.conv{i}.b"), b));
        }
        out.push(("enc.lin.w".into(), &mut self.lin_w));
        out.push(("enc.lin.b".into(), &mut self.lin_b));
        out
    }
}

/// Encode an LR image node into a latent vector of length `H`.
pub fn encode(
    g: &mut Graph,
    lr: NodeId,
    enc: &EncoderParams,
    trainable: bool,
) -> Result<NodeId> {
    let dims = g.value(lr).dims().to_vec();
    if dims.len() != 3 || dims[0] != 3 || dims[1] != dims[2] {
        return Err(Error::DimMismatch(format!(
            "encoder wants [3, r, r], got {dims:?}"
        )));
    }
    let expected = 1usize << g_depth(enc);
    if dims[1] != expected {
        return Err(Error::DimMismatch(format!(
            "encoder built for {expected}x{expected} input, got {}x{}",
            dims[1], dims[2]
        )));
    }
    let reg = |name: &str, t: &Tensor, g: &mut Graph| -> Result<NodeId> {
        if trainable {
            g.param(name, t)
        } else {
            Ok(g.input(t.clone()))
        }
    };
    let mut x = lr;
    for (i, (w, b)) in enc.convs.iter().enumerate() {
        let wn = reg(&format!("enc.conv{i}.w"), w, g)?;
        let bn = reg(&format!("enc.conv{i}.b"), b, g)?;
        x = g.conv2d(x, wn, bn, 2, 1)?;
        x = g.leaky_relu(x, LEAKY_SLOPE);
    }
    let flat_len = g.value(x).len();
    let flat = g.reshape(x, &[flat_len])?;
    let wn = reg("enc.lin.w", &enc.lin_w, g)?;
    let bn = reg("enc.lin.b", &enc.lin_b, g)?;
    let z = g.matvec(wn, flat)?;
    g.add(z, bn)
}

fn g_depth(enc: &EncoderParams) -> usize {
    enc.convs.len()
}

// ---- discriminator ---------------------------------------------------------

/// Stride-2 conv stack from the HR image to a single clamped-sigmoid score.
#[derive(Clone, Debug)]
pub struct DiscParams {
    pub convs: Vec<(Tensor, Tensor)>,
    pub lin_w: Tensor,
    pub lin_b: Tensor,
}

impl DiscParams {
    pub fn init(hr_size: usize, channels: usize, rng: &mut Pcg32) -> Result<DiscParams> {
        if hr_size < 2 || !hr_size.is_power_of_two() {
            return Err(Error::DimMismatch(format!(
                "discriminator input size must be a power of two >= 2, got {hr_size}"
            )));
        }
        let depth = hr_size.trailing_zeros() as usize;
        let mut convs = Vec::with_capacity(depth);
        let mut cin = 3;
        for _ in 0..depth {
            let fan_in = (cin * 9) as f64;
            convs.push((
                rng.normal_tensor(&[channels, cin, 3, 3], 1.0 / libm::sqrt(fan_in)),
                Tensor::from_raw(vec![channels], vec![0.0; channels]),
            ));
            cin = channels;
        }
        Ok(DiscParams {
            convs,
            lin_w: rng.normal_tensor(&[1, channels], 1.0 / libm::sqrt(channels as f64)),
            lin_b: Tensor::from_raw(vec![1], vec![0.0]),
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.convs.iter().enumerate() {
            out.push((format!("disc.conv{i}.w"), w));
            out.push((format!("disc.conv{i}.b"), b));
        }
        out.push(("disc.lin.w".into(), &self.lin_w));
        out.push(("disc.lin.b".into(), &self.lin_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.convs.iter_mut().enumerate() {
            out.push((format!("disc.conv{i}.w"), w));
            out.push((format!("disc.conv{i}.b"), b));
        }
        out.push(("disc.lin.w".into(), &mut self.lin_w));
        out.push(("disc.lin.b".into(), &mut self.lin_b));
        out
    }
}

/// Score an image node; the result is a one-element node strictly inside
/// `(0, 1)`.
pub fn discriminate(
    g: &mut Graph,
    img: NodeId,
    disc: &DiscParams,
    trainable: bool,
) -> Result<NodeId> {
    let dims = g.value(img).dims().to_vec();
    if dims.len() != 3 || dims[0] != 3 || dims[1] != dims[2] {
        return Err(Error::DimMismatch(format!(
            "discriminator wants [3, s, s], got {dims:?}"
        )));
    }
    let expected = 1usize << disc.convs.len();
    if dims[1] != expected {
        return Err(Error::DimMismatch(format!(
            "discriminator built for {expected}x{expected} input, got {}x{}",
            dims[1], dims[2]
        )));
    }
    // Parameter nodes are registered once per graph; a second call reuses
    // nothing, so callers score multiple images by passing trainable=false
    // after the first registration or by using `discriminate_with`.
    let mut nodes = Vec::new();
    for (i, (w, b)) in disc.convs.iter().enumerate() {
        let wn = if trainable {
            g.param(&format!("disc.conv{i}.w"), w)?
        } else {
            g.input(w.clone())
        };
        let bn = if trainable {
            g.param(&format!("disc.conv{i}.b"), b)?
        } else {
            g.input(b.clone())
        };
        nodes.push((wn, bn));
    }
    let lw = if trainable {
        g.param("disc.lin.w", &disc.lin_w)?
    } else {
        g.input(disc.lin_w.clone())
    };
    let lb = if trainable {
        g.param("disc.lin.b", &disc.lin_b)?
    } else {
        g.input(disc.lin_b.clone())
    };
    discriminate_with(g, img, &nodes, lw, lb)
}

/// Discriminator nodes for scoring several images with shared parameters.
pub fn register_disc(
    g: &mut Graph,
    disc: &DiscParams,
    trainable: bool,
) -> Result<(Vec<(NodeId, NodeId)>, NodeId, NodeId)> {
    let mut nodes = Vec::new();
    for (i, (w, b)) in disc.convs.iter().enumerate() {
        let wn = if trainable {
            g.param(&format!("disc.conv{i}.w"), w)?
        } else {
            g.input(w.clone())
        };
        let bn = if trainable {
            g.param(&format!("disc.conv{i}.b"), b)?
        } else {
            g.input(b.clone())
        };
        nodes.push((wn, bn));
    }
    let lw = if trainable {
        g.param("disc.lin.w", &disc.lin_w)?
    } else {
        g.input(disc.lin_w.clone())
    };
    let lb = if trainable {
        g.param("disc.lin.b", &disc.lin_b)?
    } else {
        g.input(disc.lin_b.clone())
    };
    Ok((nodes, lw, lb))
}

/// Score an image through already-registered discriminator nodes.
pub fn discriminate_with(
    g: &mut Graph,
    img: NodeId,
    convs: &[(NodeId, NodeId)],
    lin_w: NodeId,
    lin_b: NodeId,
) -> Result<NodeId> {
    let mut x = img;
    for &(w, b) in convs {
        x = g.conv2d(x, w, b, 2, 1)?;
        x = g.leaky_relu(x, LEAKY_SLOPE);
    }
    let flat_len = g.value(x).len();
    let flat = g.reshape(x, &[flat_len])?;
    let logit = g.matvec(lin_w, flat)?;
    let logit = g.add(logit, lin_b)?;
    Ok(g.sigmoid_clamped(logit))
}
