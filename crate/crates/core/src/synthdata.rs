//! Procedural attribute-labelled image pairs: one anti-aliased rotated
//! rectangle over a flat background, with every render parameter an affine
//! function of the six ground-truth attributes. HR images live in `[-1, 1]`;
//! LR counterparts are exact box averages.
//!
//! Attribute order (all uniform in `[0, 1]`): background intensity, shape x,
//! shape y, shape size, shape hue, orientation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{streams, Pcg32};
use crate::tensor::Tensor;

pub const NUM_ATTRS: usize = 6;

pub type AttributeVector = [f64; NUM_ATTRS];

/// One dataset entry. `lr` is exactly `downsample(hr, scale)`.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub id: u64,
    pub attrs: AttributeVector,
    pub hr: Tensor,
    pub lr: Tensor,
}

/// Attributes of sample `index` under `seed`: six uniforms from the
/// per-sample stream, so any sample can be regenerated independently.
pub fn sample_attrs(seed: u64, index: u64) -> AttributeVector {
    let mut rng = Pcg32::new(seed, streams::DATA_ATTRS + index);
    let mut attrs = [0.0; NUM_ATTRS];
    for a in attrs.iter_mut() {
        *a = rng.uniform();
    }
    attrs
}

/// Rasterize the rectangle scene at resolution `s >= 8`.
///
/// Geometry and colors are affine in the attributes:
/// background grey `2*bg - 1`; center `(0.25 + 0.5*x, 0.25 + 0.5*y) * s`;
/// half-extents `a = (0.08 + 0.17*size) * s`, `b = 0.6*a`; rotation
/// `1.2 * orient` radians; shape color
/// `(0.9 - 1.5*hue, -0.7 + 1.5*hue, 0.2 + 0.5*hue)`. Edges are anti-aliased
/// with a one-pixel linear coverage ramp on the signed distance.
pub fn render(attrs: &AttributeVector, s: usize) -> Result<Tensor> {
    if s < 8 {
        return Err(Error::DimMismatch(format!("render size {s} < 8")));
    }
    let [bg, x, y, size, hue, orient] = *attrs;
    let sf = s as f64;
    let bg_level = 2.0 * bg - 1.0;
    let bg_rgb = [bg_level, bg_level, bg_level];
    let shape_rgb = [0.9 - 1.5 * hue, -0.7 + 1.5 * hue, 0.2 + 0.5 * hue];
    let cx = (0.25 + 0.5 * x) * sf;
    let cy = (0.25 + 0.5 * y) * sf;
    let half_a = (0.08 + 0.17 * size) * sf;
    let half_b = 0.6 * half_a;
    let theta = 1.2 * orient;
    let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));

    let mut data = vec![0.0; 3 * s * s];
    for py in 0..s {
        for px in 0..s {
            let dx = (px as f64 + 0.5) - cx;
            let dy = (py as f64 + 0.5) - cy;
            // Rotate into the rectangle frame.
            let rx = cos_t * dx + sin_t * dy;
            let ry = -sin_t * dx + cos_t * dy;
            let qx = rx.abs() - half_a;
            let qy = ry.abs() - half_b;
            let outside = libm::sqrt(qx.max(0.0) * qx.max(0.0) + qy.max(0.0) * qy.max(0.0));
            let dist = outside + qx.max(qy).min(0.0);
            let coverage = (0.5 - dist).clamp(0.0, 1.0);
            for ch in 0..3 {
                data[ch * s * s + py * s + px] =
                    bg_rgb[ch] + coverage * (shape_rgb[ch] - bg_rgb[ch]);
            }
        }
    }
    Ok(Tensor::from_raw(vec![3, s, s], data))
}

/// Exact `s x s` box-average pooling per channel.
pub fn downsample(hr: &Tensor, scale: usize) -> Result<Tensor> {
    if hr.rank() != 3 {
        return Err(Error::DimMismatch(format!(
            "downsample wants [C,H,W], got {:?}",
            hr.dims()
        )));
    }
    let (c, h, w) = (hr.dims()[0], hr.dims()[1], hr.dims()[2]);
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::DimMismatch(format!(
            "scale {scale} must divide {h}x{w}"
        )));
    }
    let (ho, wo) = (h / scale, w / scale);
    let inv = 1.0 / (scale * scale) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for iy in 0..scale {
                    for ix in 0..scale {
                        acc += hr.data()[ci * h * w + (oy * scale + iy) * w + ox * scale + ix];
                    }
                }
                out[ci * ho * wo + oy * wo + ox] = acc * inv;
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, ho, wo], out))
}

/// Pixel-replication upsample, the adjoint of the box average; serves as the
/// model-free reconstruction baseline.
pub fn box_upsample(lr: &Tensor, scale: usize) -> Result<Tensor> {
    if lr.rank() != 3 {
        return Err(Error::DimMismatch(format!(
            "box_upsample wants [C,H,W], got {:?}",
            lr.dims()
        )));
    }
    let (c, h, w) = (lr.dims()[0], lr.dims()[1], lr.dims()[2]);
    if scale == 0 {
        return Err(Error::DimMismatch("scale must be positive".into()));
    }
    let (ho, wo) = (h * scale, w * scale);
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                out[ci * ho * wo + oy * wo + ox] =
                    lr.data()[ci * h * w + (oy / scale) * w + ox / scale];
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, ho, wo], out))
}

/// Regenerate one sample of the dataset identified by `(seed, index)`.
pub fn make_sample(seed: u64, index: u64, hr_size: usize, scale: usize) -> Result<SamplePair> {
    let attrs = sample_attrs(seed, index);
    let hr = render(&attrs, hr_size)?;
    let lr = downsample(&hr, scale)?;
    Ok(SamplePair { id: index, attrs, hr, lr })
}

/// The whole dataset; deterministic and independently regenerable per index.
pub fn make_dataset(n: usize, hr_size: usize, scale: usize, seed: u64) -> Result<Vec<SamplePair>> {
    if n == 0 {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    (0..n as u64)
        .map(|i| make_sample(seed, i, hr_size, scale))
        .collect()
}
