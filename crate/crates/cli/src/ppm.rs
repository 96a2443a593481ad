//! Binary PPM (P6, 8-bit) images. Floats in `[-1, 1]` quantize through
//! `round_half_away((v + 1) / 2 * 255)` clamped to `0..=255`; bytes map back
//! to `u / 255 * 2 - 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use relsr_core::Tensor;

use crate::error::{CliError, Result};

fn quantize(v: f64) -> u8 {
    let x = (v + 1.0) / 2.0 * 255.0;
    // x >= 0 here, so round-half-away-from-zero is floor(x + 0.5).
    let r = (x + 0.5).floor();
    r.clamp(0.0, 255.0) as u8
}

fn dequantize(u: u8) -> f64 {
    u as f64 / 255.0 * 2.0 - 1.0
}

/// Write a `[3, h, w]` float image as P6.
pub fn write_to(w: &mut impl Write, img: &Tensor) -> Result<()> {
    if img.rank() != 3 || img.dims()[0] != 3 {
        return Err(CliError::bad_config(format!(
            "ppm wants [3, h, w], got {:?}",
            img.dims()
        )));
    }
    let (h, wid) = (img.dims()[1], img.dims()[2]);
    write!(w, "P6\n{wid} {h}\n255\n")?;
    let plane = h * wid;
    for px in 0..plane {
        for ch in 0..3 {
            w.write_all(&[quantize(img.data()[ch * plane + px])])?;
        }
    }
    Ok(())
}

/// Read a P6 image into a `[3, h, w]` float tensor.
pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CliError::io("truncated ppm header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(CliError::io("not a binary P6 ppm"));
    }
    let wid: usize = token(&bytes)?.parse().map_err(|_| CliError::io("bad ppm width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| CliError::io("bad ppm height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| CliError::io("bad ppm maxval"))?;
    if maxval != 255 {
        return Err(CliError::io(format!("only { }-bit ppm supported, maxval {maxval}", 8)));
    }
    pos += 1; // single whitespace after maxval
    let plane = h * wid;
    if bytes.len() < pos + 3 * plane {
        return Err(CliError::io("truncated ppm payload"));
    }
    let mut data = vec![0.0; 3 * plane];
    for px in 0..plane {
        for ch in 0..3 {
            data[ch * plane + px] = dequantize(bytes[pos + px * 3 + ch]);
        }
    }
    Tensor::new(&[3, h, wid], data).map_err(|e| CliError::io(e.to_string()))
}

pub fn save(path: &Path, img: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(CliError::io(format!("missing file {}", path.display())));
    }
    let mut r = BufReader::new(File::open(path)?);
    read_from(&mut r)
}
