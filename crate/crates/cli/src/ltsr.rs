//! The LTSR tensor container: magic `LTSR1`, little-endian u32 rank, u32
//! dims, then the f64 payload in row-major order (little-endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use relsr_core::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"LTSR1";

pub fn write_to(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::io(format!(
            "bad LTSR magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank == 0 || rank > relsr_core::tensor::MAX_RANK {
        return Err(CliError::io(format!("bad LTSR rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let numel: usize = dims.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut f64buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    Tensor::new(&dims, data).map_err(|e| CliError::io(format!("invalid LTSR payload: {e}")))
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, t)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use relsr_core::Pcg32;

    #[test]
    fn round_trip_preserves_bits() {
        let mut rng = Pcg32::new(1, 0);
        let t = rng.normal_tensor(&[2, 3, 4], 1.0);
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        assert_eq!(&buf[..5], MAGIC);
        let back = read_from(&mut &buf[..]).unwrap();
        assert_eq!(back.dims(), t.dims());
        assert!(back
            .data()
            .iter()
            .zip(t.data().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        // magic(5) + rank(4) + dims(8) + payload(16)
        assert_eq!(buf.len(), 5 + 4 + 8 + 16);
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        assert_eq!(&buf[17..25], &1.0f64.to_le_bytes());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut buf = Vec::new();
        write_to(&mut buf, &Tensor::scalar(1.0)).unwrap();
        buf[0] = b'X';
        assert!(read_from(&mut &buf[..]).is_err());
    }
}
