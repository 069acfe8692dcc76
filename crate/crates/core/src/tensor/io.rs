//! Bit-exact tensor and pyramid file formats.
//!
//! SPYT (single tensor): magic "SPYT", one version byte (1), one rank byte
//! (4), four u32 little-endian dims (n, c, h, w), then n*c*h*w f64
//! little-endian values in row-major order. No alignment padding.
//!
//! SPYR (pyramid container): magic "SPYR", one version byte (1), one level
//! count byte, then that many embedded SPYT records in level order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const SPYT_MAGIC: [u8; 4] = *b"SPYT";
pub const SPYT_VERSION: u8 = 1;
const SPYT_RANK: u8 = 4;

pub const SPYR_MAGIC: [u8; 4] = *b"SPYR";
pub const SPYR_VERSION: u8 = 1;

/// Write a level-ordered list of tensors as a SPYR container.
pub fn pyramid_write(levels: &[Tensor], path: impl AsRef<Path>) -> Result<()> {
    if levels.len() > u8::MAX as usize {
        return Err(Error::InvalidPyramid(format!(
            "SPYR containers hold at most 255 levels, got {}",
            levels.len()
        )));
    }
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&SPYR_MAGIC)?;
    file.write_all(&[SPYR_VERSION, levels.len() as u8])?;
    for level in levels {
        write_tensor_to(level, &mut file)?;
    }
    file.flush()?;
    Ok(())
}

/// Read a SPYR container back into its level list.
pub fn pyramid_read(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut file, &mut magic)?;
    if magic != SPYR_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut head = [0u8; 2];
    read_exact_or_truncated(&mut file, &mut head)?;
    if head[0] != SPYR_VERSION {
        return Err(Error::UnsupportedVersion { found: head[0] });
    }
    (0..head[1]).map(|_| read_tensor_from(&mut file)).collect()
}

pub fn tensor_write(x: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    write_tensor_to(x, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut file = BufReader::new(File::open(path)?);
    read_tensor_from(&mut file)
}

pub(crate) fn write_tensor_to(x: &Tensor, out: &mut impl Write) -> Result<()> {
    out.write_all(&SPYT_MAGIC)?;
    out.write_all(&[SPYT_VERSION, SPYT_RANK])?;
    let (n, c, h, w) = x.dims();
    for dim in [n, c, h, w] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in x.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_tensor_from(input: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(input, &mut magic)?;
    if magic != SPYT_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut head = [0u8; 2];
    read_exact_or_truncated(input, &mut head)?;
    if head[0] != SPYT_VERSION {
        return Err(Error::UnsupportedVersion { found: head[0] });
    }
    if head[1] != SPYT_RANK {
        return Err(Error::UnsupportedRank { found: head[1] });
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        let mut raw = [0u8; 4];
        read_exact_or_truncated(input, &mut raw)?;
        *d = u32::from_le_bytes(raw) as usize;
    }
    let count = dims[0] * dims[1] * dims[2] * dims[3];
    let mut payload = vec![0u8; count * 8];
    read_exact_or_truncated(input, &mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    // from_vec_unchecked: lengths match by construction and the payload is
    // trusted to be the product of tensor_write; NaN payloads surface later
    // through the finiteness property rather than a read error.
    Ok(Tensor::from_vec_unchecked(
        (dims[0], dims[1], dims[2], dims[3]),
        data,
    ))
}

fn read_exact_or_truncated(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let got = input.read(&mut buf[filled..])?;
        if got == 0 {
            return Err(Error::Truncated {
                expected: buf.len() - filled,
                got: filled,
            });
        }
        filled += got;
    }
    Ok(())
}
