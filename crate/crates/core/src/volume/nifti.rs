//! Minimal single-file NIfTI-1 reader (`.nii`, uncompressed, scalar data).

use std::fs;
use std::path::Path;

use crate::error::{Result, TbmError};
use crate::grid::GridSpec;

use super::DensityVolume;

const HEADER_SIZE: usize = 348;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Header<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Header<'_> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().expect("4 bytes");
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

fn element_size(datatype: i16) -> Result<usize> {
    match datatype {
        2 => Ok(1),
        4 => Ok(2),
        8 => Ok(4),
        16 => Ok(4),
        64 => Ok(8),
        other => Err(TbmError::UnsupportedDatatype(other)),
    }
}

fn decode_element(chunk: &[u8], datatype: i16, endian: Endian) -> f64 {
    macro_rules! num {
        ($t:ty) => {{
            let b = chunk.try_into().expect("element width");
            match endian {
                Endian::Little => <$t>::from_le_bytes(b) as f64,
                Endian::Big => <$t>::from_be_bytes(b) as f64,
            }
        }};
    }
    match datatype {
        2 => chunk[0] as f64,
        4 => num!(i16),
        8 => num!(i32),
        16 => num!(f32),
        64 => num!(f64),
        _ => unreachable!("datatype validated before decoding"),
    }
}

/// Reads a 2D or 3D scalar NIfTI-1 volume. Axis order follows the file
/// (`i`, `j`, `k`), with `pixdim` as spacing; `scl_slope`/`scl_inter` are
/// applied when the slope is nonzero.
pub fn read_nifti1(path: impl AsRef<Path>) -> Result<DensityVolume> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(TbmError::NotNifti1);
    }
    let endian = match (
        i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
        i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")),
    ) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        _ => return Err(TbmError::NotNifti1),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(TbmError::NotNifti1);
    }
    let h = Header { bytes: &bytes, endian };

    let rank = h.i16_at(40);
    if !(1..=7).contains(&rank) {
        return Err(TbmError::NotNifti1);
    }
    let dim: Vec<usize> = (1..=rank as usize)
        .map(|i| h.i16_at(40 + 2 * i).max(1) as usize)
        .collect();
    if dim.iter().skip(3).any(|&d| d > 1) {
        return Err(TbmError::DimensionalityOutOfRange(format!("dim = {dim:?}")));
    }
    let mut dims: Vec<usize> = dim.iter().take(3).copied().collect();
    while dims.len() > 2 && dims.last() == Some(&1) {
        dims.pop();
    }
    if dims.len() < 2 {
        return Err(TbmError::DimensionalityOutOfRange(format!("dim = {dim:?}")));
    }
    let spacing: Vec<f64> = (0..dims.len())
        .map(|a| {
            let p = h.f32_at(76 + 4 * (a + 1)).abs() as f64;
            if p > 0.0 && p.is_finite() {
                p
            } else {
                1.0
            }
        })
        .collect();
    let grid = GridSpec::new(&dims, &spacing)?;

    let datatype = h.i16_at(70);
    let width = element_size(datatype)?;
    let offset = (h.f32_at(108).max(HEADER_SIZE as f32)) as usize;
    let n = grid.len();
    let expected = offset + n * width;
    if bytes.len() < expected {
        return Err(TbmError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let slope = h.f32_at(112) as f64;
    let inter = h.f32_at(116) as f64;
    let (slope, inter) = if slope != 0.0 && slope.is_finite() {
        (slope, if inter.is_finite() { inter } else { 0.0 })
    } else {
        (1.0, 0.0)
    };

    // File order has the first axis fastest; ours has the last axis fastest.
    let strides = grid.strides();
    let mut values = vec![0.0; n];
    for (file_idx, chunk) in bytes[offset..expected].chunks_exact(width).enumerate() {
        let mut rem = file_idx;
        let mut dst = 0;
        for (a, &d) in dims.iter().enumerate() {
            dst += (rem % d) * strides[a];
            rem /= d;
        }
        values[dst] = decode_element(chunk, datatype, endian) * slope + inter;
    }
    DensityVolume::new(grid, values)
}
