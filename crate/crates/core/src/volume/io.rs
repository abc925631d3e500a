//! The TBMV1 container.
//!
//! ```text
//! magic    "TBMV1\n"                      6 bytes
//! layout   u64 LE   bits 0..8: axis count (2 or 3)
//!                   bits 8..16: component count, 0 for a scalar volume
//! dims     axis count x u64 LE
//! spacing  axis count x f64 LE
//! payload  voxels x max(1, components) x f64 LE, row-major, one
//!          component block after another
//! ```
//!
//! A scalar volume therefore has `layout == axis count`.

use std::fs;
use std::path::Path;

use crate::error::{Result, TbmError};
use crate::grid::GridSpec;

use super::DensityVolume;

pub const MAGIC: &[u8; 6] = b"TBMV1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub grid: GridSpec,
    /// 0 for scalar volumes, otherwise the number of vector components.
    pub components: usize,
}

impl VolumeHeader {
    fn layout_word(&self) -> u64 {
        self.grid.ndim() as u64 | ((self.components as u64) << 8)
    }

    fn payload_len(&self) -> usize {
        self.grid.len() * self.components.max(1)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * (1 + 2 * self.grid.ndim()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.layout_word().to_le_bytes());
        for &d in self.grid.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &h in self.grid.spacing() {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out
    }

    /// Parses a header, returning it and the payload offset.
    fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(TbmError::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: MAGIC.len() };
        let layout = cur.u64()?;
        let ndim = (layout & 0xff) as usize;
        let components = ((layout >> 8) & 0xff) as usize;
        if layout >> 16 != 0 || !(ndim == 2 || ndim == 3) {
            return Err(TbmError::UnsupportedEncoding(format!("layout word {layout:#x}")));
        }
        if components != 0 && components != ndim {
            return Err(TbmError::UnsupportedEncoding(format!(
                "{components} components on a {ndim}-axis grid"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64()? as usize);
        }
        let mut spacing = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            spacing.push(f64::from_bits(cur.u64()?));
        }
        let grid = GridSpec::new(&dims, &spacing)?;
        Ok((Self { grid, components }, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u64(&mut self) -> Result<u64> {
        let end = self.pos + 8;
        let chunk = self.bytes.get(self.pos..end).ok_or(TbmError::TruncatedFile {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u64::from_le_bytes(chunk.try_into().expect("8-byte slice")))
    }
}

fn encode_file(header: &VolumeHeader, payload: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = header.encode();
    out.reserve(header.payload_len() * 8);
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_file(bytes: &[u8]) -> Result<(VolumeHeader, Vec<f64>)> {
    let (header, offset) = VolumeHeader::decode(bytes)?;
    let expected = offset + header.payload_len() * 8;
    if bytes.len() < expected {
        return Err(TbmError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TbmError::UnsupportedEncoding(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let payload = bytes[offset..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, payload))
}

pub fn write_volume(v: &DensityVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = VolumeHeader {
        grid: v.grid().clone(),
        components: 0,
    };
    fs::write(path, encode_file(&header, v.values().iter().copied()))?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<DensityVolume> {
    let bytes = fs::read(path)?;
    let (header, payload) = decode_file(&bytes)?;
    if header.components != 0 {
        return Err(TbmError::UnsupportedEncoding(
            "expected a scalar volume, found a vector payload".into(),
        ));
    }
    DensityVolume::new(header.grid, payload)
}

/// Writes one flat payload per vector component (component count must equal
/// the grid's axis count).
pub fn write_embedding(grid: &GridSpec, components: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    if components.len() != grid.ndim() || components.iter().any(|c| c.len() != grid.len()) {
        return Err(TbmError::InvalidVolume(
            "component count or length does not match grid".into(),
        ));
    }
    let header = VolumeHeader {
        grid: grid.clone(),
        components: components.len(),
    };
    let payload = components.iter().flat_map(|c| c.iter().copied());
    fs::write(path, encode_file(&header, payload))?;
    Ok(())
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<(GridSpec, Vec<Vec<f64>>)> {
    let bytes = fs::read(path)?;
    let (header, payload) = decode_file(&bytes)?;
    if header.components == 0 {
        return Err(TbmError::UnsupportedEncoding(
            "expected a vector payload, found a scalar volume".into(),
        ));
    }
    if let Some(i) = payload.iter().position(|x| !x.is_finite()) {
        return Err(TbmError::NonFiniteInput(i));
    }
    let n = header.grid.len();
    let comps = payload.chunks_exact(n).map(<[f64]>::to_vec).collect();
    Ok((header.grid, comps))
}
