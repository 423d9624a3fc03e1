//! Binary container shared by cubes (`SCUB`), mask stacks (`SMSK`) and
//! measurements (`SMES`).
//!
//! ```text
//! offset  size  field
//!      0     4  magic
//!      4     2  version (u16, = 1)
//!      6     4  width  Nx (u32)
//!     10     4  height Ny (u32)
//!     14     4  bands  Nλ (u32)
//!     18     8  start_nm (f64)
//!     26     8  step_nm (f64)
//!     34   4·n  payload, n = Nx·Ny·Nλ f32 values, pixel-contiguous
//! ```
//!
//! Everything is little-endian. Measurements store `Nλ = 1` and a zero grid.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dims, MaskStack, Measurement, SpectralCube, WavelengthGrid};

pub const CUBE_MAGIC: &[u8; 4] = b"SCUB";
pub const MASK_MAGIC: &[u8; 4] = b"SMSK";
pub const MEASUREMENT_MAGIC: &[u8; 4] = b"SMES";
pub const CONTAINER_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 34;

struct Header {
    dims: Dims,
    start_nm: f64,
    step_nm: f64,
}

fn encode(magic: &[u8; 4], header: &Header, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.dims.width as u32).to_le_bytes());
    out.extend_from_slice(&(header.dims.height as u32).to_le_bytes());
    out.extend_from_slice(&(header.dims.bands as u32).to_le_bytes());
    out.extend_from_slice(&header.start_nm.to_le_bytes());
    out.extend_from_slice(&header.step_nm.to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::NotACubeFile {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
            found,
        });
    }
    let corrupt = |detail: String| Error::CorruptCube {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let version = u16_at(4);
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dims = Dims::new(u32_at(6), u32_at(10), u32_at(14));
    let start_nm = f64_at(18);
    let step_nm = f64_at(26);

    let expected = dims
        .width
        .checked_mul(dims.height)
        .and_then(|p| p.checked_mul(dims.bands))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt(format!("dimensions {dims} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(corrupt(format!(
            "payload for {dims} needs {expected} bytes, found {}",
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(expected / 4);
    for (n, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::InvalidData(format!(
                "{}: non-finite value {v} at element {n}",
                path.display()
            )));
        }
        values.push(v as f64);
    }
    Ok((
        Header {
            dims,
            start_nm,
            step_nm,
        },
        values,
    ))
}

fn grid_from_header(header: &Header, path: &Path) -> Result<WavelengthGrid> {
    WavelengthGrid::new(header.start_nm, header.step_nm, header.dims.bands).map_err(|e| {
        Error::CorruptCube {
            path: path.to_path_buf(),
            detail: format!("bad wavelength grid: {e}"),
        }
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn cube_to_bytes(cube: &SpectralCube) -> Vec<u8> {
    let grid = cube.grid();
    let header = Header {
        dims: cube.dims(),
        start_nm: grid.start_nm(),
        step_nm: grid.step_nm(),
    };
    encode(CUBE_MAGIC, &header, cube.data())
}

pub fn cube_from_bytes(bytes: &[u8], path: &Path) -> Result<SpectralCube> {
    let (header, values) = decode(bytes, CUBE_MAGIC, path)?;
    let grid = grid_from_header(&header, path)?;
    SpectralCube::new(header.dims.width, header.dims.height, grid, values)
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &cube_to_bytes(cube))
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    cube_from_bytes(&read_file(path)?, path)
}

pub fn masks_to_bytes(masks: &MaskStack) -> Vec<u8> {
    let grid = masks.grid();
    let header = Header {
        dims: masks.dims(),
        start_nm: grid.start_nm(),
        step_nm: grid.step_nm(),
    };
    encode(MASK_MAGIC, &header, masks.data())
}

/// Decodes an `SMSK` container; the mask invariants (range, no dead pixel)
/// are enforced by [`MaskStack::new`].
pub fn masks_from_bytes(bytes: &[u8], path: &Path) -> Result<MaskStack> {
    let (header, values) = decode(bytes, MASK_MAGIC, path)?;
    let grid = grid_from_header(&header, path)?;
    MaskStack::new(header.dims.width, header.dims.height, grid, values)
}

pub fn write_masks(masks: &MaskStack, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &masks_to_bytes(masks))
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<MaskStack> {
    let path = path.as_ref();
    masks_from_bytes(&read_file(path)?, path)
}

pub fn measurement_to_bytes(y: &Measurement) -> Vec<u8> {
    let header = Header {
        dims: Dims::new(y.width(), y.height(), 1),
        start_nm: 0.0,
        step_nm: 0.0,
    };
    encode(MEASUREMENT_MAGIC, &header, y.data())
}

pub fn measurement_from_bytes(bytes: &[u8], path: &Path) -> Result<Measurement> {
    let (header, values) = decode(bytes, MEASUREMENT_MAGIC, path)?;
    if header.dims.bands != 1 {
        return Err(Error::CorruptCube {
            path: path.to_path_buf(),
            detail: format!("measurement must have 1 band, header says {}", header.dims.bands),
        });
    }
    Measurement::new(header.dims.width, header.dims.height, values)
}

pub fn write_measurement(y: &Measurement, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &measurement_to_bytes(y))
}

pub fn read_measurement(path: impl AsRef<Path>) -> Result<Measurement> {
    let path = path.as_ref();
    measurement_from_bytes(&read_file(path)?, path)
}
