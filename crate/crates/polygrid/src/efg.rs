//! The `.efg` binary parameter file and its stacked variant.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "EFGR"
//! version u32      1
//! variant u8       0 trilinear, 1 nrbf, 2 func-interp, 3 offset, 4 combined
//! degree  u8       0..3, or 4 for the trilinear-cube polynomial
//! R       u32      lattice resolution per axis
//! C       u32      stored channels per key
//! payload R^3 * C  f32 values, key-major, channel-minor
//! ```
//!
//! Channel order per key: bank 0 then bank 1, each bank as
//! `[offset x,y,z (if stored)] [log_scale (if learnable)] [coefficients]`
//! with the coefficient layout documented in [`crate::poly`]. Whether the
//! scale channel exists is implied by `C`, so the header carries no extra
//! flag. Parameters are stored in 32-bit precision; in-memory grids are
//! double precision, so save->load->save is byte-stable while load(save(g))
//! rounds to f32.
//!
//! A stack file ("EFGS") holds the band count followed by that many
//! concatenated `.efg` records; all bands must share one configuration.

use crate::error::{Error, Result};
use crate::grid::{GridConfig, InitSpec, ParamGrid, Variant};
use crate::poly::Degree;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"EFGR";
pub const STACK_MAGIC: &[u8; 4] = b"EFGS";
pub const VERSION: u32 = 1;

fn degree_code(degree: Degree) -> u8 {
    match degree {
        Degree::D0 => 0,
        Degree::D1 => 1,
        Degree::D2 => 2,
        Degree::D3 => 3,
        Degree::Cube => 4,
    }
}

fn degree_from_code(code: u8) -> Result<Degree> {
    match code {
        4 => Ok(Degree::Cube),
        c => Degree::from_order(c),
    }
}

/// Reconstruct the configuration implied by a header, validating that the
/// channel count is one this variant/degree pair can produce. The file does
/// not record learnability of stored keys (a training-time concern), so
/// loaded grids default to learnable offsets.
fn config_from_header(variant: Variant, degree: Degree, r: u32, c: u32) -> Result<GridConfig> {
    let mut base = GridConfig::new(variant, degree, r);
    base.resolution = r;
    for scale_learnable in [base.scale_learnable, !base.scale_learnable] {
        let cfg = GridConfig { scale_learnable, ..base };
        if cfg.validate().is_ok() && cfg.channels() == c {
            return Ok(cfg);
        }
    }
    Err(Error::format(format!(
        "channel count {c} is not valid for variant {} degree {degree}",
        variant.name()
    )))
}

pub fn write_grid(grid: &ParamGrid, mut w: impl Write) -> Result<()> {
    let cfg = grid.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[cfg.variant.code(), degree_code(cfg.degree)])?;
    w.write_all(&cfg.resolution.to_le_bytes())?;
    w.write_all(&cfg.channels().to_le_bytes())?;

    let mut channels = Vec::with_capacity(cfg.channels() as usize);
    let mut payload = Vec::with_capacity(cfg.param_count() * 4);
    for key in 0..grid.key_count() {
        grid.stored_channels(key, &mut channels);
        for &v in &channels {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<ParamGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::format("bad magic; not an .efg file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported format version {version}")));
    }
    let mut vd = [0u8; 2];
    r.read_exact(&mut vd).map_err(truncated)?;
    let variant = Variant::from_code(vd[0])?;
    let degree = degree_from_code(vd[1])?;
    let resolution = read_u32(&mut r)?;
    if resolution == 0 {
        return Err(Error::format("zero resolution"));
    }
    let channels = read_u32(&mut r)?;
    let cfg = config_from_header(variant, degree, resolution, channels)?;

    let count = cfg.param_count();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(truncated)?;
    // a well-formed file ends exactly here
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("trailing bytes after payload"));
    }

    let mut grid = ParamGrid::init(cfg, &InitSpec { seed: 0, value_stddev: 0.0 })?;
    let stride = cfg.channels() as usize;
    let mut chans = vec![0.0f64; stride];
    for key in 0..cfg.key_count() {
        for (ci, chan) in chans.iter_mut().enumerate() {
            let at = (key * stride + ci) * 4;
            let bits = [payload[at], payload[at + 1], payload[at + 2], payload[at + 3]];
            *chan = f32::from_le_bytes(bits) as f64;
        }
        grid.set_stored_channels(key, &chans)?;
    }
    grid.refresh_derived();
    Ok(grid)
}

fn truncated(_: std::io::Error) -> Error {
    Error::format("file truncated")
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save(grid: &ParamGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(grid, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamGrid> {
    read_grid(BufReader::new(File::open(path)?))
}

/// Write a band stack: header plus concatenated `.efg` records.
pub fn write_stack(bands: &[ParamGrid], mut w: impl Write) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::contract("a stack needs at least one band"));
    }
    w.write_all(STACK_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bands.len() as u32).to_le_bytes())?;
    for band in bands {
        write_grid(band, &mut w)?;
    }
    Ok(())
}

pub fn read_stack(mut r: impl Read) -> Result<Vec<ParamGrid>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != STACK_MAGIC {
        return Err(Error::format("bad magic; not an .efg stack file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported stack version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count == 0 {
        return Err(Error::format("stack with zero bands"));
    }
    let mut bands = Vec::with_capacity(count);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut cursor = std::io::Cursor::new(payload);
    for _ in 0..count {
        bands.push(read_band(&mut cursor)?);
    }
    let mut probe = [0u8; 1];
    if cursor.read(&mut probe)? != 0 {
        return Err(Error::format("trailing bytes after stack payload"));
    }
    Ok(bands)
}

/// Like `read_grid` but tolerant of following records in the same stream.
fn read_band(r: &mut impl Read) -> Result<ParamGrid> {
    let mut header = [0u8; 18];
    r.read_exact(&mut header).map_err(truncated)?;
    if &header[0..4] != MAGIC {
        return Err(Error::format("bad band magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(format!("unsupported band version {version}")));
    }
    let variant = Variant::from_code(header[8])?;
    let degree = degree_from_code(header[9])?;
    let resolution = u32::from_le_bytes(header[10..14].try_into().unwrap());
    let channels = u32::from_le_bytes(header[14..18].try_into().unwrap());
    let cfg = config_from_header(variant, degree, resolution, channels)?;

    let count = cfg.param_count();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(truncated)?;
    let mut grid = ParamGrid::init(cfg, &InitSpec { seed: 0, value_stddev: 0.0 })?;
    let stride = cfg.channels() as usize;
    let mut chans = vec![0.0f64; stride];
    for key in 0..cfg.key_count() {
        for (ci, chan) in chans.iter_mut().enumerate() {
            let at = (key * stride + ci) * 4;
            *chan = f32::from_le_bytes([
                payload[at],
                payload[at + 1],
                payload[at + 2],
                payload[at + 3],
            ]) as f64;
        }
        grid.set_stored_channels(key, &chans)?;
    }
    grid.refresh_derived();
    Ok(grid)
}

pub fn save_stack(bands: &[ParamGrid], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack(bands, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<Vec<ParamGrid>> {
    read_stack(BufReader::new(File::open(path)?))
}
