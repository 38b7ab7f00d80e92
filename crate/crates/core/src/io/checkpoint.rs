//! Binary weight checkpoints (`RLDF-W`), feature tables (`RLDF-F`) and TSDF
//! volumes (`RLDF-V`). All integers and floats are little-endian.

use super::bytes::Cursor;
use crate::error::{Error, Result};
use crate::field::{BlendMode, Mlp, MlpShape};
use crate::fusion::TsdfVolume;
use crate::scene::Vec3;

pub const WEIGHTS_MAGIC: &[u8; 6] = b"RLDF-W";
pub const FEATURES_MAGIC: &[u8; 6] = b"RLDF-F";
pub const VOLUME_MAGIC: &[u8; 6] = b"RLDF-V";
pub const FORMAT_VERSION: u32 = 1;

/// Sanity bound on any one declared dimension.
const MAX_DIM: u32 = 1 << 20;

/// Decoded weight checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp<f32>,
    pub channels: u32,
    pub k: u32,
    pub blend: BlendMode,
}

/// Header `{magic, version, in_dim, hidden, layers, C, K, blend}` followed by
/// every layer's row-major weights then bias, as `f32`. `layers` counts the
/// hidden-to-hidden layers.
pub fn write_checkpoint(mlp: &Mlp<f32>, channels: usize, k: usize, blend: BlendMode) -> Vec<u8> {
    let shape = mlp.shape();
    let mut out = Vec::with_capacity(31 + 4 * mlp.params().len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    for v in [FORMAT_VERSION, shape.input as u32, shape.hidden as u32, shape.hidden_layers as u32, channels as u32, k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(blend.code());
    for p in mlp.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn version(c: &mut Cursor) -> Result<()> {
    let at = c.pos();
    let v = c.u32()?;
    if v != FORMAT_VERSION {
        return Err(Error::parse(at, format!("unsupported version {v}")));
    }
    Ok(())
}

fn dim(c: &mut Cursor, what: &str, min: u32) -> Result<u32> {
    let at = c.pos();
    let v = c.u32()?;
    if v < min || v > MAX_DIM {
        return Err(Error::parse(at, format!("{what} {v} out of range")));
    }
    Ok(v)
}

pub fn parse_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(data);
    c.expect(WEIGHTS_MAGIC, "weights")?;
    version(&mut c)?;
    let input = dim(&mut c, "input width", 1)?;
    let hidden = dim(&mut c, "hidden width", 1)?;
    let layers = dim(&mut c, "layer count", 0)?;
    let channels = dim(&mut c, "channel count", 0)?;
    let k = dim(&mut c, "neighbor count", 1)?;
    let at = c.pos();
    let blend = BlendMode::from_code(c.u8()?).map_err(|e| Error::parse(at, e.to_string()))?;
    let shape = MlpShape {
        input: input as usize,
        hidden: hidden as usize,
        hidden_layers: layers as usize,
    };
    let count = (shape.input as u128 + 1) * shape.hidden as u128
        + shape.hidden_layers as u128 * (shape.hidden as u128 + 1) * shape.hidden as u128
        + (shape.hidden as u128 + 1) * MlpShape::OUTPUTS as u128;
    if count * 4 != c.remaining() as u128 {
        return Err(Error::parse(
            c.pos(),
            format!("expected {count} parameters, found {} bytes", c.remaining()),
        ));
    }
    let params = c.f32_vec(count as usize)?;
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::parse(at + 1 + 4 * i, "non-finite parameter"));
    }
    Ok(Checkpoint {
        mlp: Mlp::from_params(shape, params)?,
        channels,
        k,
        blend,
    })
}

/// Header `{magic, version, N: u64, C: u32}` then `N·C` `f32` values.
pub fn write_features(rows: usize, channels: usize, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + 4 * values.len());
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `(N, C, values)`.
pub fn parse_features(data: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut c = Cursor::new(data);
    c.expect(FEATURES_MAGIC, "feature")?;
    version(&mut c)?;
    let rows = c.u64()?;
    let channels = dim(&mut c, "channel count", 0)?;
    let n = (rows as u128) * channels as u128;
    if n * 4 != c.remaining() as u128 {
        return Err(Error::parse(c.pos(), format!("expected {n} values, found {} bytes", c.remaining())));
    }
    let values = c.f32_vec(n as usize)?;
    Ok((rows as usize, channels as usize, values))
}

/// Header `{magic, version, nx, ny, nz: u32, origin: 3×f64, voxel: f64,
/// truncation: f64}` then `tsdf` and `weight` arrays as `f64`.
pub fn write_volume(v: &TsdfVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(66 + 16 * v.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in v.origin.iter().chain([v.voxel_size, v.truncation].iter()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in v.tsdf.iter().chain(&v.weight) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn parse_volume(data: &[u8]) -> Result<TsdfVolume> {
    let mut c = Cursor::new(data);
    c.expect(VOLUME_MAGIC, "volume")?;
    version(&mut c)?;
    let dims = [dim(&mut c, "nx", 1)?, dim(&mut c, "ny", 1)?, dim(&mut c, "nz", 1)?].map(|d| d as usize);
    let origin = Vec3::new(c.f64()?, c.f64()?, c.f64()?);
    let at = c.pos();
    let voxel = c.f64()?;
    let trunc = c.f64()?;
    let n = dims.iter().map(|&d| d as u128).product::<u128>();
    if n * 16 != c.remaining() as u128 {
        return Err(Error::parse(c.pos(), format!("expected {n} voxels, found {} bytes", c.remaining())));
    }
    if !origin.iter().all(|v| v.is_finite()) {
        return Err(Error::parse(14, "non-finite origin"));
    }
    let mut vol = TsdfVolume::with_truncation(origin, voxel, dims, trunc).map_err(|e| Error::parse(at, e.to_string()))?;
    vol.tsdf = c.f64_vec(n as usize)?;
    vol.weight = c.f64_vec(n as usize)?;
    Ok(vol)
}
