//! PFM images (little-endian only) and 16-bit PGM previews.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::{DepthMap, NormalMap};
use crate::scene::Vec3;

/// Decoded PFM raster, rows stored top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<f32>,
}

fn token<'a>(data: &'a [u8], pos: &mut usize) -> Result<(&'a str, usize)> {
    while *pos < data.len() && data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos - start > 64 {
        return Err(Error::parse(start, "malformed PFM header"));
    }
    let s = std::str::from_utf8(&data[start..*pos]).map_err(|_| Error::parse(start, "non-ASCII PFM header"))?;
    Ok((s, start))
}

pub fn parse_pfm(data: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let (magic, _) = token(data, &mut pos)?;
    let channels = match magic {
        "Pf" => 1u8,
        "PF" => 3,
        _ => return Err(Error::parse(0, format!("bad PFM magic '{magic}'"))),
    };
    let mut dim = |what: &str| -> Result<u32> {
        let (t, at) = token(data, &mut pos)?;
        t.parse::<u32>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(at, format!("bad PFM {what} '{t}'")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (scale, at) = token(data, &mut pos)?;
    let scale: f64 = scale
        .parse()
        .map_err(|_| Error::parse(at, format!("bad PFM scale '{scale}'")))?;
    if !(scale < 0.0) {
        return Err(Error::parse(
            at,
            format!("PFM scale {scale} marks a big-endian or invalid file; only little-endian (negative scale) is supported"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "PFM header not terminated"));
    }
    pos += 1;
    let n = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| Error::parse(pos, "PFM size overflow"))?;
    let mut c = super::bytes::Cursor::at(data, pos);
    let raw = c.f32_vec(n)?;
    c.finish()?;
    // File rows run bottom to top.
    let row = width as usize * channels as usize;
    let mut out = Vec::with_capacity(n);
    for r in (0..height as usize).rev() {
        out.extend_from_slice(&raw[r * row..(r + 1) * row]);
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data: out,
    })
}

pub fn write_pfm(img: &PfmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width as usize * img.channels as usize;
    for r in (0..img.height as usize).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Single-channel PFM with invalid pixels stored as 0.
pub fn depth_to_pfm(map: &DepthMap) -> PfmImage {
    PfmImage {
        width: map.width,
        height: map.height,
        channels: 1,
        data: map
            .values
            .iter()
            .zip(&map.valid)
            .map(|(v, ok)| if *ok { *v as f32 } else { 0.0 })
            .collect(),
    }
}

/// Depth map from a single-channel PFM; zero or non-finite pixels are invalid.
pub fn depth_from_pfm(img: &PfmImage) -> Result<DepthMap> {
    if img.channels != 1 {
        return Err(Error::Shape {
            expected: 1,
            got: img.channels as usize,
        });
    }
    DepthMap::from_values(img.width, img.height, img.data.iter().map(|v| *v as f64).collect())
}

pub fn normals_to_pfm(map: &NormalMap) -> PfmImage {
    let mut data = Vec::with_capacity(map.normals.len() * 3);
    for (n, ok) in map.normals.iter().zip(&map.valid) {
        let n = if *ok { *n } else { Vec3::zeros() };
        data.extend(n.iter().map(|v| *v as f32));
    }
    PfmImage {
        width: map.width,
        height: map.height,
        channels: 3,
        data,
    }
}

pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    depth_from_pfm(&parse_pfm(&std::fs::read(path)?)?)
}

pub fn write_depth_pfm(path: impl AsRef<Path>, map: &DepthMap) -> Result<()> {
    std::fs::write(path, write_pfm(&depth_to_pfm(map)))?;
    Ok(())
}

/// Millimeters per PGM count in [`depth_to_pgm16`].
pub const PGM_UNITS_PER_METER: f64 = 1000.0;

/// 16-bit binary PGM preview: one count per millimeter, saturating at
/// 65535 (65.535 m), invalid pixels 0. Samples are big-endian as PGM requires.
pub fn depth_to_pgm16(map: &DepthMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for (v, ok) in map.values.iter().zip(&map.valid) {
        let q = if *ok { (v * PGM_UNITS_PER_METER).round().clamp(1.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}
