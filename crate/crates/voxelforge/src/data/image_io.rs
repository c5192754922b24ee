//! Binary netpbm codecs: P6 for color, P5 at maxval 65535 for depth. Depth
//! is stored as big-endian millimeters, the common RGB-D sensor convention,
//! so real captures can slot in later without a format change.

use std::fs;
use std::path::Path;

use super::{io_err, DataError};
use crate::edges::RgbImage;
use crate::geometry::DepthMap;

const DEPTH_SCALE: f64 = 1000.0; // meters -> millimeters

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), DataError> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for px in img.data() {
        for c in px {
            out.push((c * 255.0).round() as u8);
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, maxval, payload) = parse_pnm_header(path, &bytes, b"P6")?;
    if maxval != 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    if payload.len() < w * h * 3 {
        return Err(DataError::Truncated { path: path.to_path_buf() });
    }
    let data = payload[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Ok(RgbImage::new(w, h, data)?)
}

/// Writes depth as 16-bit PGM and reports how many readings were clamped to
/// the 65.535 m format ceiling; the caller decides whether to warn.
pub fn write_pgm16(path: &Path, dm: &DepthMap) -> Result<usize, DataError> {
    let (w, h) = (dm.width(), dm.height());
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(w * h * 2);
    let mut clamped = 0usize;
    for &d in dm.values() {
        let mm = (d * DEPTH_SCALE).round();
        let stored = if mm > f64::from(u16::MAX) {
            clamped += 1;
            u16::MAX
        } else {
            mm as u16
        };
        out.extend_from_slice(&stored.to_be_bytes());
    }
    fs::write(path, out).map_err(io_err(path))?;
    Ok(clamped)
}

pub fn read_pgm16(path: &Path) -> Result<DepthMap, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, maxval, payload) = parse_pnm_header(path, &bytes, b"P5")?;
    if maxval != 65535 {
        return Err(malformed(path, format!("expected 16-bit depth, maxval {maxval}")));
    }
    if payload.len() < w * h * 2 {
        return Err(DataError::Truncated { path: path.to_path_buf() });
    }
    let values = payload[..w * h * 2]
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / DEPTH_SCALE)
        .collect();
    Ok(DepthMap::new(w, h, values)?)
}

fn malformed(path: &Path, what: String) -> DataError {
    DataError::Malformed { path: path.to_path_buf(), what }
}

/// Parses `magic width height maxval` with whitespace and `#` comments,
/// returning the raster that follows the single byte after maxval.
fn parse_pnm_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8],
) -> Result<(usize, usize, u32, &'a [u8]), DataError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(DataError::BadMagic { path: path.to_path_buf() });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DataError::Truncated { path: path.to_path_buf() }),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = token
            .parse()
            .map_err(|_| malformed(path, "non-numeric header field".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(path, "missing separator after maxval".into())),
    }
    let (w, h) = (fields[0] as usize, fields[1] as usize);
    if w == 0 || h == 0 {
        return Err(malformed(path, "zero image dimension".into()));
    }
    Ok((w, h, fields[2], &bytes[pos..]))
}
