//! Depth maps as single-channel PFM (`Pf`), written little-endian.
//!
//! PFM stores rows bottom to top; the reader and writer flip accordingly so
//! files open upright in other tools. Invalid pixels are stored as 0.

use std::path::Path;

use crate::maps::DepthMap;

use super::{header_tokens, read_bytes, write_bytes, IoError};

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.data.len() * 4);
    for y in (0..depth.height).rev() {
        for v in &depth.data[y * depth.width..(y + 1) * depth.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap, IoError> {
    let (tokens, payload) = header_tokens(bytes, 4)?;
    if tokens[0] != "Pf" {
        return Err(IoError::Format(format!("expected a single-channel PFM (Pf), found {:?}", tokens[0])));
    }
    let dim = |t: &str| t.parse::<usize>().map_err(|_| IoError::Format(format!("bad PFM dimension {t:?}")));
    let (w, h) = (dim(&tokens[1])?, dim(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| IoError::Format(format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoError::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let n = w * h;
    if payload.len() != n * 4 {
        return Err(IoError::Data(format!(
            "PFM payload has {} bytes, {w}x{h} needs {}",
            payload.len(),
            n * 4
        )));
    }
    let mut data = vec![0f32; n];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        if !v.is_finite() || v < 0.0 {
            return Err(IoError::Data(format!("depth value {v} at payload index {i}")));
        }
        let (row, col) = (i / w, i % w);
        data[(h - 1 - row) * w + col] = v;
    }
    Ok(DepthMap { width: w, height: h, data })
}

pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    decode_pfm(&read_bytes(path)?)
}

pub fn write_depth(depth: &DepthMap, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(depth))
}
