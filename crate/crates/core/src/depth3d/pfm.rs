//! Single-channel PFM (`Pf`) with a negative (little-endian) scale.
//! Rows are stored bottom to top.

use super::{DepthError, DepthMap};

pub fn write_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> DepthError {
    DepthError::Format {
        format: "pfm",
        msg: msg.into(),
    }
}

pub fn read_pfm(bytes: &[u8]) -> Result<DepthMap, DepthError> {
    let (w, h, data) = read_pfm_raw(bytes)?;
    DepthMap::new(w, h, data)
}

/// Decodes the raster without validating the values.
pub fn read_pfm_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), DepthError> {
    // Three whitespace-terminated header tokens after the magic line.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    if tokens[0] != "Pf" {
        return Err(bad(format!("expected Pf magic, found {:?}", tokens[0])));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("scale"))?;
    let little = scale < 0.0;
    let payload = bytes.get(pos..).ok_or_else(|| bad("missing payload"))?;
    if payload.len() < w * h * 4 {
        return Err(bad(format!("payload has {} bytes, need {}", payload.len(), w * h * 4)));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in payload.chunks_exact(4).take(w * h).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, col) = (i / w, i % w);
        data[(h - 1 - row) * w + col] = v as f64;
    }
    Ok((w, h, data))
}
