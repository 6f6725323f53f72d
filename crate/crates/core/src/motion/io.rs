//! Motion file formats.
//!
//! - JSON: `{"fps":30,"layout":"lodgepp-139","frames":[[139 floats], ...]}`
//! - `.mseq`: magic `MSEQ`, then little-endian `u32` version (1), `u32`
//!   frame count, `u32` dims (139), then `frames×dims` `f32` values, row-major.
//!   The binary format carries no frame rate; readers assume 30 fps.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MotionSequence, DEFAULT_FPS, FRAME_DIMS};
use crate::error::{Error, Result};

pub const LAYOUT_TAG: &str = "lodgepp-139";
const MSEQ_MAGIC: &[u8; 4] = b"MSEQ";
const MSEQ_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MotionJson {
    fps: f64,
    layout: String,
    frames: Vec<Vec<f64>>,
}

pub fn to_json(seq: &MotionSequence) -> Result<String> {
    let doc = MotionJson {
        fps: seq.fps,
        layout: LAYOUT_TAG.to_string(),
        frames: seq.data.outer_iter().map(|r| r.to_vec()).collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json(text: &str) -> Result<MotionSequence> {
    let doc: MotionJson = serde_json::from_str(text)?;
    if doc.layout != LAYOUT_TAG {
        return Err(Error::data(format!("unsupported motion layout {:?}", doc.layout)));
    }
    let rows = doc.frames.len();
    let mut flat = Vec::with_capacity(rows * FRAME_DIMS);
    for (i, f) in doc.frames.iter().enumerate() {
        if f.len() != FRAME_DIMS {
            return Err(Error::shape(format!("frame {i} has {} values", f.len())));
        }
        flat.extend_from_slice(f);
    }
    let data = Array2::from_shape_vec((rows, FRAME_DIMS), flat).expect("checked shape");
    MotionSequence::new(doc.fps, data)
}

pub fn to_mseq_bytes(seq: &MotionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + seq.data.len() * 4);
    out.extend_from_slice(MSEQ_MAGIC);
    out.extend_from_slice(&MSEQ_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(FRAME_DIMS as u32).to_le_bytes());
    for v in seq.data.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn from_mseq_bytes(bytes: &[u8]) -> Result<MotionSequence> {
    let (frames, dims, payload) = read_f32_header(bytes, MSEQ_MAGIC, MSEQ_VERSION)?;
    if dims != FRAME_DIMS {
        return Err(Error::shape(format!("mseq dims {dims}, expected {FRAME_DIMS}")));
    }
    let values = decode_f32s(payload, frames * dims)?;
    let data = Array2::from_shape_vec((frames, dims), values).expect("checked shape");
    MotionSequence::new(DEFAULT_FPS, data)
}

/// Parses `magic, u32 version, u32 rows, u32 cols` and returns the remaining bytes.
pub(crate) fn read_f32_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    version: u32,
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::data(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(1) != version {
        return Err(Error::data(format!("unsupported version {}", word(1))));
    }
    Ok((word(2) as usize, word(3) as usize, &bytes[16..]))
}

pub(crate) fn decode_f32s(payload: &[u8], count: usize) -> Result<Vec<f64>> {
    if payload.len() != count * 4 {
        return Err(Error::data(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

/// Reads `.json` or `.mseq` by extension.
pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        from_json(std::str::from_utf8(&bytes).map_err(|e| Error::data(e.to_string()))?)
    } else {
        from_mseq_bytes(&bytes)
    }
}

/// Writes `.json` or `.mseq` by extension.
pub fn write_motion(path: &Path, seq: &MotionSequence) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        to_json(seq)?.into_bytes()
    } else {
        to_mseq_bytes(seq)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
