//! Checkpoint layout: an 8-byte little-endian header length, a JSON header,
//! then `E`, `C` and `W` as row-major little-endian f64.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ControlledLM, Vocab};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const FORMAT: &str = "objhal-controlled-lm";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub vocab: Vec<String>,
    pub seed: u64,
    pub epsilon: f64,
}

fn push_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

pub fn checkpoint_bytes(model: &ControlledLM) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.to_owned(),
        version: VERSION,
        dim: model.dim(),
        vocab: model.vocab().tokens().to_vec(),
        seed: model.seed,
        epsilon: model.epsilon,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_row_major(&mut out, model.e());
    push_row_major(&mut out, model.c());
    push_row_major(&mut out, model.w());
    out
}

pub fn save_checkpoint(path: &Path, model: &ControlledLM) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model))
}

pub fn parse_checkpoint(bytes: &[u8], origin: &str) -> Result<ControlledLM> {
    let bad = |why: &str| Error::InvalidInput(format!("{origin}: {why}"));
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated checkpoint"))?.try_into().expect("8 bytes");
    let hlen = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("bad header length"))?;
    let header_bytes = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes).map_err(|e| Error::json(origin, e))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad("not a controlled-LM checkpoint of a supported version"));
    }
    let (d, v) = (header.dim, header.vocab.len());
    let mut floats = bytes[8 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected = d * v + d * (v + 1) + d * d;
    if bytes.len() - 8 - hlen != expected * 8 {
        return Err(bad("payload size does not match header"));
    }
    let mut take = |rows: usize, cols: usize| {
        let data: Vec<f64> = floats.by_ref().take(rows * cols).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    };
    let e = take(d, v);
    let c = take(d, v + 1);
    let w = take(d, d);
    let vocab = Vocab::from_tokens(header.vocab)?;
    let mut model = ControlledLM::from_parts(vocab, e, c, w, header.seed)?;
    model.set_epsilon(header.epsilon)?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<ControlledLM> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let vocab = Vocab::from_texts(&["x y z"]);
        let mut m = ControlledLM::new_random(vocab, 3, 4).unwrap();
        m.set_w(DMatrix::from_fn(3, 3, |i, j| i as f64 * 0.1 - j as f64 * 0.2)).unwrap();
        m.set_epsilon(-0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let bytes = std::fs::read(&path).unwrap();
        assert!(parse_checkpoint(&bytes[..bytes.len() - 3], "x").is_err());
    }

    #[test]
    fn payload_is_row_major() {
        let vocab = Vocab::from_texts(&["x"]);
        let m = ControlledLM::new_random(vocab, 2, 0).unwrap();
        let bytes = checkpoint_bytes(&m);
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let second = f64::from_le_bytes(bytes[8 + hlen + 8..8 + hlen + 16].try_into().unwrap());
        assert_eq!(second, m.e()[(0, 1)]);
    }
}
