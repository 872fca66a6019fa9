//! `AMCD` dataset files: little-endian, no padding.
//!
//! ```text
//! magic "AMCD" | version u32 = 1 | count u64
//! count × ( label u8 | snr_db i8 | 256 × f32 (I row, then Q row) )
//! ```

use std::fs;
use std::path::Path;

use super::{is_valid_snr, IqFrame, LabeledExample, ModulationScheme};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AMCD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 2 + IqFrame::LEN * 4;

pub fn encode_dataset(examples: &[LabeledExample]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + examples.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    for ex in examples {
        buf.push(ex.label.code());
        buf.push(ex.snr_db as u8);
        for v in ex.frame.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<LabeledExample>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"AMCD\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let expected = (count as u128) * RECORD_LEN as u128;
    if (body.len() as u128) < expected {
        let complete = body.len() / RECORD_LEN;
        return Err(format_err(
            HEADER_LEN + body.len(),
            format!("truncated: header declares {count} examples, file holds {complete}"),
        ));
    }
    if (body.len() as u128) > expected {
        return Err(format_err(
            HEADER_LEN + expected as usize,
            "trailing bytes after the last example",
        ));
    }
    let mut out = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let off = HEADER_LEN + i * RECORD_LEN;
        let label = ModulationScheme::from_code(rec[0])
            .ok_or_else(|| format_err(off, format!("invalid label {}", rec[0])))?;
        let snr_db = rec[1] as i8;
        if !is_valid_snr(snr_db) {
            return Err(format_err(off + 1, format!("invalid SNR {snr_db} dB")));
        }
        let samples = rec[2..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let frame = IqFrame::new(samples).map_err(|e| format_err(off + 2, e.to_string()))?;
        out.push(LabeledExample {
            frame,
            label,
            snr_db,
        });
    }
    Ok(out)
}

pub fn write_dataset(examples: &[LabeledExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(examples)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
