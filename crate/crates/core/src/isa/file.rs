//! Binary instruction-trace files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "RACAMPIM"
//! version      u16      1
//! word_width   u16      address-bus width in bits
//! config hash  8 bytes
//! word count   u64
//! words        u64 × count
//! ```

use super::{decode_program, encode_program, IsaError, PimInstruction};
use crate::config::SystemConfig;

const MAGIC: &[u8; 8] = b"RACAMPIM";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 2 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub word_width: u32,
    pub config_hash: [u8; 8],
    pub program: Vec<PimInstruction>,
}

fn hash_bytes(cfg: &SystemConfig) -> [u8; 8] {
    let hex = cfg.hash();
    let mut out = [0u8; 8];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hash is hex");
    }
    out
}

pub fn write_trace_file(prog: &[PimInstruction], cfg: &SystemConfig) -> Result<Vec<u8>, IsaError> {
    let width = cfg.dram().device_data_width_bits;
    let words = encode_program(prog, width)?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * words.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&hash_bytes(cfg));
    out.extend_from_slice(&(words.len() as u64).to_le_bytes());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn read_trace_file(bytes: &[u8]) -> Result<TraceFile, IsaError> {
    let bad = |m: &str| IsaError::File(m.to_string());
    if bytes.len() < HEADER_LEN {
        return Err(bad("shorter than the header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("wrong magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u16_at(8);
    if version != VERSION {
        return Err(IsaError::File(format!("unsupported version {version}")));
    }
    let word_width = u32::from(u16_at(10));
    let config_hash: [u8; 8] = bytes[12..20].try_into().unwrap();
    let count = u64_at(20) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(bad("word count does not match the body"));
    }
    let words: Vec<u64> = (0..count).map(|i| u64_at(HEADER_LEN + 8 * i)).collect();
    Ok(TraceFile {
        word_width,
        config_hash,
        program: decode_program(&words, word_width)?,
    })
}
