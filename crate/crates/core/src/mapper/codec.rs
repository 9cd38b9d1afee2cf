//! `MUVM` map layout: magic, `u16` version, `u16` category count, `u32` side
//! length, then all `(C + 2) * M * M` bits channel-major and row-major,
//! packed least-significant-bit first and zero-padded to a whole byte.

use super::{Frame, SemanticMap};
use crate::gridsim::Cell;
use crate::{Error, Result};

pub const MAP_MAGIC: &[u8; 4] = b"MUVM";
pub const MAP_VERSION: u16 = 1;

pub fn encode_map(map: &SemanticMap) -> Vec<u8> {
    let n_bits = map.total_bits();
    let mut out = Vec::with_capacity(12 + n_bits.div_ceil(8));
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.num_categories() as u16).to_le_bytes());
    out.extend_from_slice(&(map.size() as u32).to_le_bytes());
    let words = map.raw_bits();
    for byte in 0..n_bits.div_ceil(8) {
        let b = byte * 8;
        let v = (words[b / 64] >> (b % 64)) as u8;
        out.push(v);
    }
    // Clear padding bits past the end in the final byte.
    if n_bits % 8 != 0 {
        let last = out.last_mut().expect("non-empty");
        *last &= (1u8 << (n_bits % 8)) - 1;
    }
    out
}

/// Decodes one map from the front of `bytes`, returning it with the number of
/// bytes consumed. The layout carries no frame or origin; both are supplied.
pub fn decode_map(bytes: &[u8], frame: Frame, origin: Cell) -> Result<(SemanticMap, usize)> {
    if bytes.len() < 12 || &bytes[..4] != MAP_MAGIC {
        return Err(Error::Format("missing MUVM header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MAP_VERSION {
        return Err(Error::Format(format!("unsupported MUVM version {version}")));
    }
    let c = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let m = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let mut map = SemanticMap::new(c, m, origin, frame);
    let n_bits = map.total_bits();
    let len = 12 + n_bits.div_ceil(8);
    if bytes.len() < len {
        return Err(Error::Format("truncated MUVM payload".into()));
    }
    for (i, &byte) in bytes[12..len].iter().enumerate() {
        let mut v = byte;
        while v != 0 {
            let bit = v.trailing_zeros() as usize;
            let b = i * 8 + bit;
            if b < n_bits {
                map.set_flat(b);
            }
            v &= v - 1;
        }
    }
    Ok((map, len))
}
