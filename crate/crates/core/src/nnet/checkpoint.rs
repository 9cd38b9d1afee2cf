use std::io::Write;

use super::{NnetError, ParamStore, Tensor};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MUVP";
pub const CHECKPOINT_VERSION: u16 = 1;

/// One tensor as stored on disk. Tensors of a group appear consecutively in
/// group order.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub group: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub frozen: bool,
}

/// Layout (little-endian): magic, u16 version, u32 entry count, then per
/// tensor: u16 name length + UTF-8 group name, u8 rank, u32 dims, f64 data,
/// u8 frozen flag. Optimiser moments are not stored.
pub fn write_checkpoint<T: Scalar>(store: &ParamStore<T>, mut w: impl Write) -> std::io::Result<()> {
    let entries: usize = store.groups().iter().map(|g| g.tensors.len()).sum();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(entries as u32).to_le_bytes())?;
    for g in store.groups() {
        for t in &g.tensors {
            w.write_all(&(g.name.len() as u16).to_le_bytes())?;
            w.write_all(g.name.as_bytes())?;
            w.write_all(&[2u8])?;
            for d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&[g.frozen as u8])?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnetError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, NnetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NnetError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnetError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u16()? as usize;
        let group = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NnetError::Checkpoint("group name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(NnetError::Checkpoint(format!("bad frozen flag {b}"))),
        };
        out.push(CheckpointEntry { group, shape, data, frozen });
    }
    if r.pos != bytes.len() {
        return Err(NnetError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

impl<T: Scalar> ParamStore<T> {
    /// Overwrites tensor values and freeze flags from checkpoint entries.
    /// The store must already have the same layout (group names, tensor
    /// counts and shapes); groups absent from the checkpoint are left as-is.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<(), NnetError> {
        let mut i = 0;
        while i < entries.len() {
            let name = &entries[i].group;
            let gi = self
                .group_index(name)
                .ok_or_else(|| NnetError::Checkpoint(format!("unknown group {name}")))?;
            let group = &mut self.groups_mut()[gi];
            let n = entries[i..].iter().take_while(|e| &e.group == name).count();
            if n != group.tensors.len() {
                return Err(NnetError::Checkpoint(format!(
                    "group {name}: {n} tensors in checkpoint, {} expected",
                    group.tensors.len()
                )));
            }
            for (t, e) in group.tensors.iter_mut().zip(&entries[i..i + n]) {
                let shape = t.shape().to_vec();
                if e.shape != shape {
                    return Err(NnetError::Checkpoint(format!("group {name}: shape {:?} vs {shape:?}", e.shape)));
                }
                *t = Tensor::from_vec(shape[0], shape[1], e.data.iter().map(|&v| T::lit(v)).collect());
            }
            group.frozen = entries[i].frozen;
            group.moments = None;
            i += n;
        }
        Ok(())
    }
}
