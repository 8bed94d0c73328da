//! Binary parameter blob: `PLPB`, u16 version, u64 value count, then
//! little-endian f32 values in store order.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Result};

pub const BLOB_MAGIC: [u8; 4] = *b"PLPB";
pub const BLOB_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

/// Location of one named parameter inside the blob payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Serialises every parameter value and returns the name-to-offset table.
pub fn write_param_blob(store: &ParamStore<f32>) -> (Vec<u8>, Vec<ParamEntry>) {
    let total = store.numel();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * total);
    bytes.extend_from_slice(&BLOB_MAGIC);
    bytes.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(total as u64).to_le_bytes());
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        for v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ParamEntry { name: p.name.clone(), shape: p.value.shape.clone(), offset, len: p.value.len() });
        offset += p.value.len();
    }
    (bytes, entries)
}

/// Decodes the flat f32 payload of a blob.
pub fn read_param_blob(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() < 4 || bytes[..4] != BLOB_MAGIC {
        return Err(NnError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(NnError::TruncatedFile);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BLOB_VERSION {
        return Err(NnError::BadVersion(version));
    }
    let count = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count.saturating_mul(4) {
        return Err(NnError::TruncatedFile);
    }
    if payload.len() != count * 4 {
        return Err(NnError::ShapeMismatch(format!("blob declares {count} values but carries {} bytes", payload.len())));
    }
    Ok(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

impl ParamStore<f32> {
    /// Overwrites parameter values from a decoded blob using its offset table.
    /// Every store parameter must be present with an identical shape.
    pub fn assign_from_blob(&mut self, entries: &[ParamEntry], payload: &[f32]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(NnError::ShapeMismatch(format!("table has {} params, model has {}", entries.len(), self.len())));
        }
        for e in entries {
            let id = self.find(&e.name)?;
            let p = self.get_mut(id);
            if p.value.shape != e.shape || e.len != p.value.len() {
                return Err(NnError::ShapeMismatch(format!("{}: stored {:?}, model {:?}", e.name, e.shape, p.value.shape)));
            }
            let src = payload.get(e.offset..e.offset + e.len).ok_or(NnError::TruncatedFile)?;
            p.value.data.copy_from_slice(src);
        }
        Ok(())
    }
}
