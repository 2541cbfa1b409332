use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::bytes::{dim_u32, put_f32s, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CKP1";

/// Bookkeeping stored next to the parameter blob.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub val_accuracy: f64,
    /// Set when Adam moments are stored under `adam.m.*` / `adam.v.*`.
    pub has_optimizer_state: bool,
}

/// Named float32 tensors plus metadata.
///
/// Layout after the `CKP1` magic:
///
/// ```text
/// u32 epoch | f64 val_accuracy | u32 flags | u32 entry_count
/// entry_count × { u32 name_len | name | u32 rank | rank × u32 dim | u64 offset }
/// u64 blob_len | blob (f32 LE)
/// ```
///
/// Offsets are byte offsets into the blob.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: IndexMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint {
            meta,
            tensors: IndexMap::new(),
        }
    }

    /// Adds a tensor, refusing duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Checkpoint {
                name,
                reason: "duplicate parameter name".into(),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, ckpt.meta.epoch);
    out.extend_from_slice(&ckpt.meta.val_accuracy.to_le_bytes());
    put_u32(&mut out, ckpt.meta.has_optimizer_state as u32);
    put_u32(&mut out, dim_u32(ckpt.tensors.len(), "entry count")?);
    let mut offset = 0u64;
    for (name, t) in &ckpt.tensors {
        put_u32(&mut out, dim_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, dim_u32(t.rank(), "rank")?);
        for &d in t.shape() {
            put_u32(&mut out, dim_u32(d, "extent")?);
        }
        put_u64(&mut out, offset);
        offset += 4 * t.numel() as u64;
    }
    put_u64(&mut out, offset);
    for t in ckpt.tensors.values() {
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    let epoch = r.u32()?;
    let val_accuracy = r.f64()?;
    let flags = r.u32()?;
    let count = r.u32()? as usize;

    struct Entry {
        name: String,
        shape: Vec<usize>,
        offset: u64,
    }
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let at = r.pos();
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format {
                offset: at,
                reason: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()?;
        if shape.contains(&0) {
            return Err(Error::Checkpoint {
                name,
                reason: format!("zero extent in shape {shape:?}"),
            });
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint {
                name,
                reason: "duplicate parameter name in manifest".into(),
            });
        }
        entries.push(Entry { name, shape, offset });
    }
    let blob_len = r.u64()?;
    let blob_start = r.pos();
    r.expect_total(blob_start + blob_len)?;

    // bounds and overlap, checked before any payload is decoded
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(entries.len());
    for e in &entries {
        let bytes = 4 * e.shape.iter().product::<usize>() as u64;
        let end = e.offset.checked_add(bytes);
        match end {
            Some(end) if end <= blob_len && e.offset % 4 == 0 => spans.push((e.offset, end, &e.name)),
            _ => {
                return Err(Error::Checkpoint {
                    name: e.name.clone(),
                    reason: format!(
                        "corrupt manifest: offset {} + {} bytes lies outside blob of {} bytes",
                        e.offset, bytes, blob_len
                    ),
                })
            }
        }
    }
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Checkpoint {
                name: pair[1].2.to_owned(),
                reason: format!("corrupt manifest: overlaps '{}'", pair[0].2),
            });
        }
    }

    let mut tensors = IndexMap::with_capacity(entries.len());
    for e in entries {
        let n: usize = e.shape.iter().product();
        let mut sub = ByteReader::new(buf);
        sub.take((blob_start + e.offset) as usize)?;
        let data = sub.f32_payload(n)?;
        tensors.insert(e.name, Tensor::new(e.shape, data)?);
    }
    Ok(Checkpoint {
        meta: CheckpointMeta {
            epoch,
            val_accuracy,
            has_optimizer_state: flags & 1 == 1,
        },
        tensors,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointMeta {
            epoch: 7,
            val_accuracy: 0.875,
            has_optimizer_state: false,
        });
        c.insert("a.w", Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5)).unwrap();
        c.insert("a.b", Tensor::from_fn(&[3], |i| i as f32 * 1e-3)).unwrap();
        c
    }

    #[test]
    fn duplicate_names_are_refused() {
        let mut c = sample();
        assert!(matches!(
            c.insert("a.w", Tensor::zeros(&[1])),
            Err(Error::Checkpoint { name, .. }) if name == "a.w"
        ));
    }

    #[test]
    fn offset_past_blob_is_corrupt_manifest() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        // first entry: header is 4+4+8+4+4 = 24 bytes, then u32 len, "a.w", u32 rank, 2 dims
        let off_at = 24 + 4 + 3 + 4 + 8;
        bytes[off_at..off_at + 8].copy_from_slice(&1000u64.to_le_bytes());
        match decode_checkpoint(&bytes) {
            Err(Error::Checkpoint { name, reason }) => {
                assert_eq!(name, "a.w");
                assert!(reason.contains("corrupt manifest"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_entries_are_corrupt_manifest() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        // point the second entry at the start of the blob
        let second = 24 + (4 + 3 + 4 + 8 + 8) + 4 + 3 + 4 + 4;
        bytes[second..second + 8].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn meta_survives() {
        let c = sample();
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta.val_accuracy, 0.875);
    }
}
