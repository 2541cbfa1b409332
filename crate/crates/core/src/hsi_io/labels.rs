use std::fs;
use std::path::Path;

use super::bytes::{dim_u32, put_u32, ByteReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LBL1";

/// Per-pixel class ids (`0` = unlabeled) with a declared class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u16,
    labels: Vec<u16>,
    class_names: Option<Vec<String>>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: u16, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::dim("labels", &[height, width], &[labels.len()]));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l > num_classes) {
            return Err(Error::Validation(format!(
                "label {l} at pixel {i} exceeds declared class count {num_classes}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            labels,
            class_names: None,
        })
    }

    /// Attaches names for classes `1..=K`, in order.
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes as usize {
            return Err(Error::Validation(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

pub fn encode_labels(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.labels.len() * 2);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, dim_u32(map.height, "height")?);
    put_u32(&mut out, dim_u32(map.width, "width")?);
    put_u32(&mut out, map.num_classes as u32);
    match &map.class_names {
        None => put_u32(&mut out, 0),
        Some(names) => {
            put_u32(&mut out, names.len() as u32);
            for n in names {
                put_u32(&mut out, dim_u32(n.len(), "class name length")?);
                out.extend_from_slice(n.as_bytes());
            }
        }
    }
    for l in &map.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(buf: &[u8]) -> Result<LabelMap> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let k_at = r.pos();
    let k = r.u32()?;
    if h == 0 || w == 0 {
        return Err(Error::Format {
            offset: 4,
            reason: format!("zero dimension in header {h}x{w}"),
        });
    }
    let k = u16::try_from(k).map_err(|_| Error::Format {
        offset: k_at,
        reason: format!("class count {k} exceeds u16"),
    })?;
    let names_at = r.pos();
    let name_count = r.u32()?;
    if name_count != 0 && name_count != k as u32 {
        return Err(Error::Format {
            offset: names_at,
            reason: format!("{name_count} class names for {k} classes"),
        });
    }
    let mut names = Vec::with_capacity(name_count as usize);
    for _ in 0..name_count {
        let len = r.u32()? as usize;
        let at = r.pos();
        let raw = r.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|e| Error::Format {
            offset: at,
            reason: format!("class name is not UTF-8: {e}"),
        })?;
        names.push(s.to_owned());
    }
    let n = h.checked_mul(w).ok_or_else(|| Error::Format {
        offset: 4,
        reason: "declared size overflows".into(),
    })?;
    r.expect_total(r.pos() + 2 * n as u64)?;
    let raw = r.take(2 * n)?;
    let labels = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    let map = LabelMap::new(h, w, k, labels)?;
    if name_count > 0 {
        map.with_class_names(names)
    } else {
        Ok(map)
    }
}

pub fn write_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_labels(map)?)?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_above_class_count_is_rejected() {
        let err = LabelMap::new(1, 3, 2, vec![0, 1, 3]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        // the same violation arriving through a file
        let ok = LabelMap::new(1, 3, 3, vec![0, 1, 3]).unwrap();
        let mut bytes = encode_labels(&ok).unwrap();
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_labels(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn all_zero_map_is_valid() {
        let m = LabelMap::new(3, 3, 4, vec![0; 9]).unwrap();
        assert_eq!(m.labeled_count(), 0);
        assert_eq!(decode_labels(&encode_labels(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn names_round_trip() {
        let m = LabelMap::new(3, 3, 2, vec![0, 1, 2, 2, 1, 0, 0, 0, 1])
            .unwrap()
            .with_class_names(vec!["grass".into(), "road".into()])
            .unwrap();
        let bytes = encode_labels(&m).unwrap();
        assert_eq!(decode_labels(&bytes).unwrap(), m);
        assert_eq!(encode_labels(&decode_labels(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn size_disagreement_is_rejected() {
        let m = LabelMap::new(2, 2, 1, vec![1, 0, 0, 1]).unwrap();
        let mut bytes = encode_labels(&m).unwrap();
        bytes.pop();
        assert!(matches!(decode_labels(&bytes), Err(Error::Truncated { .. })));
        let mut bytes = encode_labels(&m).unwrap();
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_labels(&bytes), Err(Error::Format { .. })));
    }
}
