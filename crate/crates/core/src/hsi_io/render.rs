use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::error::{Error, Result};

/// Label → RGB colour. Label 0 always renders black.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Palette(pub BTreeMap<u16, [u8; 3]>);

impl Palette {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Evenly spaced hues for classes `1..=k`.
    pub fn generated(k: u16) -> Self {
        let mut map = BTreeMap::new();
        for label in 1..=k {
            let h = (label - 1) as f64 / k.max(1) as f64 * 6.0;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            let (r, g, b) = match h as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            let q = |v: f64| (v * 255.0).round() as u8;
            map.insert(label, [q(r), q(g), q(b)]);
        }
        Palette(map)
    }
}

/// Binary P6 pixmap with one pixel per map cell.
pub fn render_map(map: &LabelMap, palette: &Palette) -> Result<Vec<u8>> {
    let header = format!("P6\n{} {}\n255\n", map.width(), map.height());
    let mut out = Vec::with_capacity(header.len() + 3 * map.labels().len());
    out.extend_from_slice(header.as_bytes());
    for &l in map.labels() {
        if l == 0 {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            let rgb = palette.0.get(&l).ok_or(Error::Palette(l))?;
            out.extend_from_slice(rgb);
        }
    }
    Ok(out)
}
