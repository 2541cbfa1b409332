use std::fs;
use std::path::Path;

use super::bytes::{dim_u32, put_f32s, put_u32, ByteReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSI1";
const HEADER_LEN: u64 = 16;

/// `H × W × C` reflectance cube stored pixel-interleaved:
/// element `(y, x, b)` lives at `(y·W + x)·C + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Validation(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::dim("cube", &[height, width, bands], &[data.len()]));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at element {i}")));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Spectrum of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.bands;
        &self.data[i..i + self.bands]
    }

    pub fn get(&self, y: usize, x: usize, band: usize) -> f32 {
        self.data[(y * self.width + x) * self.bands + band]
    }
}

pub fn encode_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + cube.data.len() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, dim_u32(cube.height, "height")?);
    put_u32(&mut out, dim_u32(cube.width, "width")?);
    put_u32(&mut out, dim_u32(cube.bands, "bands")?);
    put_f32s(&mut out, &cube.data);
    Ok(out)
}

pub fn decode_cube(buf: &[u8]) -> Result<HsiCube> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Format {
            offset: 4,
            reason: format!("zero dimension in header {h}x{w}x{c}"),
        });
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format {
            offset: 4,
            reason: "declared size overflows".into(),
        })?;
    r.expect_total(HEADER_LEN + 4 * n as u64)?;
    let data = r.f32_payload(n)?;
    HsiCube::new(h, w, c, data)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cube(cube)?)?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&fs::read(path)?)
}
