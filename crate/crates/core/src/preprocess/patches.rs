use crate::error::{Error, Result};
use crate::hsi_io::{HsiCube, LabelMap};
use crate::tensor::Tensor;

/// One `S × S × B` patch per labeled pixel, in row-major scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub bands: usize,
    /// `N · S · S · B` values, patch-major.
    pub patches: Vec<f32>,
    pub labels: Vec<u16>,
    /// `(y, x)` of each patch centre.
    pub coords: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.bands
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let n = self.patch_len();
        &self.patches[i * n..(i + 1) * n]
    }

    /// Stacks the selected patches into `[n, S, S, B]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.patch_len());
        for &i in indices {
            data.extend_from_slice(self.patch(i));
        }
        Tensor::new(vec![indices.len(), self.patch_size, self.patch_size, self.bands], data).expect("batch shape")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<u16> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Copies the zero-padded `S × S` neighbourhood of `(y, x)` into `out`.
pub fn write_patch(cube: &HsiCube, y: usize, x: usize, size: usize, out: &mut [f32]) {
    let b = cube.bands();
    let half = (size / 2) as isize;
    debug_assert_eq!(out.len(), size * size * b);
    for dy in 0..size {
        let sy = y as isize + dy as isize - half;
        for dx in 0..size {
            let sx = x as isize + dx as isize - half;
            let dst = &mut out[(dy * size + dx) * b..(dy * size + dx + 1) * b];
            if sy < 0 || sx < 0 || sy >= cube.height() as isize || sx >= cube.width() as isize {
                dst.fill(0.0);
            } else {
                dst.copy_from_slice(cube.pixel(sy as usize, sx as usize));
            }
        }
    }
}

/// Extracts a patch centred on every labeled pixel, zero padding at borders.
pub fn extract_patches(cube: &HsiCube, labels: &LabelMap, size: usize) -> Result<PatchSet> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size must be odd and >= 3, got {size}")));
    }
    if labels.height() != cube.height() || labels.width() != cube.width() {
        return Err(Error::dim(
            "extract_patches",
            &[cube.height(), cube.width()],
            &[labels.height(), labels.width()],
        ));
    }
    let n = labels.labeled_count();
    let plen = size * size * cube.bands();
    let mut set = PatchSet {
        patch_size: size,
        bands: cube.bands(),
        patches: vec![0.0; n * plen],
        labels: Vec::with_capacity(n),
        coords: Vec::with_capacity(n),
    };
    let mut i = 0;
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            let l = labels.get(y, x);
            if l == 0 {
                continue;
            }
            write_patch(cube, y, x, size, &mut set.patches[i * plen..(i + 1) * plen]);
            set.labels.push(l);
            set.coords.push((y, x));
            i += 1;
        }
    }
    Ok(set)
}
