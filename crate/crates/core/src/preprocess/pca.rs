use crate::error::{Error, Result};
use crate::hsi_io::{Checkpoint, HsiCube};
use crate::tensor::Tensor;

use super::jacobi::symmetric_eigen;

/// Fitted principal-component projection from `C` bands to `B` components.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    /// Per-band mean, length `C`.
    pub mean: Vec<f64>,
    /// Row-major `C × B`; column `j` is the `j`-th principal direction.
    pub components: Vec<f64>,
    /// Variance along each retained direction, non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn input_bands(&self) -> usize {
        self.mean.len()
    }

    pub fn retained(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `componentsᵀ · (pixel − mean)`
    pub fn project(&self, pixel: &[f32], out: &mut [f32]) {
        let b = self.retained();
        let mut acc = vec![0.0f64; b];
        for (c, &v) in pixel.iter().enumerate() {
            let centred = v as f64 - self.mean[c];
            let row = &self.components[c * b..(c + 1) * b];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += w * centred;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
    }

    /// Maps a reduced cube back to the original band space.
    pub fn reconstruct(&self, reduced: &HsiCube) -> Result<HsiCube> {
        let b = self.retained();
        let c = self.input_bands();
        if reduced.bands() != b {
            return Err(Error::dim("pca reconstruct", &[b], &[reduced.bands()]));
        }
        let mut data = Vec::with_capacity(reduced.pixels() * c);
        for p in reduced.data().chunks_exact(b) {
            for band in 0..c {
                let row = &self.components[band * b..(band + 1) * b];
                let v: f64 = row.iter().zip(p).map(|(&w, &z)| w * z as f64).sum();
                data.push((v + self.mean[band]) as f32);
            }
        }
        HsiCube::new(reduced.height(), reduced.width(), c, data)
    }

    /// Stores the model under `pca.mean`, `pca.components`, `pca.eigenvalues`.
    pub fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        ckpt.insert("pca.mean", Tensor::new(vec![self.input_bands()], to32(&self.mean))?)?;
        ckpt.insert(
            "pca.components",
            Tensor::new(vec![self.input_bands(), self.retained()], to32(&self.components))?,
        )?;
        ckpt.insert(
            "pca.eigenvalues",
            Tensor::new(vec![self.retained()], to32(&self.eigenvalues))?,
        )?;
        Ok(())
    }

    pub fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ckpt.get(name).ok_or_else(|| Error::Checkpoint {
                name: name.into(),
                reason: "missing".into(),
            })
        };
        let mean = get("pca.mean")?;
        let comps = get("pca.components")?;
        let eig = get("pca.eigenvalues")?;
        let c = mean.numel();
        let b = eig.numel();
        if comps.shape() != [c, b] {
            return Err(Error::Checkpoint {
                name: "pca.components".into(),
                reason: format!("shape {:?}, expected [{c}, {b}]", comps.shape()),
            });
        }
        let to64 = |t: &Tensor<f32>| t.data().iter().map(|&x| x as f64).collect();
        Ok(PcaModel {
            mean: to64(mean),
            components: to64(comps),
            eigenvalues: to64(eig),
        })
    }
}

/// Fits PCA on every `sample_stride`-th pixel (flat scan order).
///
/// The covariance uses the `n − 1` normaliser. Each component is signed so
/// that its largest-magnitude coordinate is positive.
pub fn pca_fit(cube: &HsiCube, retain: usize, sample_stride: usize) -> Result<PcaModel> {
    let c = cube.bands();
    if retain == 0 || retain > c {
        return Err(Error::Config(format!(
            "cannot retain {retain} components from {c} bands"
        )));
    }
    if sample_stride == 0 {
        return Err(Error::Config("sample_stride must be >= 1".into()));
    }
    let samples: Vec<&[f32]> = cube.data().chunks_exact(c).step_by(sample_stride).collect();
    let n = samples.len();
    let mut mean = vec![0.0f64; c];
    for s in &samples {
        for (m, &v) in mean.iter_mut().zip(*s) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; c * c];
    let mut centred = vec![0.0f64; c];
    for s in &samples {
        for ((d, &v), &m) in centred.iter_mut().zip(*s).zip(&mean) {
            *d = v as f64 - m;
        }
        for i in 0..c {
            let di = centred[i];
            let row = &mut cov[i * c..(i + 1) * c];
            for j in i..c {
                row[j] += di * centred[j];
            }
        }
    }
    let norm = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for i in 0..c {
        for j in i..c {
            let v = cov[i * c + j] / norm;
            cov[i * c + j] = v;
            cov[j * c + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, c)?;
    let mut components = vec![0.0; c * retain];
    for j in 0..retain {
        let mut pivot = 0;
        for r in 1..c {
            if vectors[r * c + j].abs() > vectors[pivot * c + j].abs() {
                pivot = r;
            }
        }
        let sign = if vectors[pivot * c + j] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..c {
            components[r * retain + j] = sign * vectors[r * c + j];
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: values[..retain].to_vec(),
    })
}

/// Projects every pixel, preserving `H` and `W`.
pub fn pca_apply(cube: &HsiCube, model: &PcaModel) -> Result<HsiCube> {
    if cube.bands() != model.input_bands() {
        return Err(Error::dim("pca_apply", &[cube.bands()], &[model.input_bands()]));
    }
    let b = model.retained();
    let mut data = vec![0.0f32; cube.pixels() * b];
    for (px, out) in cube.data().chunks_exact(cube.bands()).zip(data.chunks_exact_mut(b)) {
        model.project(px, out);
    }
    HsiCube::new(cube.height(), cube.width(), b, data)
}
