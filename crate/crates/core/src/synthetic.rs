//! Seeded synthetic scenes for exercising the pipeline without licensed data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_io::{HsiCube, LabelMap};

/// Parameters of a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: u16,
    /// Side of the square blocks that share one class.
    pub block: usize,
    /// Total labeled pixels, spread evenly over the classes.
    pub labeled: usize,
    /// Share of each class's labeled pixels marked in the training mask.
    pub train_share: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 32,
            width: 32,
            bands: 30,
            classes: 4,
            block: 16,
            labeled: 200,
            train_share: 0.5,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    /// Reference labels for `labeled` pixels; every other pixel is 0.
    pub labels: LabelMap,
    /// Training subset of `labels`, usable as a fixed split mask.
    pub train_mask: LabelMap,
    /// Class of every pixel, including unlabeled ones.
    pub ground_truth: LabelMap,
}

/// Gaussian absorption-style bump per class over a shared sloped baseline.
fn prototype(class: u16, classes: u16, bands: usize) -> Vec<f64> {
    let centre = (class as f64 - 0.5) / classes as f64 * bands as f64;
    let width = (bands as f64 / (2.5 * classes as f64)).max(1.0);
    (0..bands)
        .map(|b| {
            let z = (b as f64 - centre) / width;
            0.2 + 0.1 * b as f64 / bands as f64 + 0.6 * (-0.5 * z * z).exp()
        })
        .collect()
}

/// Builds a blocky scene: each block takes one class, every pixel gets its
/// class prototype scaled by a random brightness plus Gaussian noise.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    let (h, w, c, k) = (spec.height, spec.width, spec.bands, spec.classes);
    if h == 0 || w == 0 || c == 0 || k == 0 || spec.block == 0 {
        return Err(Error::Config(
            "synthetic dimensions, classes and block must be >= 1".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise must be finite and >= 0, got {}",
            spec.noise
        )));
    }
    if !(0.0..=1.0).contains(&spec.train_share) {
        return Err(Error::Config(format!(
            "train_share must lie in [0, 1], got {}",
            spec.train_share
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (by, bx) = (h.div_ceil(spec.block), w.div_ceil(spec.block));
    let mut cells: Vec<u16> = (0..by * bx).map(|i| (i % k as usize) as u16 + 1).collect();
    cells.shuffle(&mut rng);
    let truth: Vec<u16> = (0..h * w)
        .map(|p| cells[(p / w / spec.block) * bx + (p % w) / spec.block])
        .collect();

    let protos: Vec<Vec<f64>> = (1..=k).map(|cl| prototype(cl, k, c)).collect();
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w * c);
    for &cl in &truth {
        let gain: f64 = rng.gen_range(0.9..1.1);
        for &v in &protos[cl as usize - 1] {
            data.push((gain * v + normal.sample(&mut rng)) as f32);
        }
    }

    let mut labels = vec![0u16; h * w];
    let mut mask = vec![0u16; h * w];
    for cl in 1..=k {
        let mut members: Vec<usize> = (0..h * w).filter(|&p| truth[p] == cl).collect();
        members.shuffle(&mut rng);
        let quota = spec.labeled / k as usize + usize::from(((cl - 1) as usize) < spec.labeled % k as usize);
        if members.len() < quota {
            return Err(Error::Config(format!(
                "class {cl} covers {} pixels, fewer than the {quota} requested labels",
                members.len()
            )));
        }
        let n_train = (spec.train_share * quota as f64).round() as usize;
        for (i, &p) in members[..quota].iter().enumerate() {
            labels[p] = cl;
            if i < n_train {
                mask[p] = 1;
            }
        }
    }

    Ok(SyntheticScene {
        cube: HsiCube::new(h, w, c, data)?,
        labels: LabelMap::new(h, w, k, labels)?,
        train_mask: LabelMap::new(h, w, 1, mask)?,
        ground_truth: LabelMap::new(h, w, k, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_count_and_determinism() {
        let spec = SyntheticSpec::default();
        let a = make_synthetic(&spec).unwrap();
        assert_eq!(a.labels.labeled_count(), 200);
        assert_eq!(a.train_mask.labeled_count(), 100);
        assert_eq!(a, make_synthetic(&spec).unwrap());
        for cl in 1..=4 {
            assert_eq!(a.labels.labels().iter().filter(|&&l| l == cl).count(), 50);
        }
    }

    #[test]
    fn too_many_labels_is_config_error() {
        let spec = SyntheticSpec {
            height: 4,
            width: 4,
            labeled: 100,
            ..SyntheticSpec::default()
        };
        assert!(matches!(make_synthetic(&spec), Err(Error::Config(_))));
    }
}
