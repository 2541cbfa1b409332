use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatchSet;
use crate::error::{Error, Result};
use crate::hsi_io::LabelMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    /// Share of each class's training samples moved to validation.
    pub val_fraction: f64,
    /// Share of each class assigned to train ∪ val when no training mask is
    /// supplied; ignored otherwise.
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            val_fraction: 0.3,
            train_fraction: 0.5,
        }
    }
}

/// Partition tag for every sample of a [`PatchSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tags: Vec<Partition>,
}

impl SplitAssignment {
    pub fn indices(&self, part: Partition) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == part)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.tags.iter().filter(|&&t| t == part).count()
    }
}

/// Stratified, seeded partition of `set`.
///
/// With `train_mask`, pixels marked non-zero form train ∪ val and every
/// other sample is test. Without it, `train_fraction` of each class is drawn
/// at random for train ∪ val. In both cases `val_fraction` of each class's
/// training samples (rounded) become validation; classes with fewer than two
/// training samples stay entirely in train.
pub fn split(set: &PatchSet, spec: &SplitSpec, train_mask: Option<&LabelMap>) -> Result<SplitAssignment> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in (0, 1), got {}",
            spec.val_fraction
        )));
    }
    if train_mask.is_none() && !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1], got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tags = vec![Partition::Test; set.len()];
    let max_class = set.labels.iter().copied().max().unwrap_or(0);

    for class in 1..=max_class {
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut train: Vec<usize> = match train_mask {
            Some(mask) => {
                let mut t = Vec::new();
                for &i in &members {
                    let (y, x) = set.coords[i];
                    if y >= mask.height() || x >= mask.width() {
                        return Err(Error::dim("split mask", &[mask.height(), mask.width()], &[y, x]));
                    }
                    if mask.get(y, x) != 0 {
                        t.push(i);
                    }
                }
                t.shuffle(&mut rng);
                t
            }
            None => {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                let n_train = ((spec.train_fraction * members.len() as f64).round() as usize).clamp(1, members.len());
                shuffled.truncate(n_train);
                shuffled
            }
        };
        if train.len() < 2 {
            if !train.is_empty() {
                log::warn!(
                    "class {class} has {} training sample(s); no validation split",
                    train.len()
                );
            }
            for &i in &train {
                tags[i] = Partition::Train;
            }
            continue;
        }
        let n_val = ((spec.val_fraction * train.len() as f64).round() as usize).min(train.len() - 1);
        let val: Vec<usize> = train.drain(..n_val).collect();
        for i in train {
            tags[i] = Partition::Train;
        }
        for i in val {
            tags[i] = Partition::Val;
        }
    }
    Ok(SplitAssignment { tags })
}
