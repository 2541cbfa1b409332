use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts; rows are reference classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// Count for reference class `r` and predicted class `p`, both 1-based.
    pub fn get(&self, r: usize, p: usize) -> u64 {
        self.counts[(r - 1) * self.k + (p - 1)]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + j]).sum()
    }

    /// Recall of each class; `None` for classes absent from the reference.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.counts[i * self.k + i] as f64 / n as f64)
            })
            .collect()
    }
}

/// Tallies `(reference, prediction)` pairs with class ids in `1..=k`.
pub fn confusion(preds: &[u16], refs: &[u16], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != refs.len() {
        return Err(Error::dim("confusion", &[preds.len()], &[refs.len()]));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (i, (&p, &r)) in preds.iter().zip(refs).enumerate() {
        for (what, id) in [("prediction", p), ("reference", r)] {
            if id == 0 || id as usize > k {
                return Err(Error::Data {
                    index: i,
                    reason: format!("{what} {id} outside 1..={k}"),
                });
            }
        }
        cm.counts[(r as usize - 1) * k + (p as usize - 1)] += 1;
    }
    Ok(cm)
}

fn require_samples(cm: &ConfusionMatrix, what: &str) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::UndefinedMetric(format!("{what} of an empty confusion matrix"))),
        n => Ok(n),
    }
}

/// `trace / N`
pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = require_samples(cm, "OA")?;
    Ok(cm.trace() as f64 / n as f64)
}

/// Mean per-class recall together with the classes left out of the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageAccuracy {
    pub value: f64,
    /// 1-based ids of classes with no reference samples.
    pub excluded: Vec<u16>,
}

/// Mean of `counts[i][i] / rowsum[i]` over classes with at least one reference sample.
pub fn aa(cm: &ConfusionMatrix) -> Result<AverageAccuracy> {
    let per = cm.per_class();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetric("AA with every class row empty".into()));
    }
    let excluded = per
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(i, _)| i as u16 + 1)
        .collect();
    Ok(AverageAccuracy {
        value: present.iter().sum::<f64>() / present.len() as f64,
        excluded,
    })
}

/// Cohen's kappa `(p_o − p_e) / (1 − p_e)`.
///
/// When chance agreement is total (`p_e = 1`) the result is `1.0` for
/// perfect agreement and undefined otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = require_samples(cm, "kappa")?;
    let chance: u128 = (0..cm.k).map(|i| cm.row_sum(i) as u128 * cm.col_sum(i) as u128).sum();
    let n2 = n as u128 * n as u128;
    let trace = cm.trace();
    if chance == n2 {
        return if trace == n {
            Ok(1.0)
        } else {
            Err(Error::UndefinedMetric("kappa with chance agreement 1".into()))
        };
    }
    let po = trace as f64 / n as f64;
    let pe = chance as f64 / n2 as f64;
    Ok((po - pe) / (1.0 - pe))
}
