use serde::{Deserialize, Serialize};

use super::{aa, kappa, oa, ConfusionMatrix, Timing};
use crate::error::Result;

/// Accuracy summary for one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class; `null` where the class has no reference samples.
    pub per_class: Vec<Option<f64>>,
    /// Classes left out of the AA mean.
    pub aa_excluded: Vec<u16>,
    pub samples: u64,
    pub confusion: Vec<Vec<u64>>,
    /// Free-form echo of the configuration that produced the report.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
    /// Wall-clock measurements; omitted from serialised reports when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<Timing>,
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let average = aa(cm)?;
        Ok(EvalReport {
            oa: oa(cm)?,
            aa: average.value,
            kappa: kappa(cm)?,
            per_class: cm.per_class(),
            aa_excluded: average.excluded,
            samples: cm.total(),
            confusion: cm.rows(),
            config: serde_json::Value::Null,
            runtime: None,
        })
    }
}
