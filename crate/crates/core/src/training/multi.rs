use serde::{Deserialize, Serialize};

use super::{run_pool, train, TrainSchedule};
use crate::error::{Error, Result};
use crate::metrics::{classify, confusion, EvalReport};
use crate::model::ModelConfig;
use crate::preprocess::{Partition, PatchSet, SplitAssignment};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_oa: f64,
    pub test: EvalReport,
}

/// Per-run test metrics with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub runs: Vec<RunResult>,
    pub mean: MetricTriple,
    /// `n − 1` normaliser; all zeros when only one run exists.
    pub std: MetricTriple,
    /// False when fewer than two runs make the deviation undefined.
    pub std_defined: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates completed runs.
pub fn summarize(runs: Vec<RunResult>) -> Result<RunStats> {
    if runs.is_empty() {
        return Err(Error::Contract("summary of zero runs".into()));
    }
    let pick = |f: fn(&EvalReport) -> f64| mean_std(&runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
    let (oa_m, oa_s) = pick(|r| r.oa);
    let (aa_m, aa_s) = pick(|r| r.aa);
    let (k_m, k_s) = pick(|r| r.kappa);
    Ok(RunStats {
        std_defined: runs.len() > 1,
        runs,
        mean: MetricTriple {
            oa: oa_m,
            aa: aa_m,
            kappa: k_m,
        },
        std: MetricTriple {
            oa: oa_s,
            aa: aa_s,
            kappa: k_s,
        },
    })
}

/// Trains one model per seed on the same split and evaluates each on its
/// test partition. Runs execute on up to `workers` threads; results are
/// ordered by seed position.
pub fn multi_run(
    cfg: &ModelConfig,
    set: &PatchSet,
    split: &SplitAssignment,
    schedule: &TrainSchedule,
    seeds: &[u64],
    workers: usize,
) -> Result<RunStats> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let train_idx = split.indices(Partition::Train);
    let val_idx = split.indices(Partition::Val);
    let test_idx = split.indices(Partition::Test);
    let runs = run_pool(seeds.len(), workers, |i| {
        let schedule = TrainSchedule {
            seed: seeds[i],
            ..schedule.clone()
        };
        let outcome = train(cfg, set, &train_idx, &val_idx, &schedule)?;
        let preds = classify(&outcome.params, cfg, set, &test_idx, schedule.batch_size)?;
        let cm = confusion(&preds, &set.labels_of(&test_idx), cfg.num_classes)?;
        Ok(RunResult {
            seed: seeds[i],
            best_epoch: outcome.best_epoch,
            best_val_oa: outcome.best_val_oa,
            test: EvalReport::from_confusion(&cm)?,
        })
    })?;
    summarize(runs)
}
