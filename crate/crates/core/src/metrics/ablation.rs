use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{count_flops, count_params, ModelConfig};
use crate::preprocess::{PatchSet, SplitAssignment};
use crate::training::{multi_run, RunStats, TrainSchedule};

/// `(name, use_msfe, use_vit, use_mamba)` for the four compared variants.
pub const ABLATION_VARIANTS: [(&str, bool, bool, bool); 4] = [
    ("full", true, true, true),
    ("without_msfe", false, true, true),
    ("without_vit", true, false, true),
    ("without_mamba", true, true, false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_msfe: bool,
    pub use_vit: bool,
    pub use_mamba: bool,
    pub params: usize,
    pub flops: u64,
    pub macs: u64,
    pub stats: RunStats,
}

/// Trains and evaluates every variant under identical seeds and data.
pub fn ablation_suite(
    base: &ModelConfig,
    set: &PatchSet,
    split: &SplitAssignment,
    schedule: &TrainSchedule,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<AblationRow>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&(name, msfe, vit, mamba)| {
            let cfg = ModelConfig {
                use_msfe: msfe,
                use_vit: vit,
                use_mamba: mamba,
                ..base.clone()
            };
            let cost = count_flops(&cfg);
            Ok(AblationRow {
                variant: name.to_string(),
                use_msfe: msfe,
                use_vit: vit,
                use_mamba: mamba,
                params: count_params(&cfg),
                flops: cost.flops,
                macs: cost.macs,
                stats: multi_run(&cfg, set, split, schedule, seeds, workers)?,
            })
        })
        .collect()
}
