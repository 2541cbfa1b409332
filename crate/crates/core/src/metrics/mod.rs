//! Confusion-matrix accuracy measures, scene prediction and ablation tables.

mod ablation;
mod confusion;
mod predict;
mod report;

pub use ablation::{ablation_suite, AblationRow, ABLATION_VARIANTS};
pub use confusion::{aa, confusion, kappa, oa, AverageAccuracy, ConfusionMatrix};
pub use predict::{argmax_class, classify, predict_scene, SceneMode, ScenePrediction, Timing};
pub use report::EvalReport;
