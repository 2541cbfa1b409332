//! Multiscale 3D-convolutional feature extraction, transformer encoding and
//! gated token mixing, assembled into a patch classifier.

mod check;
mod config;
mod count;
mod forward;
mod params;

pub use check::{gradcheck_model, MODEL_GRADCHECK_STEP};
pub use config::ModelConfig;
pub use count::{count_flops, count_params, FlopCount};
pub use forward::{
    forward, head_forward, mamba_mix, msfe_forward, predict_logits, tokenize, vit_block, vit_encoder, Mode,
};
pub use params::{layout, Bound, ModelParams, ParamInit, BRANCHES};
