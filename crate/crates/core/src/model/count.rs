use serde::{Deserialize, Serialize};

use super::{ModelConfig, BRANCHES};

/// Per-sample forward cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub flops: u64,
    pub macs: u64,
}

/// Exact trainable element count, from closed-form per-block formulas.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (d, f, b) = (cfg.embed_dim, cfg.ms_filters, cfg.input_bands);
    let mut n = 0;
    if cfg.use_msfe {
        for (_, k) in BRANCHES {
            let taps: usize = k.iter().product();
            n += taps * f + f + taps * f * f + f;
        }
    }
    let fuse_in = if cfg.use_msfe { 3 * f * b } else { b };
    n += fuse_in * d + d;
    n += cfg.tokens() * d;
    if cfg.use_vit {
        let r = cfg.mlp_ratio;
        n += cfg.encoder_layers * (4 * d + 4 * (d * d + d) + (d * r * d + r * d) + (r * d * d + d));
    }
    if cfg.use_mamba {
        let (e, k) = (cfg.expanded_dim(), cfg.mamba_kernel);
        n += d * 2 * e + k * e + e + e * d;
    }
    let (h, k) = (cfg.head_hidden, cfg.num_classes);
    n + d * h + h + h * k + k
}

/// Single-sample, eval-mode forward cost.
///
/// MACs count every multiply-accumulate in matmuls and convolutions, with
/// convolutions charged the full kernel at every output position. FLOPs are
/// `2·MACs` plus pointwise work: one per output element for bias adds,
/// activations, residual adds, scaling, gating and positional adds; four per
/// element for layer norm; three per score for softmax; one per input
/// element for mean pooling.
pub fn count_flops(cfg: &ModelConfig) -> FlopCount {
    let t = cfg.tokens() as u64;
    let (d, f, b) = (cfg.embed_dim as u64, cfg.ms_filters as u64, cfg.input_bands as u64);
    let mut macs = 0u64;
    let mut pointwise = 0u64;
    if cfg.use_msfe {
        let positions = t * b;
        for (_, k) in BRANCHES {
            let taps = k.iter().product::<usize>() as u64;
            macs += positions * taps * f + positions * taps * f * f;
            pointwise += 2 * (2 * positions * f);
        }
        macs += t * (3 * f * b) * d;
    } else {
        macs += t * b * d;
    }
    pointwise += 2 * t * d; // fuse bias + relu
    pointwise += t * d; // positional add
    if cfg.use_vit {
        let h = cfg.heads as u64;
        let hidden = cfg.mlp_ratio as u64 * d;
        let per_layer_macs = 4 * t * d * d + 2 * t * t * d + t * d * hidden + t * hidden * d;
        let per_layer_pw = 4 * t * d // ln1
            + 4 * t * d // q,k,v,o biases
            + h * t * t // score scaling
            + 3 * h * t * t // softmax
            + t * d // attention residual
            + 4 * t * d // ln2
            + 2 * t * hidden // mlp1 bias + gelu
            + t * d // mlp2 bias
            + t * d; // mlp residual
        macs += cfg.encoder_layers as u64 * per_layer_macs;
        pointwise += cfg.encoder_layers as u64 * per_layer_pw;
    }
    if cfg.use_mamba {
        let (e, k) = (cfg.expanded_dim() as u64, cfg.mamba_kernel as u64);
        macs += t * d * 2 * e + t * e * k + t * e * d;
        pointwise += t * e // conv bias
            + 3 * t * e // gelu, sigmoid, gating product
            + t * d; // residual
    }
    let (hh, kk) = (cfg.head_hidden as u64, cfg.num_classes as u64);
    macs += d * hh + hh * kk;
    pointwise += t * d + 2 * hh + kk;
    FlopCount {
        flops: 2 * macs + pointwise,
        macs,
    }
}
