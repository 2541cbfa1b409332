use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward, Bound, Mode, ModelConfig, ModelParams};
use crate::error::Result;
use crate::tensor::{gradcheck, GradcheckReport, Tensor};

/// Finite-difference step for whole-network checks. Larger steps straddle
/// ReLU kinks in the convolution branches; smaller ones drown tiny
/// gradients in roundoff.
pub const MODEL_GRADCHECK_STEP: f64 = 1e-5;

/// Gradchecks the cross-entropy of a 2-sample batch with respect to every
/// parameter tensor and the input, all in 64-bit.
///
/// Zero-initialised tensors other than LayerNorm gains are filled with small
/// random values first so every path carries signal.
pub fn gradcheck_model(cfg: &ModelConfig, seed: u64, samples: usize) -> Result<GradcheckReport> {
    cfg.validate()?;
    let p = ModelParams::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Tensor<f64>> = Vec::with_capacity(p.len() + 1);
    for (name, t) in p.iter() {
        let mut t = t.clone();
        if !name.ends_with("gamma") && t.data().iter().all(|&v| v == 0.0) {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
        inputs.push(t);
    }
    let s = cfg.patch_size;
    inputs.push(Tensor::from_fn(&[2, s, s, cfg.input_bands], |_| {
        rng.gen_range(-1.0..1.0)
    }));
    let names: Vec<String> = p.names().map(String::from).collect();
    let labels = [1, cfg.num_classes.min(2) as u16];
    gradcheck(
        |tape, vars| {
            let (params, x) = vars.split_at(vars.len() - 1);
            let bound = Bound::from_vars(names.iter().map(String::as_str).zip(params.iter().copied()));
            let logits = forward(tape, &bound, cfg, x[0], &mut Mode::Eval)?;
            tape.cross_entropy(logits, &labels)
        },
        &inputs,
        samples,
        MODEL_GRADCHECK_STEP,
        seed,
    )
}
