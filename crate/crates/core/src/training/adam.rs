use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter, kept in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
    /// Number of completed steps.
    pub t: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, t)| (n.to_string(), vec![0.0; t.numel()]))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
        }
    }
}

/// One bias-corrected Adam update.
///
/// Parameters without an entry in `grads`, or with an empty entry, are
/// treated as having zero gradient. Every gradient is checked for finiteness
/// before anything is modified.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &IndexMap<String, Vec<f32>>,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in '{name}' at element {i}"
            )));
        }
        if let Some(p) = params.get(name) {
            if !g.is_empty() && g.len() != p.numel() {
                return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g.get(i).copied().unwrap_or(0.0) as f64;
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let step = state.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}
