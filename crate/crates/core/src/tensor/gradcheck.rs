use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic - numeric| / (|analytic| + |numeric| + 1e-8)` seen.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Reduces a non-scalar output to a scalar by contracting with fixed
/// pseudo-random weights, so every output element contributes.
fn scalarize(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = tape.shape(out).to_vec();
    let weights = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out, seed)?;
    tape.value(loss).item()
}

/// Compares tape gradients of `f` against central differences at up to
/// `samples` randomly chosen input coordinates, all in 64-bit.
///
/// Outputs with more than one element are contracted with seeded random
/// weights first.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], samples: usize, step: f64, seed: u64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if samples == 0 || inputs.is_empty() {
        return Err(Error::Contract(
            "gradcheck needs samples >= 1 and at least one input".into(),
        ));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!("invalid finite-difference step {step}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out, seed)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        index::sample(&mut rng, total, samples).into_vec()
    };
    picks.sort_unstable();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for flat in picks {
        let mut which = 0;
        let mut elem = flat;
        while elem >= sizes[which] {
            elem -= sizes[which];
            which += 1;
        }
        let orig = inputs[which].data()[elem];
        work[which].data_mut()[elem] = orig + step;
        let plus = evaluate(&f, &work, seed)?;
        work[which].data_mut()[elem] = orig - step;
        let minus = evaluate(&f, &work, seed)?;
        work[which].data_mut()[elem] = orig;

        let a = analytic[which][elem];
        let n = (plus - minus) / (2.0 * step);
        if !a.is_finite() || !n.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at input {which}, element {elem} (analytic {a}, numeric {n})"
            )));
        }
        let rel = (a - n).abs() / (a.abs() + n.abs() + 1e-8);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel.max(report.max_rel_error);
            if rel >= report.max_rel_error {
                report.worst = (which, elem);
                report.analytic = a;
                report.numeric = n;
            }
        }
        report.checked += 1;
    }
    Ok(report)
}
