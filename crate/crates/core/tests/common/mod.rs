//! Independent 64-bit reference implementations shared by the integration suites.
#![allow(dead_code)]

use cvm_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

pub fn conv3d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], same: bool) -> (Vec<usize>, Vec<f64>) {
    let xs = x.shape();
    let ws = w.shape();
    let (n, d1, d2, d3, ci) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (k1, k2, k3, co) = (ws[0], ws[1], ws[2], ws[4]);
    let (p1, p2, p3) = if same {
        ((k1 - 1) / 2, (k2 - 1) / 2, (k3 - 1) / 2)
    } else {
        (0, 0, 0)
    };
    let (o1, o2, o3) = if same {
        (d1, d2, d3)
    } else {
        (d1 - k1 + 1, d2 - k2 + 1, d3 - k3 + 1)
    };
    let xat = |s: usize, i: isize, j: isize, l: isize, c: usize| -> f64 {
        if i < 0 || j < 0 || l < 0 || i >= d1 as isize || j >= d2 as isize || l >= d3 as isize {
            return 0.0;
        }
        x.data()[(((s * d1 + i as usize) * d2 + j as usize) * d3 + l as usize) * ci + c]
    };
    let mut out = vec![0.0; n * o1 * o2 * o3 * co];
    for s in 0..n {
        for a in 0..o1 {
            for bb in 0..o2 {
                for c in 0..o3 {
                    for f in 0..co {
                        let mut acc = b[f];
                        for t1 in 0..k1 {
                            for t2 in 0..k2 {
                                for t3 in 0..k3 {
                                    for q in 0..ci {
                                        let wv = w.data()[(((t1 * k2 + t2) * k3 + t3) * ci + q) * co + f];
                                        acc += wv
                                            * xat(
                                                s,
                                                (a + t1) as isize - p1 as isize,
                                                (bb + t2) as isize - p2 as isize,
                                                (c + t3) as isize - p3 as isize,
                                                q,
                                            );
                                    }
                                }
                            }
                        }
                        out[(((s * o1 + a) * o2 + bb) * o3 + c) * co + f] = acc;
                    }
                }
            }
        }
    }
    (vec![n, o1, o2, o3, co], out)
}

pub fn conv1d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (n, t, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[0];
    let mut out = vec![0.0; n * t * e];
    for s in 0..n {
        for ti in 0..t {
            for c in 0..e {
                let mut acc = b[c];
                for j in 0..k {
                    let src = ti as isize + j as isize - (k / 2) as isize;
                    if src >= 0 && (src as usize) < t {
                        acc += x.data()[(s * t + src as usize) * e + c] * w.data()[j * e + c];
                    }
                }
                out[(s * t + ti) * e + c] = acc;
            }
        }
    }
    out
}

pub fn layernorm_oracle(x: &[f64], d: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for i in 0..d {
            out.push(gamma[i] * (row[i] - mean) / (var + eps).sqrt() + beta[i]);
        }
    }
    out
}

pub fn gelu_oracle(x: f64) -> f64 {
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3));
    0.5 * x * (1.0 + inner.tanh())
}

pub fn sigmoid_oracle(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x[rows, i] · w[i, o] + b[o]`
pub fn affine_oracle(x: &[f64], w: &[f64], b: &[f64], i: usize, o: usize) -> Vec<f64> {
    let rows = x.len() / i;
    let mut out = matmul_oracle(x, w, rows, i, o);
    for r in 0..rows {
        for c in 0..o {
            out[r * o + c] += b[c];
        }
    }
    out
}

/// Weights of one pre-norm transformer block, all row-major.
pub struct BlockWeights<'a> {
    pub ln1: (&'a [f64], &'a [f64]),
    pub q: (&'a [f64], &'a [f64]),
    pub k: (&'a [f64], &'a [f64]),
    pub v: (&'a [f64], &'a [f64]),
    pub o: (&'a [f64], &'a [f64]),
    pub ln2: (&'a [f64], &'a [f64]),
    pub mlp1: (&'a [f64], &'a [f64]),
    pub mlp2: (&'a [f64], &'a [f64]),
}

/// Explicit per-head, per-query softmax attention followed by the MLP.
pub fn vit_block_oracle(x: &[f64], n: usize, t: usize, d: usize, heads: usize, w: &BlockWeights) -> Vec<f64> {
    let dh = d / heads;
    let hidden = w.mlp1.1.len();
    let ln1 = layernorm_oracle(x, d, w.ln1.0, w.ln1.1, 1e-5);
    let q = affine_oracle(&ln1, w.q.0, w.q.1, d, d);
    let k = affine_oracle(&ln1, w.k.0, w.k.1, d, d);
    let v = affine_oracle(&ln1, w.v.0, w.v.1, d, d);
    let mut ctx = vec![0.0; n * t * d];
    for s in 0..n {
        for h in 0..heads {
            for i in 0..t {
                let mut scores = vec![0.0; t];
                for j in 0..t {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[(s * t + i) * d + h * dh + c] * k[(s * t + j) * d + h * dh + c];
                    }
                    scores[j] = dot / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
                for j in 0..t {
                    let a = (scores[j] - m).exp() / z;
                    for c in 0..dh {
                        ctx[(s * t + i) * d + h * dh + c] += a * v[(s * t + j) * d + h * dh + c];
                    }
                }
            }
        }
    }
    let o = affine_oracle(&ctx, w.o.0, w.o.1, d, d);
    let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
    let ln2 = layernorm_oracle(&x1, d, w.ln2.0, w.ln2.1, 1e-5);
    let m1: Vec<f64> = affine_oracle(&ln2, w.mlp1.0, w.mlp1.1, d, hidden)
        .into_iter()
        .map(gelu_oracle)
        .collect();
    let m2 = affine_oracle(&m1, w.mlp2.0, w.mlp2.1, hidden, d);
    x1.iter().zip(&m2).map(|(a, b)| a + b).collect()
}

/// Scalar step-by-step trace of the gated mixing block.
#[allow(clippy::too_many_arguments)]
pub fn mamba_oracle(
    x: &[f64],
    n: usize,
    t: usize,
    d: usize,
    e: usize,
    k: usize,
    w_in: &[f64],
    conv_w: &[f64],
    conv_b: &[f64],
    w_o: &[f64],
) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in 0..n {
        // expansion: u = x·W_in[:, :E], g = x·W_in[:, E:]
        let mut u = vec![vec![0.0; e]; t];
        let mut g = vec![vec![0.0; e]; t];
        for ti in 0..t {
            for c in 0..e {
                for i in 0..d {
                    let xv = x[(s * t + ti) * d + i];
                    u[ti][c] += xv * w_in[i * 2 * e + c];
                    g[ti][c] += xv * w_in[i * 2 * e + e + c];
                }
            }
        }
        for ti in 0..t {
            let mut um = vec![0.0; e];
            for c in 0..e {
                let mut uc = conv_b[c];
                for j in 0..k {
                    let src = ti as isize + j as isize - (k / 2) as isize;
                    if src >= 0 && (src as usize) < t {
                        uc += conv_w[j * e + c] * u[src as usize][c];
                    }
                }
                um[c] = gelu_oracle(uc) * sigmoid_oracle(g[ti][c]);
            }
            for i in 0..d {
                let mut acc = 0.0;
                for c in 0..e {
                    acc += um[c] * w_o[c * d + i];
                }
                y[(s * t + ti) * d + i] += acc;
            }
        }
    }
    y
}

/// Mean of `-ln p[label]` with `p` computed by direct exponentiation.
pub fn cross_entropy_oracle(logits: &[f64], labels: &[u16], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.chunks(k).zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l as usize - 1].exp() / z).ln();
    }
    total / labels.len() as f64
}
