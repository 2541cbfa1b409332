use rand_chacha::ChaCha8Rng;

use super::{Bound, ModelConfig, ModelParams, BRANCHES};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, p: f64, mode: &mut Mode) -> Result<Var> {
    match mode {
        Mode::Eval => Ok(x),
        Mode::Train(rng) => tape.dropout(x, p, &mut **rng),
    }
}

fn linear<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, p.var(w)?)?;
    tape.add_bias(y, p.var(b)?)
}

/// `[N,S,S,B] -> [N,S,S,D]`
///
/// With `use_msfe`, the patch passes through three two-layer conv3d
/// branches whose outputs are stacked per band and fused by a 1×1 projection.
/// Without it, the bands go straight to the 1×1 projection.
pub fn msfe_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (s, b) = (cfg.patch_size, cfg.input_bands);
    if shape.len() != 4 || shape[1..] != [s, s, b] {
        return Err(Error::dim("msfe_forward", &shape, &[0, s, s, b]));
    }
    let n = shape[0];
    let flat = if cfg.use_msfe {
        let x5 = tape.reshape(x, &[n, s, s, b, 1])?;
        let mut outs = Vec::with_capacity(BRANCHES.len());
        for (branch, _) in BRANCHES {
            let mut h = x5;
            for layer in ["conv1", "conv2"] {
                let w = p.var(&format!("msfe.{branch}.{layer}.w"))?;
                let bias = p.var(&format!("msfe.{branch}.{layer}.b"))?;
                h = tape.conv3d(h, w, bias, Padding::Same)?;
                h = tape.relu(h);
            }
            outs.push(h);
        }
        let cat = tape.concat_last(&outs)?;
        tape.reshape(cat, &[n, s, s, cfg.fuse_in()])?
    } else {
        x
    };
    let fused = linear(tape, p, flat, "fuse.w", "fuse.b")?;
    Ok(tape.relu(fused))
}

/// `[N,S,S,D] -> [N,T,D]`: row-major cell order, learned positions added.
pub fn tokenize<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    features: Var,
    mode: &mut Mode,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    let (t, d) = (cfg.tokens(), cfg.embed_dim);
    if shape.len() != 4 || shape[1] * shape[2] != t || shape[3] != d {
        return Err(Error::dim("tokenize", &shape, &[0, cfg.patch_size, cfg.patch_size, d]));
    }
    let n = shape[0];
    let flat = tape.reshape(features, &[n, t * d])?;
    let pos = tape.reshape(p.var("pos_embed")?, &[t * d])?;
    let x = tape.add_bias(flat, pos)?;
    let x = tape.reshape(x, &[n, t, d])?;
    dropout(tape, x, cfg.dropout, mode)
}

/// One pre-norm block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
pub fn vit_block<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, layer: usize, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (n, t, d) = (shape[0], shape[1], shape[2]);
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let pre = format!("vit.{layer}");
    let ln1 = tape.layernorm(
        x,
        p.var(&format!("{pre}.ln1.gamma"))?,
        p.var(&format!("{pre}.ln1.beta"))?,
        LN_EPS,
    )?;

    let heads = |tape: &mut Tape<T>, m: &str| -> Result<Var> {
        let y = linear(tape, p, ln1, &format!("{pre}.attn.w{m}"), &format!("{pre}.attn.b{m}"))?;
        let y = tape.reshape(y, &[n, t, h, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.reshape(y, &[n * h, t, dh])
    };
    let q = heads(tape, "q")?;
    let k = heads(tape, "k")?;
    let v = heads(tape, "v")?;
    let scores = tape.bmm(q, k, true)?;
    let scores = tape.scale(scores, T::one() / T::from_usize(dh).sqrt());
    let attn = tape.softmax(scores);
    let ctx = tape.bmm(attn, v, false)?;
    let ctx = tape.reshape(ctx, &[n, h, t, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, t, d])?;
    let o = linear(tape, p, ctx, &format!("{pre}.attn.wo"), &format!("{pre}.attn.bo"))?;
    let x = tape.add(x, o)?;

    let ln2 = tape.layernorm(
        x,
        p.var(&format!("{pre}.ln2.gamma"))?,
        p.var(&format!("{pre}.ln2.beta"))?,
        LN_EPS,
    )?;
    let m = linear(tape, p, ln2, &format!("{pre}.mlp1.w"), &format!("{pre}.mlp1.b"))?;
    let m = tape.gelu(m);
    let m = linear(tape, p, m, &format!("{pre}.mlp2.w"), &format!("{pre}.mlp2.b"))?;
    tape.add(x, m)
}

/// `L` stacked [`vit_block`]s.
pub fn vit_encoder<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, mut x: Var) -> Result<Var> {
    if !cfg.embed_dim.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "embed_dim {} not divisible by heads {}",
            cfg.embed_dim, cfg.heads
        )));
    }
    for layer in 0..cfg.encoder_layers {
        x = vit_block(tape, p, cfg, layer, x)?;
    }
    Ok(x)
}

/// Gated token mixing on `[N,T,D]`:
///
/// ```text
/// [U | G] = x·W_in            (D → 2E, U first)
/// U_c     = conv1d_tokens(U)  (depthwise, kernel k, same padding)
/// U_m     = GELU(U_c) ⊙ σ(G)
/// Y       = x + U_m·W_o       (E → D)
/// ```
pub fn mamba_mix<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let e = cfg.expanded_dim();
    let ug = tape.matmul(x, p.var("mamba.w_in")?)?;
    let u = tape.slice_last(ug, 0, e)?;
    let g = tape.slice_last(ug, e, e)?;
    let uc = tape.conv1d_tokens(u, p.var("mamba.conv_w")?, p.var("mamba.conv_b")?)?;
    let act = tape.gelu(uc);
    let gate = tape.sigmoid(g);
    let um = tape.mul(act, gate)?;
    let out = tape.matmul(um, p.var("mamba.w_o")?)?;
    tape.add(x, out)
}

/// Mean over tokens, then `fc1 → GELU → dropout → fc2`. Returns raw logits `[N,K]`.
pub fn head_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, x: Var, mode: &mut Mode) -> Result<Var> {
    let pooled = tape.mean_axis(x, 1)?;
    let h = linear(tape, p, pooled, "head.fc1.w", "head.fc1.b")?;
    let h = tape.gelu(h);
    let h = dropout(tape, h, cfg.dropout, mode)?;
    linear(tape, p, h, "head.fc2.w", "head.fc2.b")
}

/// Full classifier on a `[N,S,S,B]` batch.
pub fn forward<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, batch: Var, mode: &mut Mode) -> Result<Var> {
    let features = msfe_forward(tape, p, cfg, batch)?;
    let mut x = tokenize(tape, p, cfg, features, mode)?;
    if cfg.use_vit {
        x = vit_encoder(tape, p, cfg, x)?;
    }
    if cfg.use_mamba {
        x = mamba_mix(tape, p, cfg, x)?;
    }
    head_forward(tape, p, cfg, x, mode)
}

/// Eval-mode logits on a fresh tape.
pub fn predict_logits<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(batch.clone());
    let logits = forward(&mut tape, &bound, cfg, x, &mut Mode::Eval)?;
    Ok(tape.value(logits).clone())
}
