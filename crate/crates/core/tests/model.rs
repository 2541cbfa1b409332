use cvm_core::hsi_io::CheckpointMeta;
use cvm_core::model::{
    count_flops, count_params, forward, gradcheck_model, head_forward, layout, mamba_mix, msfe_forward, predict_logits,
    tokenize, vit_block, Bound, Mode, ModelConfig, ModelParams,
};
use cvm_core::tensor::{Tape, Tensor, Var};
use cvm_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{mamba_oracle, rand_tensor, vit_block_oracle, BlockWeights};

fn tiny(s: usize, b: usize, k: usize) -> ModelConfig {
    ModelConfig {
        ms_filters: 4,
        embed_dim: 8,
        heads: 2,
        encoder_layers: 1,
        head_hidden: 6,
        ..ModelConfig::for_data(s, b, k)
    }
}

fn randomise(p: &mut ModelParams<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn zero(p: &mut ModelParams<f64>, pred: impl Fn(&str) -> bool) {
    for (name, t) in p.iter_mut() {
        if pred(name) {
            t.data_mut().fill(0.0);
        }
    }
}

/// Binds `params` and runs `f` on a constant input.
fn run<F>(p: &ModelParams<f64>, x: &Tensor<f64>, f: F) -> Tensor<f64>
where
    F: FnOnce(&mut Tape<f64>, &Bound, Var) -> cvm_core::Result<Var>,
{
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = f(&mut tape, &bound, xv).unwrap();
    tape.value(y).clone()
}

// ---------------------------------------------------------------------------
// feature extractor and tokens

#[test]
fn msfe_output_shape() {
    let cfg = ModelConfig::for_data(9, 20, 4);
    let p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let x = Tensor::from_fn(&[1, 9, 9, 20], |i| (i % 7) as f64 * 0.1);
    let y = run(&p, &x, |t, b, v| msfe_forward(t, b, &cfg, v));
    assert_eq!(y.shape(), &[1, 9, 9, 64]);
}

#[test]
fn msfe_zero_weights_give_zero() {
    let cfg = tiny(5, 4, 3);
    let mut p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    zero(&mut p, |n| n.starts_with("msfe") || n.starts_with("fuse"));
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[2, 5, 5, 4]);
    let y = run(&p, &x, |t, b, v| msfe_forward(t, b, &cfg, v));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn msfe_disabled_keeps_shape() {
    let cfg = ModelConfig {
        use_msfe: false,
        ..tiny(5, 4, 3)
    };
    let p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    assert_eq!(p.get("fuse.w").unwrap().shape(), &[4, 8]);
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[2, 5, 5, 4]);
    let y = run(&p, &x, |t, b, v| msfe_forward(t, b, &cfg, v));
    assert_eq!(y.shape(), &[2, 5, 5, 8]);
}

#[test]
fn tokens_follow_row_major_cells() {
    let cfg = tiny(3, 2, 2);
    let p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let feats = Tensor::from_fn(&[1, 3, 3, 8], |i| i as f64);
    let tok = run(&p, &feats, |t, b, v| tokenize(t, b, &cfg, v, &mut Mode::Eval));
    assert_eq!(tok.shape(), &[1, 9, 8]);
    for t in 0..9 {
        let (r, c) = (t / 3, t % 3);
        for d in 0..8 {
            assert_eq!(tok.data()[t * 8 + d], feats.data()[((r * 3) + c) * 8 + d]);
        }
    }
}

#[test]
fn positional_embedding_is_added() {
    let cfg = tiny(3, 2, 2);
    let mut p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    p.get_mut("pos_embed").unwrap().data_mut().fill(0.25);
    let feats = Tensor::from_fn(&[2, 3, 3, 8], |i| i as f64);
    let tok = run(&p, &feats, |t, b, v| tokenize(t, b, &cfg, v, &mut Mode::Eval));
    for (a, b) in tok.data().iter().zip(feats.data()) {
        assert_eq!(*a, b + 0.25);
    }
}

#[test]
fn train_mode_dropout_differs_eval_does_not() {
    let cfg = ModelConfig {
        dropout: 0.5,
        ..tiny(3, 2, 2)
    };
    let p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let feats = Tensor::from_fn(&[1, 3, 3, 8], |i| 1.0 + i as f64);
    let e1 = run(&p, &feats, |t, b, v| tokenize(t, b, &cfg, v, &mut Mode::Eval));
    let e2 = run(&p, &feats, |t, b, v| tokenize(t, b, &cfg, v, &mut Mode::Eval));
    assert_eq!(e1, e2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tr = run(&p, &feats, |t, b, v| {
        tokenize(t, b, &cfg, v, &mut Mode::Train(&mut rng))
    });
    assert!(tr.data().contains(&0.0));
    assert!(tr.data().iter().zip(e1.data()).all(|(&a, &b)| a == 0.0 || a == 2.0 * b));
}

// ---------------------------------------------------------------------------
// transformer encoder

fn block_weights<'a>(p: &'a ModelParams<f64>) -> BlockWeights<'a> {
    let g = |n: &str| p.get(&format!("vit.0.{n}")).unwrap().data();
    BlockWeights {
        ln1: (g("ln1.gamma"), g("ln1.beta")),
        q: (g("attn.wq"), g("attn.bq")),
        k: (g("attn.wk"), g("attn.bk")),
        v: (g("attn.wv"), g("attn.bv")),
        o: (g("attn.wo"), g("attn.bo")),
        ln2: (g("ln2.gamma"), g("ln2.beta")),
        mlp1: (g("mlp1.w"), g("mlp1.b")),
        mlp2: (g("mlp2.w"), g("mlp2.b")),
    }
}

#[test]
fn vit_zero_weights_is_bitwise_identity() {
    let cfg = tiny(3, 2, 2);
    let mut p = ModelParams::<f64>::init(&cfg, 4).unwrap();
    randomise(&mut p, 4);
    zero(&mut p, |n| n.contains(".attn.") || n.contains(".mlp"));
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[2, 9, 8]);
    let y = run(&p, &x, |t, b, v| vit_block(t, b, &cfg, 0, v));
    assert_eq!(y, x);
}

#[test]
fn singleton_attention_weight_is_one() {
    let mut tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::new(vec![3, 1, 1], vec![-4.0, 0.5, 900.0]).unwrap());
    let a = tape.softmax(s);
    assert!(tape.value(a).data().iter().all(|&v| v == 1.0));
}

#[test]
fn vit_block_matches_attention_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..24u64 {
        let (heads, d, t) = [(1, 4, 2), (2, 4, 3), (2, 6, 4)][trial as usize % 3];
        let cfg = ModelConfig {
            embed_dim: d,
            heads,
            ..tiny(3, 2, 2)
        };
        let mut p = ModelParams::<f64>::init(&cfg, trial).unwrap();
        randomise(&mut p, trial + 100);
        let n = 2;
        let x = rand_tensor(&mut rng, &[n, t, d]);
        let y = run(&p, &x, |tp, b, v| vit_block(tp, b, &cfg, 0, v));
        let want = vit_block_oracle(x.data(), n, t, d, heads, &block_weights(&p));
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn heads_not_dividing_embed_dim_is_config_error() {
    let cfg = ModelConfig {
        heads: 3,
        ..tiny(3, 2, 2)
    };
    assert!(matches!(ModelParams::<f32>::init(&cfg, 0), Err(Error::Config(_))));
}

// ---------------------------------------------------------------------------
// gated mixing

fn mamba_cfg(d: usize, alpha: f64, k: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: d,
        heads: 1,
        mamba_expand: alpha,
        mamba_kernel: k,
        ..tiny(3, 2, 2)
    }
}

#[test]
fn mamba_zero_output_projection_is_bitwise_identity() {
    let cfg = mamba_cfg(8, 2.0, 3);
    let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
    randomise(&mut p, 1);
    zero(&mut p, |n| n == "mamba.w_o");
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(5), &[3, 9, 8]);
    assert_eq!(run(&p, &x, |t, b, v| mamba_mix(t, b, &cfg, v)), x);
}

#[test]
fn mamba_dead_branch_collapses_to_residual() {
    let cfg = mamba_cfg(8, 2.0, 3);
    let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
    randomise(&mut p, 1);
    zero(&mut p, |n| n == "mamba.w_in" || n == "mamba.conv_b");
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(5), &[3, 9, 8]);
    assert_eq!(run(&p, &x, |t, b, v| mamba_mix(t, b, &cfg, v)), x);
}

#[test]
fn mamba_matches_scalar_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..24u64 {
        let (n, t, d, alpha, k) = [(1, 3, 2, 2.0, 3), (2, 5, 4, 1.5, 5), (1, 9, 2, 2.0, 1)][trial as usize % 3];
        let cfg = mamba_cfg(d, alpha, k);
        let mut p = ModelParams::<f64>::init(&cfg, trial).unwrap();
        randomise(&mut p, trial + 7);
        let x = rand_tensor(&mut rng, &[n, t, d]);
        let y = run(&p, &x, |tp, b, v| mamba_mix(tp, b, &cfg, v));
        let g = |s: &str| p.get(s).unwrap().data();
        let want = mamba_oracle(
            x.data(),
            n,
            t,
            d,
            cfg.expanded_dim(),
            k,
            g("mamba.w_in"),
            g("mamba.conv_w"),
            g("mamba.conv_b"),
            g("mamba.w_o"),
        );
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "trial {trial}: {a} vs {b}");
        }
    }
}

// ---------------------------------------------------------------------------
// head and full model

#[test]
fn zero_head_gives_zero_logits() {
    let cfg = tiny(3, 2, 4);
    let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
    zero(&mut p, |n| n.starts_with("head"));
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(5), &[2, 9, 8]);
    let y = run(&p, &x, |t, b, v| head_forward(t, b, &cfg, v, &mut Mode::Eval));
    assert_eq!(y.shape(), &[2, 4]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_token_pooling_is_identity() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let m = tape.mean_axis(x, 1).unwrap();
    assert_eq!(tape.value(m).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn forward_shape_and_eval_determinism() {
    for (msfe, vit, mamba) in [
        (true, true, true),
        (false, true, true),
        (true, false, true),
        (true, true, false),
    ] {
        let cfg = ModelConfig {
            use_msfe: msfe,
            use_vit: vit,
            use_mamba: mamba,
            ..tiny(5, 3, 4)
        };
        let p = ModelParams::<f32>::init(&cfg, 2).unwrap();
        let x = Tensor::from_fn(&[3, 5, 5, 3], |i| ((i * 13) % 17) as f32 / 17.0);
        let a = predict_logits(&p, &cfg, &x).unwrap();
        let b = predict_logits(&p, &cfg, &x).unwrap();
        assert_eq!(a.shape(), &[3, 4]);
        assert_eq!(a, b);
    }
}

#[test]
fn permuting_the_batch_permutes_logits() {
    let cfg = tiny(5, 3, 4);
    let p = ModelParams::<f32>::init(&cfg, 2).unwrap();
    let per = 5 * 5 * 3;
    let x = Tensor::from_fn(&[4, 5, 5, 3], |i| ((i * 31) % 23) as f32 / 23.0 - 0.5);
    let perm = [2usize, 0, 3, 1];
    let mut xp = Vec::new();
    for &i in &perm {
        xp.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let xp = Tensor::new(vec![4, 5, 5, 3], xp).unwrap();
    let a = predict_logits(&p, &cfg, &x).unwrap();
    let b = predict_logits(&p, &cfg, &xp).unwrap();
    for (row, &i) in perm.iter().enumerate() {
        assert_eq!(&b.data()[row * 4..row * 4 + 4], &a.data()[i * 4..i * 4 + 4]);
    }
}

#[test]
fn argmax_is_shift_invariant() {
    let cfg = tiny(5, 3, 4);
    let p = ModelParams::<f32>::init(&cfg, 6).unwrap();
    let x = Tensor::from_fn(&[2, 5, 5, 3], |i| (i % 5) as f32);
    let l = predict_logits(&p, &cfg, &x).unwrap();
    let argmax = |r: &[f32]| (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
    for row in l.data().chunks(4) {
        let shifted: Vec<f32> = row.iter().map(|v| v + 3.0).collect();
        assert_eq!(argmax(row), argmax(&shifted));
    }
}

/// Loss of the full model with every parameter exposed as an input.
fn full_model_gradcheck(cfg: &ModelConfig, seed: u64, samples: usize) -> f64 {
    let report = gradcheck_model(cfg, seed, samples).unwrap();
    assert_eq!(report.checked, samples);
    report.max_rel_error
}

#[test]
fn full_model_gradcheck_passes() {
    let cfg = ModelConfig {
        embed_dim: 16,
        ..ModelConfig::for_data(5, 6, 3)
    };
    let err = full_model_gradcheck(&cfg, 11, 25);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn ablated_models_gradcheck() {
    for (msfe, vit, mamba) in [(false, true, true), (true, false, true), (true, true, false)] {
        let cfg = ModelConfig {
            use_msfe: msfe,
            use_vit: vit,
            use_mamba: mamba,
            ..tiny(3, 4, 3)
        };
        let err = full_model_gradcheck(&cfg, 5, 40);
        assert!(err < 1e-3, "{msfe}{vit}{mamba}: {err}");
    }
}

// ---------------------------------------------------------------------------
// parameter accounting

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = ModelConfig::for_data(5, 6, 3);
    let p = ModelParams::<f32>::init(&cfg, 3).unwrap();
    let ck = p.to_checkpoint(CheckpointMeta::default()).unwrap();
    let back = ModelParams::from_checkpoint(&cfg, &ck).unwrap();
    for ((_, a), (_, b)) in p.iter().zip(back.iter()) {
        assert_eq!(a.max_abs_diff(b), 0.0);
    }
    let wider = ModelConfig {
        embed_dim: 32,
        ..cfg.clone()
    };
    match ModelParams::from_checkpoint(&wider, &ck) {
        Err(Error::Checkpoint { name, .. }) => assert_eq!(name, "fuse.w"),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
    let no_mamba = ModelConfig {
        use_mamba: false,
        ..cfg
    };
    assert!(matches!(
        ModelParams::from_checkpoint(&no_mamba, &ck),
        Err(Error::Checkpoint { name, .. }) if name.starts_with("mamba.")
    ));
}

#[test]
fn linear_layer_count() {
    // the classifier's last layer is a plain D→K linear map with bias
    let cfg = ModelConfig {
        head_hidden: 4,
        ..ModelConfig::for_data(3, 2, 3)
    };
    let fc2: usize = layout(&cfg)
        .iter()
        .filter(|(n, _, _)| n.starts_with("head.fc2"))
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum();
    assert_eq!(fc2, 15);
}

#[test]
fn ablation_deltas_match_formulas() {
    let cfg = ModelConfig::for_data(7, 8, 4);
    let (d, f, b, t) = (64, 32, 8, 49);
    let (e, k, r, l) = (128, 3, 2, 2);
    let full = count_params(&cfg);
    let without = |m: fn(&mut ModelConfig)| {
        let mut c = cfg.clone();
        m(&mut c);
        full - count_params(&c)
    };
    assert_eq!(without(|c| c.use_mamba = false), d * 2 * e + k * e + e + e * d);
    let vit_layer = 2 * 2 * d + 4 * (d * d + d) + (d * r * d + r * d) + (r * d * d + d);
    assert_eq!(without(|c| c.use_vit = false), l * vit_layer);
    let branches = (9 * f + f + 9 * f * f + f) + (3 * f + f + 3 * f * f + f) + (27 * f + f + 27 * f * f + f);
    assert_eq!(without(|c| c.use_msfe = false), branches + (3 * f * b - b) * d);
    let _ = t;
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn count_params_matches_tree_walk(
        s in prop::sample::select(vec![3usize, 5, 7]),
        b in 1usize..6,
        k in 2usize..6,
        d_mult in 1usize..4,
        heads in 1usize..3,
        layers in 1usize..3,
        toggles in 1u8..8,
    ) {
        let cfg = ModelConfig {
            embed_dim: 4 * d_mult * heads,
            heads,
            encoder_layers: layers,
            ms_filters: 3,
            head_hidden: 5,
            use_msfe: toggles & 1 != 0,
            use_vit: toggles & 2 != 0,
            use_mamba: toggles & 4 != 0,
            ..ModelConfig::for_data(s, b, k)
        };
        let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let walked: usize = p.iter().map(|(_, t)| t.numel()).sum();
        prop_assert_eq!(count_params(&cfg), walked);
    }

    #[test]
    fn count_flops_macs_match_recorded_contractions(
        s in prop::sample::select(vec![3usize, 5]),
        b in 1usize..5,
        toggles in 1u8..8,
    ) {
        let cfg = ModelConfig {
            use_msfe: toggles & 1 != 0,
            use_vit: toggles & 2 != 0,
            use_mamba: toggles & 4 != 0,
            ..tiny(s, b, 3)
        };
        let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[1, s, s, b]));
        forward(&mut tape, &bound, &cfg, x, &mut Mode::Eval).unwrap();
        let counted = count_flops(&cfg);
        prop_assert_eq!(counted.macs, tape.contraction_macs());
        prop_assert!(counted.flops > 2 * counted.macs);
    }
}

#[test]
fn default_config_counts_agree_with_tree_walk() {
    let cfg = ModelConfig::for_data(17, 25, 15);
    let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
    assert_eq!(count_params(&cfg), p.num_elements());
    let counted = count_flops(&cfg);
    assert!(counted.macs > 0);
}
