use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::hsi_io::{Checkpoint, CheckpointMeta};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Feature-extractor branches and their `(height, width, spectral)` kernels.
pub const BRANCHES: [(&str, [usize; 3]); 3] = [("spatial", [3, 3, 1]), ("spectral", [1, 1, 3]), ("joint", [3, 3, 3])];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform in `±√(6/(fan_in+fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

/// Every parameter of `cfg` in canonical order with its shape and initialiser.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, ParamInit)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));
    let linear = |fi: usize, fo: usize| ParamInit::Glorot {
        fan_in: fi,
        fan_out: fo,
    };
    let (d, f) = (cfg.embed_dim, cfg.ms_filters);
    if cfg.use_msfe {
        for (branch, k) in BRANCHES {
            let taps: usize = k.iter().product();
            for (layer, cin) in [("conv1", 1), ("conv2", f)] {
                push(
                    format!("msfe.{branch}.{layer}.w"),
                    vec![k[0], k[1], k[2], cin, f],
                    linear(taps * cin, taps * f),
                );
                push(format!("msfe.{branch}.{layer}.b"), vec![f], ParamInit::Zeros);
            }
        }
    }
    push("fuse.w".into(), vec![cfg.fuse_in(), d], linear(cfg.fuse_in(), d));
    push("fuse.b".into(), vec![d], ParamInit::Zeros);
    push("pos_embed".into(), vec![cfg.tokens(), d], ParamInit::Zeros);
    if cfg.use_vit {
        let hidden = cfg.mlp_ratio * d;
        for l in 0..cfg.encoder_layers {
            let p = format!("vit.{l}");
            push(format!("{p}.ln1.gamma"), vec![d], ParamInit::Ones);
            push(format!("{p}.ln1.beta"), vec![d], ParamInit::Zeros);
            for m in ["q", "k", "v", "o"] {
                push(format!("{p}.attn.w{m}"), vec![d, d], linear(d, d));
                push(format!("{p}.attn.b{m}"), vec![d], ParamInit::Zeros);
            }
            push(format!("{p}.ln2.gamma"), vec![d], ParamInit::Ones);
            push(format!("{p}.ln2.beta"), vec![d], ParamInit::Zeros);
            push(format!("{p}.mlp1.w"), vec![d, hidden], linear(d, hidden));
            push(format!("{p}.mlp1.b"), vec![hidden], ParamInit::Zeros);
            push(format!("{p}.mlp2.w"), vec![hidden, d], linear(hidden, d));
            push(format!("{p}.mlp2.b"), vec![d], ParamInit::Zeros);
        }
    }
    if cfg.use_mamba {
        let (e, k) = (cfg.expanded_dim(), cfg.mamba_kernel);
        push("mamba.w_in".into(), vec![d, 2 * e], linear(d, 2 * e));
        push("mamba.conv_w".into(), vec![k, e], linear(k, k));
        push("mamba.conv_b".into(), vec![e], ParamInit::Zeros);
        push("mamba.w_o".into(), vec![e, d], linear(e, d));
    }
    let (h, k) = (cfg.head_hidden, cfg.num_classes);
    push("head.fc1.w".into(), vec![d, h], linear(d, h));
    push("head.fc1.b".into(), vec![h], ParamInit::Zeros);
    push("head.fc2.w".into(), vec![h, k], linear(h, k));
    push("head.fc2.b".into(), vec![k], ParamInit::Zeros);
    out
}

/// Named parameter tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialisation. Values are drawn in `f32` so that `f32` and
    /// `f64` instances from the same seed agree exactly.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = IndexMap::new();
        for (name, shape, init) in layout(cfg) {
            let t = match init {
                ParamInit::Zeros => Tensor::zeros(&shape),
                ParamInit::Ones => Tensor::full(&shape, T::one()),
                ParamInit::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    Tensor::from_fn(&shape, |_| T::from_f64(rng.gen_range(-a..=a) as f64))
                }
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sum of element counts over the tree.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
                .collect(),
        }
    }
}

impl ModelParams<f32> {
    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(meta);
        for (name, t) in &self.tensors {
            ck.insert(name.clone(), t.clone())?;
        }
        Ok(ck)
    }

    /// Builds parameters for `cfg` from a checkpoint.
    ///
    /// Every expected tensor must be present with the expected shape, and no
    /// unexpected model tensor may be present; the first offender is named.
    /// Entries under `pca.` and `adam.` are ignored. Nothing is returned
    /// unless every tensor matches.
    pub fn from_checkpoint(cfg: &ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let expected = layout(cfg);
        let mut tensors = IndexMap::with_capacity(expected.len());
        for (name, shape, _) in &expected {
            let t = ckpt.get(name).ok_or_else(|| Error::Checkpoint {
                name: name.clone(),
                reason: "missing parameter".into(),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint {
                    name: name.clone(),
                    reason: format!("shape mismatch: checkpoint {:?}, model {:?}", t.shape(), shape),
                });
            }
            tensors.insert(name.clone(), t.clone());
        }
        for name in ckpt.tensors.keys() {
            let reserved = name.starts_with("pca.") || name.starts_with("adam.");
            if !reserved && !tensors.contains_key(name) {
                return Err(Error::Checkpoint {
                    name: name.clone(),
                    reason: "not a parameter of this model".into(),
                });
            }
        }
        Ok(ModelParams { tensors })
    }
}

/// Tape handles of a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Associates existing tape handles with parameter names.
    pub fn from_vars<'a>(pairs: impl IntoIterator<Item = (&'a str, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
