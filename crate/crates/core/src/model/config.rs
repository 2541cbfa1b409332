use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// `patch_size`, `input_bands` and `num_classes` describe the data rather
/// than the architecture; they are filled in from the dataset and never
/// read from or written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(skip)]
    pub patch_size: usize,
    #[serde(skip)]
    pub input_bands: usize,
    #[serde(skip)]
    pub num_classes: usize,
    /// Filters per conv3d layer in every branch.
    pub ms_filters: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub mlp_ratio: usize,
    /// Expansion factor `α`; the mixing width is `E = α·D`.
    pub mamba_expand: f64,
    pub mamba_kernel: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub use_msfe: bool,
    pub use_vit: bool,
    pub use_mamba: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 9,
            input_bands: 20,
            num_classes: 2,
            ms_filters: 32,
            embed_dim: 64,
            heads: 4,
            encoder_layers: 2,
            mlp_ratio: 2,
            mamba_expand: 2.0,
            mamba_kernel: 3,
            head_hidden: 128,
            dropout: 0.1,
            use_msfe: true,
            use_vit: true,
            use_mamba: true,
        }
    }
}

impl ModelConfig {
    /// Default architecture for the given data geometry.
    pub fn for_data(patch_size: usize, input_bands: usize, num_classes: usize) -> Self {
        ModelConfig {
            patch_size,
            input_bands,
            num_classes,
            ..ModelConfig::default()
        }
    }

    pub fn tokens(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// `E = α·D`
    pub fn expanded_dim(&self) -> usize {
        (self.mamba_expand * self.embed_dim as f64).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads.max(1)
    }

    /// Input width of the 1×1 fusion projection.
    pub fn fuse_in(&self) -> usize {
        if self.use_msfe {
            3 * self.ms_filters * self.input_bands
        } else {
            self.input_bands
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return bad(format!("patch_size must be odd and >= 3, got {}", self.patch_size));
        }
        if self.input_bands == 0 {
            return bad("input_bands must be >= 1".into());
        }
        if self.num_classes == 0 || self.num_classes > u16::MAX as usize {
            return bad(format!("num_classes must lie in 1..=65535, got {}", self.num_classes));
        }
        if !(self.use_msfe || self.use_vit || self.use_mamba) {
            return bad("at least one of use_msfe, use_vit, use_mamba must be enabled".into());
        }
        if self.ms_filters == 0 {
            return bad("ms_filters must be >= 1".into());
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.use_vit && (self.encoder_layers == 0 || self.mlp_ratio == 0) {
            return bad("encoder_layers and mlp_ratio must be >= 1 when use_vit is set".into());
        }
        let e = self.mamba_expand * self.embed_dim as f64;
        if !(e >= 1.0 && e.fract() == 0.0) {
            return bad(format!(
                "mamba_expand {} times embed_dim {} must be a positive integer",
                self.mamba_expand, self.embed_dim
            ));
        }
        if self.mamba_kernel == 0 || self.mamba_kernel.is_multiple_of(2) {
            return bad(format!("mamba_kernel must be odd, got {}", self.mamba_kernel));
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}
