//! Spectral reduction, patch extraction and train/validation/test splitting.

mod jacobi;
mod patches;
mod pca;
mod split;

pub use jacobi::symmetric_eigen;
pub use patches::{extract_patches, write_patch, PatchSet};
pub use pca::{pca_apply, pca_fit, PcaModel};
pub use split::{split, Partition, SplitAssignment, SplitSpec};
