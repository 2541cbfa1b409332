//! On-disk formats: `HSI1` cubes, `LBL1` label maps, `CKP1` checkpoints and
//! P6 pixmaps for rendered classification maps.
//!
//! All integers are little-endian. Readers validate the header before
//! touching the payload and reject any size disagreement.

mod bytes;
mod checkpoint;
mod cube;
mod labels;
mod render;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
};
pub use cube::{decode_cube, encode_cube, read_cube, write_cube, HsiCube};
pub use labels::{decode_labels, encode_labels, read_labels, write_labels, LabelMap};
pub use render::{render_map, Palette};
