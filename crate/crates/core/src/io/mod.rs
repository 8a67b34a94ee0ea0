//! On-disk formats: NPY maps, PNG masks and images, NPZ checkpoints.

pub mod checkpoint;
pub mod npy;
pub mod png;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use npy::{read_npy, write_npy, NpyError};
pub use png::{read_mask_png, read_rgb_png, voc_color, write_color_mask_png, write_mask_png, write_rgb_png, PngError};
