//! Files: PNG images, weight and checkpoint files, run configs, dataset layout.

pub mod config;
pub mod dataset;
pub mod image;
pub mod weights;

pub use config::{load_config, parse_config, preset, RunConfig, PRESETS};
pub use dataset::{degrade, png_files, DatasetSpec};
pub use image::{load_png, save_png};
pub use weights::{
    decode_checkpoint, decode_weights, encode_checkpoint, encode_weights, load_checkpoint, load_weights,
    save_checkpoint, save_weights, Checkpoint,
};
