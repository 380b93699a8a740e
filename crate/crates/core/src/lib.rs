//! Mask-conditioned unpaired image translation: masking schemes, networks,
//! losses, training loop and evaluation.

pub mod data_pipeline;
pub mod error;
pub mod evaluation;
pub mod img;
pub mod mask_gen;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use img::Image;
pub use mask_gen::{Mask, MaskSampler, MaskScheme};
pub use nets::{Checkpoint, Direction, NetConfig};
pub use rng::RngState;
