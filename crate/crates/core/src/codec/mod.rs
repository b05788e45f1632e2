//! Convolutional motion autoencoder with a residual codebook stack.

mod checkpoint;
mod config;
mod losses;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_training_state, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{CodecConfig, LossWeights, PROFILES};
pub use losses::{fk_positions, loss_suite, reconstruction_losses, LossTerms, Positions, ReconLoss};
pub use model::{latent_to_rows, rows_to_latent, stack_windows, CodecModel, Decoder, Encoder};
pub use train::*;
