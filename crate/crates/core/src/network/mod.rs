//! The denoising network: grouped cross attention, spectral-spatial
//! attention cascades, group fusion and the global residual.

mod checkpoint;
mod config;
pub mod layers;
mod model;
mod tiling;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TrunkActivation};
pub use layers::{ChannelAttention, Conv2d, Sgcam, SpatialAttention, Ssab, Ssan};
pub use model::SscanModel;
pub use tiling::{denoise_tiled, DEFAULT_MARGIN};
