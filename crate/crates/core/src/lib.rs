//! Hyperspectral image denoising with a spectral-spatial cross attention
//! network: overlapping band groups coupled by cross attention, cascaded
//! spectral/spatial attention blocks, and a global residual.

pub mod error;
pub mod gradcheck;
pub mod hsi;
pub mod metrics;
pub mod network;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
