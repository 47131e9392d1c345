//! Mask, stitch and re-sample anomaly detection on a denoising diffusion
//! model built from scratch.

pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synthdata;

pub use error::{Error, Result};
pub use image::{BinaryMask, Heatmap, Image};
pub use rng::RandomSource;
