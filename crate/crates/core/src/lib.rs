//! Core building blocks for joint pansharpening and thin-cloud removal.
//!
//! * [`raster`] — the `.mbr` multi-band container, bicubic resampling and
//!   histogram matching.
//! * [`cloud`] — single-scattering thin-cloud synthesis, Wald-protocol
//!   degradation and dataset generation.
//! * [`freq`] — amplitude/phase decomposition and the contrast-aware
//!   high-pass filter.
//! * [`metrics`] — PSNR, SSIM, SAM, ERGAS and the QNR family.

pub mod cloud;
pub mod error;
pub mod freq;
pub mod metrics;
pub mod raster;

pub use error::{Error, Result};
pub use raster::MultiBandRaster;
