//! Snapshot HDR imaging with polarization mosaic cameras.
//!
//! A linear polarizer in front of a polarization camera turns the four
//! on-chip polarizer orientations into four simultaneous exposures of
//! `cos²θᵢ`. This crate recovers those exposures from the snapshot itself
//! ([`calibrate`]), merges the four images into linear radiance
//! ([`fusion`]), and simulates the optics and sensor ([`forward`]) so every
//! step can be checked against known ground truth.
//!
//! ```no_run
//! use polhdr_core::{config::PipelineConfig, io, mosaic::MosaicFrame, pipeline::run_pipeline};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let frame = MosaicFrame::new(io::load_ldr("raw.png", None)?)?;
//! let out = run_pipeline(&frame, &PipelineConfig::default(), true)?;
//! io::save_pfm(&out.hdr.image, "hdr.pfm")?;
//! # Ok(())
//! # }
//! ```

pub mod calibrate;
pub mod config;
pub mod error;
pub mod forward;
pub mod fusion;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod mosaic;
pub mod pipeline;

pub use error::{Error, Result};
pub use imaging::{clip, Image2D, LdrImage, PixelParam, Polarity, PolarityStack, PolarizerRig, SceneLight};
