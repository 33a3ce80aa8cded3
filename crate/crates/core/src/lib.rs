//! Desk-scale soil sensing simulator and contrastive cross-component learning.
//!
//! - [`soil_forward`]: composition → permittivity and VNIR voltages
//! - [`rf_geometry`]: tetrahedral antenna phase model and its inversion
//! - [`chirp_sim`]: LoRa preamble with antenna switching and chirp-ratio phase extraction
//! - [`dataset`]: structured training and random test sets, CSV persistence
//! - [`cl3`]: encoder, direction extraction, losses, training and projection inference

pub mod chirp_sim;
pub mod cl3;
pub mod dataset;
pub mod error;
pub mod rf_geometry;
pub mod soil_forward;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
