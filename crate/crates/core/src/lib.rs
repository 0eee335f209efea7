//! Low-light image enhancement through a fitted 2D Gaussian field.
//!
//! Stage one ([`recon`]) fits an image with a residual pyramid of 2D
//! Gaussian primitives and freezes them. A dictionary of tone curves
//! ([`dict`]) is learned from a corpus. Stage two ([`enhance`]) optimizes a
//! per-primitive mixture over the dictionary, splats the mixture weights
//! through the frozen geometry ([`raster`]) and turns them into a per-pixel
//! gain map.

pub mod cli;
pub mod dict;
pub mod enhance;
pub mod error;
pub mod field;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};
