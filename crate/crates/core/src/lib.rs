//! Sector-FOV ultrasound image stitching, end to end on a desk machine.
//!
//! The pipeline has three stages:
//! 1. a generative outpainter (DDPM U-Net + zero-convolution control branch)
//!    that turns a single sector-FOV image into a realistic stitching partner
//!    with a known ground-truth affine,
//! 2. a supervised affine stitching network trained on those synthetic pairs,
//! 3. an evaluation harness comparing it against classical intensity- and
//!    feature-based registration on phantom sequences with exact landmarks.
//!
//! Everything is deterministic under a seed: RNG state is passed explicitly,
//! training parallelism reduces gradients in a fixed order, and artifacts are
//! byte-reproducible.

pub mod baselines;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod io;
pub mod ism;
pub mod metrics;
pub mod nn;
pub mod phantomgen;
pub mod sspgm;

pub use error::{Error, Result};
pub use geometry::{AffineRanges, AffineTransform, BinaryMask, Image2D, Interp, Pt, TrsParams};
