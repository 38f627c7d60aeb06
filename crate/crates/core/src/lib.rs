//! Multi-layer image editing over a toy attention substrate.
//!
//! A source latent is inverted with deterministic DDIM, decomposed into one
//! layer per edited object plus a canvas, denoised layer by layer with
//! region-wise removal of self-attention, and recombined through per-object
//! transparency maps learned on the fly.

pub mod attention;
pub mod decomposition;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod io;
pub mod layers;
pub mod rng;
pub mod scenario;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid64 = grid::FeatureGrid<f64>;
pub type Grid32 = grid::FeatureGrid<f32>;
pub type Mask64 = grid::Mask<f64>;
pub type Mask32 = grid::Mask<f32>;
pub type Schedule64 = schedule::NoiseSchedule<f64>;
pub type Schedule32 = schedule::NoiseSchedule<f32>;
pub type Substrate64 = attention::Substrate<f64>;
pub type Substrate32 = attention::Substrate<f32>;
