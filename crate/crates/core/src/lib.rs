//! Depth-dataset quality auditing, filtering, affine-invariant evaluation,
//! and a pure-numeric reference decoder.
//!
//! The crate has four pillars:
//!
//! * [`depthio`] — depth map I/O (PFM and 16-bit PNG), validity masks, and
//!   JSON-lines manifests.
//! * [`quality`] + [`filterpipe`] — per-sample quality scores (depth
//!   distribution and gradient continuity) and the percentile-based
//!   filtering policy built on them.
//! * [`evalkit`] — affine-invariant depth evaluation (AbsRel, delta-1) and
//!   the scale-shift-invariant + multi-scale gradient-matching losses.
//! * [`sdt`] — the single-path transformer-to-depth decoder: forward pass,
//!   parameter/FLOP counters, token and parameter file formats, benchmark.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*32`/`*64`
//! aliases below pin the common concrete choices.

pub mod depthio;
pub mod error;
pub mod evalkit;
pub mod filterpipe;
pub mod fmt;
pub mod quality;
pub mod scalar;
pub mod sdt;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Depth sample in storage precision.
pub type DepthSample32 = depthio::DepthSample<f32>;
/// Depth sample in double precision (oracles, tolerance-sensitive tests).
pub type DepthSample64 = depthio::DepthSample<f64>;
/// Decoder feature map in storage precision.
pub type FeatureMap32 = sdt::ops::FeatureMap<f32>;
/// Decoder feature map in double precision.
pub type FeatureMap64 = sdt::ops::FeatureMap<f64>;
/// Token set in storage precision.
pub type TokenSet32 = sdt::tokens::TokenSet<f32>;
/// Token set in double precision.
pub type TokenSet64 = sdt::tokens::TokenSet<f64>;
