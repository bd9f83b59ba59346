//! Synthesis and direction-of-arrival estimation for first-order Ambisonic
//! sound scenes.
//!
//! The crate covers the full experiment pipeline:
//!
//! * [`geometry`] — spherical direction grids and great-circle distance
//! * [`ambisonics`] — first-order spherical-harmonic encoding and mixing
//! * [`corpus`] — isolated sound examples (built-in synthetic generator or an
//!   external mono-WAV directory)
//! * [`scene`] — randomized event scheduling, anechoic and image-source
//!   reverberant rendering, frame-level ground truth
//! * [`features`] — STFT extraction and the magnitude/phase input tensor
//! * [`subspace`] — spatial covariance, Hermitian eigendecomposition, MUSIC
//!   pseudo-spectra and peak picking
//! * [`metrics`] — pseudo-spectrum SNR, Hungarian-matched DOA error, frame
//!   recall, confusion matrices
//! * [`nn`] — from-scratch differentiable layers and the two-stage
//!   convolutional-recurrent DOA network
//! * [`container`] / [`wav`] — the binary tensor container and 4-channel
//!   float WAV I/O used by the tools

pub mod ambisonics;
pub mod container;
pub mod corpus;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod subspace;
pub mod wav;

/// Crate-wide error type. The CLI maps variants onto exit codes, so new
/// failure modes should pick the closest existing variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
