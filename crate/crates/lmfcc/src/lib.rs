//! Learnable MFCC front-end for speaker verification experiments.
//!
//! The classical MFCC extractor is a cascade of four linear transforms with
//! fixed non-linearities in between; this crate carries each transform as an
//! explicit learnable kernel:
//!
//! 1. windowing (vector kernel),
//! 2. power spectrum via a split real/imaginary DFT pair,
//! 3. triangular mel filterbank,
//! 4. DCT.
//!
//! Kernels initialize to their static signal-processing counterparts and can
//! be adapted on data with hand-written reverse-mode gradients, either
//! unconstrained, with per-kernel loss regularizers, or with post-step
//! projections that restore each kernel's characteristic property. Metrics
//! (EER, minDCF, DET points) and bit-exact serialization round out the
//! toolkit.
//!
//! Per-frame and per-utterance maps run on rayon when the default `parallel`
//! feature is enabled; results are collected in order and reduced in a fixed
//! sequence, so outputs are bit-identical to the sequential fallback.

pub mod audio_io;
pub mod autodiff;
pub mod constraints;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod linalg;
pub mod pipeline;
pub mod trainer;

pub use audio_io::Waveform;
pub use error::{Error, Result};
pub use kernels::{Component, KernelSet, MfccConfig};
pub use pipeline::FeatureMatrix;
