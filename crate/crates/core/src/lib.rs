//! Monaural source separation toolkit.
//!
//! The pipeline extracts deep-clustering embeddings from a normalized mixture
//! magnitude spectrogram, estimates phase-sensitive masks from those embeddings
//! with an utterance-level permutation-invariant objective, optionally adds a
//! discriminative term that pushes the non-chosen permutations apart, and
//! reconstructs each source with the mixture phase.
//!
//! Module map:
//!
//! - [`dsp`]: STFT / ISTFT, magnitude normalization, WAV I/O
//! - [`datagen`]: synthetic two-talker corpora and manifests
//! - [`masking`]: ideal masks, mask application, reconstruction
//! - [`losses`]: deep-clustering, permutation, discriminative and joint objectives
//! - [`neural`]: reverse-mode autodiff, BLSTM networks, Adam, checkpoints
//! - [`clustering`]: K-means for the deep-clustering inference baseline
//! - [`metrics`]: SDR / SIR / SAR scoring and corpus reports
//! - [`pipeline`]: staged training, inference and the experiment driver
//! - [`cli`]: the `sepkit` command line

pub mod cli;
pub mod clustering;
pub mod datagen;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod masking;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod pipeline;

pub use error::{Error, Result};
pub use matrix::Matrix;
