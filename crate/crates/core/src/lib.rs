//! Controllable music-to-dance generation at desk scale.
//!
//! The pipeline tokenizes motion with a VQ-VAE, predicts token sequences
//! with a cross-modal GPT (music and text share one head), and layers three
//! controls on top: genre (embedding network + discriminator), text
//! (feature fusion over an interval), and keyframes (masked infilling).
//! Everything runs on the in-crate autodiff engine over deterministic
//! synthetic corpora, and ships with kinetic/geometric FID and diversity
//! metrics for evaluation.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod genre;
pub mod infill;
pub mod metrics;
pub mod pipeline;
pub mod gpt;
pub mod rngx;
pub mod tensor;
pub mod vqvae;

pub use error::{Error, Result};
