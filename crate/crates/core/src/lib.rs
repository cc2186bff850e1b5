//! Targeted protection for image editing, small enough to study end to end.
//!
//! A learned perturbation generator is trained through a differentiable toy
//! editor so that malicious edits are neutralized while normal edits are
//! preserved. The crate also ships untargeted baselines (PGD on the editor's
//! reconstruction loss, latent-distance transforms) and the evaluation
//! metrics (NSFW ratio, SSIM, PSNR) used to compare them.
//!
//! Everything here is pure computation over `alloc`; file formats, the CLI
//! and the experiment harness live in the companion `tarpro-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod editor;
pub mod error;
pub mod generator;
pub mod image;
pub mod metrics;
pub mod objective;
pub mod prompt;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod toyworld;
pub mod trainer;

pub use error::{CoreError, Result};
pub use image::{apply_perturbation, validate_image, ColorSpace, Image, Perturbation, PerturbationBudget};
pub use prompt::{Prompt, PromptKind, PromptSet};
pub use rng::Seed;
pub use scalar::Scalar;
pub use tensor::Tensor;
