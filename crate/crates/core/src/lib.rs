//! Numerical core for generative active learning with optimizable diffusion
//! conditions.
//!
//! Everything here is `no_std` + `alloc`: dense f64 tensors with a
//! reverse-mode tape, the conditional denoising-diffusion generator, the
//! classifier, acquisition functions, the sign-gradient condition optimizer,
//! pool bookkeeping and the synthetic Gaussian-mixture world. IO, file formats
//! and orchestration live in the `galforge` crate.
#![no_std]

extern crate alloc;

pub mod acquisition;
pub mod autodiff;
pub mod classifier;
pub mod condition_opt;
pub mod embedding;
mod error;
pub mod generator;
pub mod nn;
pub mod optim;
pub mod pools;
pub mod rng;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use tensor::Tensor;
