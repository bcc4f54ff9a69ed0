//! Desk-scale diffusion sampling laboratory.
//!
//! This crate implements deterministic denoising/inversion step maps over
//! analytically tractable score models, the zigzag sampling loop that
//! alternates strong-guidance denoising with weak-guidance inversion, its
//! baselines, and the numerical machinery that decomposes the resulting
//! latent differences into a semantic-gain term and an inversion
//! approximation-error term.
//!
//! ## Layout
//!
//! - [`schedule`] — forward-noising tables and the per-step coefficients.
//! - [`score`] — noise predictors: exact Gaussian-mixture oracle, a small
//!   trainable network, and classifier-free guidance.
//! - [`sampler`] — step maps and the sampling loops (standard, zigzag,
//!   end-to-end injection, resampling), all fully instrumented.
//! - [`analysis`] — gain/error decomposition, closed-form gap predictions,
//!   accumulation inequality, and distributional quality metrics.
//! - [`harness`] — run configuration, seeded Monte-Carlo sweeps, CSV/summary
//!   output, and the CLI entry point.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example standard_sampling
//! cargo run --release --example zigzag_sampling
//! cargo run --release --example end_to_end_injection
//! cargo run --release --example resampling_baseline
//! cargo run --release --example gain_decomposition
//! cargo run --release --example exact_inversion
//! cargo run --release --example train_score_net
//! cargo run --release --example guidance_gap_sweep
//! ```
//!
//! The thin `zigzag` binary exposes the same machinery as subcommands
//! (`train`, `sample`, `analyze`, `sweep`, `verify`).

pub mod analysis;
pub mod error;
pub mod harness;
mod linalg;
pub mod sampler;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
