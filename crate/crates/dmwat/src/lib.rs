//! Desk-scale multimodal wound-referral pipeline.
//!
//! Everything runs on a small `f64` tape-autodiff engine: a toy vision
//! transformer with class/distillation tokens, a toy text encoder with
//! disentangled attention and an enhanced-mask-decoder MLM mode, intermediate
//! fusion into SVM/MLP referral heads, a seeded synthetic dataset generator,
//! stratified cross-validation, and post-hoc explanations (Score-CAM saliency
//! and Integrated Gradients token attribution).
//!
//! Start with the runnable examples (`cargo run --release -p dmwat --example
//! generate_dataset`, then `evaluate_cv`, `explain_saliency`, ...) or the
//! `dmwat` binary, which exposes the same flows as subcommands.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod image;
pub mod interpret;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
