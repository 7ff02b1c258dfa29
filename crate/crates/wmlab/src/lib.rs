//! Desk-scale laboratory for learning latent-action video world models on a
//! deterministic synthetic environment: a vector-quantized latent action
//! model, a small flow-matching diffusion-transformer world model with
//! additive AdaLN action conditioning, a phase-schedule training engine with
//! enforced gradient-flow contracts, probing and video metrics, real-action
//! adaptation, and a sampling-based visual planner.

pub mod adaptation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod digest;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lam;
mod layers;
pub mod planner;
pub mod synthenv;
pub mod training;
pub mod util;
pub mod wm;

pub use error::{Error, Result};
