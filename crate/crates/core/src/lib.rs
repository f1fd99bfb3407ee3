//! Crowd-aware navigation workbench.
//!
//! A 2D simulator with ORCA-driven humans and a unicycle robot steered by an
//! attention-pooling value network, together with a look-ahead reward, an
//! imitation + V-learning training pipeline and a seeded evaluation harness.

pub mod config;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod kinematics;
pub mod optim;
pub mod orca;
pub mod pipeline;
pub mod reward;
pub mod rng;
pub mod simulation;
pub mod training;
pub mod valuenet;

pub use error::{Error, Result};
