//! Continual reinforcement learning with state augmentation.
//!
//! A Soft Actor-Critic agent trained over a sequence of toy control tasks,
//! with eight state-augmentation transforms (including adversarial
//! perturbations gated by an episodic-memory gradient), EWC, PackNet and
//! A-GEM baselines, and the usual continual-learning metrics.

pub mod augment;
pub mod autodiff;
pub mod continual;
pub mod env;
pub mod error;
pub mod metrics;
pub mod runner;
pub mod sac;

pub use error::{Error, Result};
