//! Noise-robust one-class intrusion detection on continuous-time dynamic graphs.
//!
//! The crate provides a temporal graph encoder with per-node GRU memory, two
//! detection heads (a deterministic hypersphere head and a probabilistic
//! Gaussian head trained with negative sampling), a noise-injection model for
//! test streams, and the evaluation protocol that ranks attacks against the
//! combined class of normal and noise events.

pub mod ctdg;
pub mod data;
pub mod diffcore;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod noise;
