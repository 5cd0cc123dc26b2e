//! Music-conditioned dance generation at desk scale.
//!
//! Motion is compressed into paired upper/lower pose codes by two
//! convolutional VQ-VAEs ([`vqvae`]), a transformer predicts the next code
//! pair from music and past codes ([`gpt`]), and an actor-critic stage
//! finetunes the predictor against beat and body-consistency rewards
//! ([`actor_critic`]). [`metrics`] holds the evaluation suite.

pub mod actor_critic;
mod binio;
pub mod error;
pub mod gpt;
pub mod layers;
pub mod metrics;
pub mod motion;
pub mod training;
pub mod vqvae;
pub mod music;

pub use binio::write_atomic;
pub use error::{CoreError, Result};
