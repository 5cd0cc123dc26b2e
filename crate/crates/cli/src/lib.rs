//! Command-line pipeline: corpus generation, the three training stages,
//! generation, evaluation and inspection tools.

pub mod anim;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
