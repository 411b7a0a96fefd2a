//! Dual-critic Wasserstein GAN for synthesizing frontal face images from
//! profile views: a fixed pre-trained encoder feeding a trainable decoder,
//! an identity critic over (profile, candidate) pairs, an authenticity
//! critic over 2x2-packed image quartets, and a threshold-driven scheduler
//! that decides per step which network trains.

pub mod data;
pub mod error;
pub mod networks;
pub mod seeded;
pub mod tensor;

pub use error::{Error, Result};
