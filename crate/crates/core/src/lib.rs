//! Driver verification for synthetic talking-head video.
//!
//! A per-frame convolutional backbone feeds inter-frame feature differences
//! into a temporal head that emits a unit-norm motion fingerprint of whoever
//! drives the video, independent of the face being rendered.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod objective;
pub mod sampling;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
