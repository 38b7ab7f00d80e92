//! Raylet distance fields over point clouds and 3D Gaussian scenes.

pub mod error;
pub mod features;
pub mod io;
pub mod field;
pub mod fusion;
pub mod metrics;
pub mod render;
pub mod sampling;
pub mod scene;
pub mod scene_model;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
