//! State estimation for serpentine robots from monocular silhouette masks.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod gradients;
pub mod kinematics;
pub mod masks;
pub mod renderer;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
