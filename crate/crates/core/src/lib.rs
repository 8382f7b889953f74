//! Illumination planning for photometric stereo in a discretized light space.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod image;
pub mod io;
pub mod lightspace;
pub mod normalnet;
pub mod planner;
pub mod psolve;
pub mod render;
pub mod report;
pub mod selector;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
