//! Radiance fields of stylized characters reconstructed from three
//! turnaround views (front, side, back).

pub mod config;
pub mod dataset;
pub mod datasetgen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod imageio;
pub mod meshing;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod raytrace;
pub mod rendering;
pub mod surface;
pub mod training;

pub use error::{Error, Result};
