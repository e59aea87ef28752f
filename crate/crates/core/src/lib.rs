//! Geo-referenced terrain rendering and coarse-to-fine 6-DoF inverse
//! compositional Lucas-Kanade image alignment.
//!
//! World coordinates are planar easting, northing and height in meters.
//! Camera coordinates follow the computer-vision convention: +z along the
//! optical axis, +x right, +y down.

pub mod camera;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod geodata;
pub mod iclk;
pub mod raster;
pub mod renderer;
pub mod rng;
pub mod se3;
pub mod tracker;

pub use camera::CameraModel;
pub use error::{Error, Result};
pub use se3::{PoseSE3, TwistSE3};
