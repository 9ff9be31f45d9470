//! RGB + LiDAR fusion toolkit for 3D semantic segmentation on polar grid maps.

pub mod cli;
pub mod container;
pub mod error;
pub mod groundtruth;
pub mod kitti_io;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pgm;
pub mod synthetic;
pub mod viz;

pub use error::{Error, Result};
