//! Joint ego planning and multi-vehicle prediction over a rasterised
//! map-view feature, with staged imitation training and a collision-aware
//! controller for closed-loop evaluation.

pub mod agent;
pub mod checkpoint;
pub mod controller;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod raster;
pub mod render;
pub mod train;

pub use error::{CoreError, DataError, Result};
