//! Per-example loss-function search for deep recommender models.

pub mod checkpoint;
pub mod controller;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod train;

pub use error::{Error, ErrorClass, Result};
