//! Deep recommender models: embeddings, FM interaction, DeepFM and IPNN.

pub mod interaction;
mod drs;

pub use drs::{head_activation, DrsCache, DrsConfig, DrsModel, ModelKind};
