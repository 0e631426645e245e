//! Automated machine learning over tiled geospatial rasters.
//!
//! The crate covers the full pipeline: a tile-backed raster store with
//! windowed pixel queries, a JSON query protocol, parallel patch assembly,
//! NDVI-based quality filtering, hand-generated texture features, a random
//! forest and a flexible-channel CNN, and the orchestration glue (training
//! pipeline, model registry, inference maps, synthetic benchmark worlds).

pub mod assembly;
pub mod error;
pub mod features;
pub mod filters;
pub mod grid;
pub mod manifest;
pub mod models;
pub mod pipeline;
pub mod query;
pub mod registry;
pub mod split;
pub mod store;
pub mod synth;
pub mod timestamp;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use timestamp::Timestamp;
