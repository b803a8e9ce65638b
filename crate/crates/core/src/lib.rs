//! Nasopharyngeal biopsy patch pipeline: annotation concordance, region
//! tiling, patch filtering, dataset manifests and a from-scratch DenseNet-21
//! classifier.

pub mod annotations;
pub mod augment;
pub mod checkpoint;
pub mod class;
pub mod config;
pub mod dataset;
pub mod densenet;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod nn;
pub mod par;
pub mod patchfilter;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tiler;
pub mod trainer;

pub use class::{ClassLabel, NUM_CLASSES};
pub use error::{Error, Result};
