//! Evaluation of 6D object pose estimates.
//!
//! The pipeline renders the object model in the estimated and ground-truth
//! poses, derives visibility masks against the test image and scores the
//! estimate with the visible surface discrepancy (plus the ADD/ADI errors).

pub mod dataset;
pub mod fixturegen;
pub mod geometry;
pub mod harness;
pub mod maps;
pub mod metrics;
pub mod raster;
pub mod view_sphere;
pub mod visibility;
