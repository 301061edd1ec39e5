//! Event-based motion segmentation by cascaded two-level multi-model fitting.
//!
//! Level one clusters tracked feature correspondences with progressive
//! multi-model fitting and hands its motion models to level two, which labels
//! every event by minimizing a data + Potts + MDL energy on a spatio-temporal
//! graph while refining each cluster's motion by contrast maximization.

pub mod config;
pub mod error;
pub mod event;
pub mod features;
pub mod io;
pub mod level1;
pub mod level2;
pub mod metrics;
pub mod motion;
pub mod mrf;
pub mod par;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
