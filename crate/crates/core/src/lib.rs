//! Feature-weighted MMD-CORAL domain adaptation for power-transformer fault
//! diagnosis from dissolved gas analysis (DGA).
//!
//! Gas measurements are turned into hybrid DGA ratios, encoded as 9×9
//! Gramian Angular Field images and classified by a small CNN. Per-feature
//! Kolmogorov-Smirnov statistics between the source and target fleets define
//! a weight matrix that focuses MMD and CORAL alignment on the features that
//! shifted the most.

pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
