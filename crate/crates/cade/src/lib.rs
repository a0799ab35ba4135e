//! File formats, experiment configuration and the cross-validated cascade
//! pipeline on top of [`cade_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod stages;

pub use cade_core;
pub use config::ExperimentConfig;
pub use error::{Error, Result};
