//! Two-tier computer-aided detection on CT volumes: a cheap first-tier
//! candidate generator followed by a ConvNet that classifies random views
//! of each candidate and averages their probabilities.
//!
//! This crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. File formats and the command line live in `cade`.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod aggregate;
pub mod candidates;
pub mod convnet;
pub mod error;
pub mod eval;
pub mod phantom;
pub mod rng;
pub mod sampler;
pub mod volume;

pub use error::{Error, Result};
