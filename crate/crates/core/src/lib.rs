//! Additive deep hazard mixtures for survival analysis.
//!
//! A patient's hazard is a patient-weighted sum of covariate-specific hazard
//! curves; the weights come from a soft assignment to latent subgroups, each
//! with its own covariate importance profile. The crate trains such models
//! with a Monte Carlo likelihood, merges redundant subgroups after training,
//! and scores survival predictions. It builds without `std` (with `alloc`);
//! the default `std` feature enables platform math and SIMD detection.

#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod data;
pub mod diffcore;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod refinement;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
