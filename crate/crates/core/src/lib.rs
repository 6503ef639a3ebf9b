//! Session-based next-item recommendation with time-interval attention.
//!
//! The pipeline runs raw click logs through [`data`] (sessions, filters,
//! chronological split, prefix samples), pretrains item vectors with
//! [`glove`], trains the network in [`model`] via [`train`], and scores it
//! against popularity and item-KNN baselines in [`eval`]. Every data-parallel
//! step goes through [`par`], whose parallel and sequential paths give
//! bit-identical results.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod glove;
pub mod model;
pub mod numeric;
pub mod par;
pub mod run;
pub mod synthetic;
pub mod train;

pub use error::{Result, StarError};
