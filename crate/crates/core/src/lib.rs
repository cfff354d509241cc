//! Simulation metrics between a black-box system and an abstraction of it,
//! with scenario-optimization estimates of their worst case.
//!
//! The `parallel` feature (on by default) evaluates samples and kernel grid
//! rows on a rayon pool; without it the same code runs sequentially and
//! produces identical results.

pub mod cli;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod par;
pub mod presets;
pub mod reach;
pub mod records;
pub mod scenario;
pub mod spec;

pub use error::{Error, Result};
