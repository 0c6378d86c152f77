//! Simulation and analysis toolkit for the two-settlement electricity
//! market bidding game.
//!
//! Utilities commit quantities day-ahead from uncertain net-load
//! forecasts and settle their realized mismatch at a spot price driven by
//! the market-level imbalance. This crate computes expected per-unit
//! procurement costs under load uncertainty, solves best responses, and
//! verifies existence, uniqueness, efficiency, and fault immunity of the
//! bid-at-prediction equilibrium across pricing models and error
//! correlation structures.
//!
//! Module map:
//! - [`uncertainty`]: error distributions, grid densities, convolution,
//!   the symmetry test;
//! - [`pricing`]: spot-price rules and their structural classification;
//! - [`cost`]: realized costs and the four expectation engines;
//! - [`game`]: best responses, equilibrium reports, fault immunity,
//!   market splitting;
//! - [`curves`]: the bidding-curve game under day-ahead price uncertainty;
//! - [`dataio`]: trace ingestion, error extraction, scenario configs.

pub mod cost;
pub mod curves;
pub mod dataio;
mod error;
pub mod game;
mod numeric;
pub mod pricing;
pub mod uncertainty;

pub use error::{Error, Result};
