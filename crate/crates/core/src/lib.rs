//! Wireless-powered cell-free massive MIMO with self-energy recycling.
//!
//! The crate covers deployment generation, large-scale propagation, LMMSE
//! estimation, closed-form harvested energy and SINR statistics, a dense
//! simplex solver, the alternating power/filter optimizer, a Monte-Carlo
//! oracle for the closed forms, and multi-drop experiment drivers.

pub mod closedform;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod lpsolver;
pub mod montecarlo;
pub mod optimizer;
pub mod propagation;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
pub use grid::Grid;
