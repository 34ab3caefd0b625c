//! Fast direct solvers for five-point elliptic problems on the unit square.
//!
//! A quadtree of boxes is merged bottom-up into the Schur complement on the
//! outer ring of unknowns; the inverse of that complement maps boundary loads
//! to boundary potentials. Two engines build it: [`dense_nd`] in plain dense
//! arithmetic and [`accel_nd`] with hierarchically block separable matrices.

pub mod accel_nd;
pub mod bodyload;
pub mod config;
pub mod dense_nd;
pub mod error;
pub mod grid;
pub mod hbs;
pub mod hbs_ops;
pub mod linalg;
pub mod problems;
pub mod reference;
pub mod solution;

pub use error::{Error, Result};
