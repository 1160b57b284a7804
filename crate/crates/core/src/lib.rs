//! Pore-scale flow laboratory.
//!
//! Generates periodic 2-D porous media, solves body-force driven Stokes
//! flow through them with a D2Q9 lattice Boltzmann solver, and evaluates
//! transport properties, physics-informed losses, warm-start speedups and
//! conditional uncertainty bands on top of the solutions.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod lbm;
pub mod losses;
pub mod pressure;
pub mod properties;
pub mod stats;
pub mod uncertainty;
pub mod warmstart;

pub use error::{Error, Result};
pub use geometry::StructureGrid;
pub use lbm::{LbmParams, VelocityField};
