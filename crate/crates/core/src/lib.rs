//! One-dimensional hard rods with random lengths.
//!
//! Rods move freely and swap labels at collisions, so the evolution of a
//! tagged rod is its free motion plus the signed volume of the rods its free
//! trajectory crosses. The crate samples marked Poisson initial data, evolves
//! tagged rods exactly, evaluates fluctuation fields at static, Euler and
//! diffusive scales, and checks them against quadrature oracles for their
//! Gaussian limits.

pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod measures;
pub mod stats;

pub use error::{Error, Result};
