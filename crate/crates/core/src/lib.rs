//! Weighted equilibrium measures and local droplets on a uniform grid,
//! their evolution under Laplacian growth, and Coulomb gas ensembles.
//!
//! Conventions: `dA = dvol₂/π`, `Δ = ∂∂̄` (a quarter of the usual
//! Laplacian), logarithmic kernel `log(1/|ξ-η|²)`.

pub mod droplet;
pub mod error;
pub mod evolution;
pub mod field;
pub mod detgas;
pub mod gas;
pub mod io;
pub mod obstacle;
pub mod potential;

pub use error::{Error, Result};
pub use field::{Grid2D, RegionMask, ScalarField};
pub use obstacle::{Droplet, ObstacleParams, ObstacleSolution};
pub use potential::{Localization, Potential, PotentialFamily, PotentialSpec};
