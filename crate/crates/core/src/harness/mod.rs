//! Dataset files, the simulation grid and the Monte Carlo verification suites.

pub mod dataset;
pub mod simulation;
pub mod verify;
