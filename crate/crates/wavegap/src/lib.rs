//! Spectral band-gap analysis for periodic waveguides with small voids.
//!
//! A straight waveguide over a bounded cross-section has purely continuous
//! spectrum. Removing a small void of diameter ~ epsilon from every period
//! can open a gap between the first two spectral bands. This crate predicts
//! that gap in closed form — cross-section modes, the virtual-mass tensor of
//! the void, coupling coefficients F0 and F1, and the gap endpoints at order
//! epsilon^3 — and checks the prediction against a direct quasi-periodic
//! eigensolver on the perturbed periodicity cell.
//!
//! Modules, in pipeline order:
//!
//! - [`geometry`]: cross-sections, void shapes, the periodicity cell
//! - [`cross_modes`]: cross-section eigenpairs (Neumann or Dirichlet walls)
//! - [`dispersion`]: the unperturbed band lattice and the gap precondition
//! - [`virtual_mass`]: the virtual-mass tensor Q of the void (boundary
//!   elements plus analytic oracles)
//! - [`gap_asymptotics`]: F0, F1, eigenvalue corrections, the predicted gap
//! - [`cell_oracle`]: direct 3D solves of the perturbed cell problem

pub mod cell_oracle;
pub mod cross_modes;
pub mod dispersion;
pub mod gap_asymptotics;
pub mod geometry;
pub mod mesh2d;
pub mod numerics;
pub mod surface;
pub mod virtual_mass;

pub use geometry::{BcKind, CellGeometry, CrossSection, VoidShape};
