//! # dipole-lab
//!
//! A numerical laboratory for the harmonic dipole: the axisymmetric limit map
//! that opens a spherical bubble between the origin O and the pole P = (0,0,1),
//! and a family of incompressible bi-Lipschitz maps u_ε recovering it with
//! energy excess 2π.
//!
//! Modules:
//!
//! * [`geometry`] — coordinates, frames, region atlases and charts.
//! * [`kernels`] — axisymmetric differential kernels, cofactors, finite differences.
//! * [`quadrature`] — graded adaptive Gauss–Legendre integration.
//! * [`limit_map`] — the limit map u, region by region.
//! * [`recovery_map`] — the scalar building blocks and the recovery maps u_ε.
//! * [`energy`] — Dirichlet and volumetric energies, convergence tables.
//! * [`topology`] — degree fields, Δ fields, determinant and surface pairings, singular mass.
//! * [`lemma_suite`] — registry of numerical checks of the auxiliary estimates.
//! * [`report`] — run configuration and deterministic CSV/JSON reports.

pub mod energy;
pub mod error;
pub mod exec;
pub mod fit;
pub mod geometry;
pub mod kernels;
pub mod lemma_suite;
pub mod limit_map;
pub mod maps;
pub mod quadrature;
pub mod recovery_map;
pub mod report;
pub mod roots;
pub mod sampling;
pub mod topology;

pub use error::{Error, Result};
pub use exec::Exec;
