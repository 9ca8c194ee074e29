//! Finite element toolkit for periodic homogenization of second-order
//! elliptic problems with contact-type boundary conditions.
//!
//! The pipeline mirrors the two-scale computation it implements:
//!
//! 1. [`cell`] solves the periodic corrector problems on the unit cell and
//!    averages the homogenized tensor Â;
//! 2. [`contact`] solves the oscillatory problem and its homogenized
//!    counterpart on the shared fine grid (fixed-point iteration for the
//!    partial-Robin contact condition, a single linear solve for the pure
//!    Robin case);
//! 3. [`recon`] rebuilds the fine-scale gradient from the homogenized
//!    solution and the corrector gradients;
//! 4. [`metrics`] measures ERR0/ERR1/ERR2 between the two solutions and
//!    estimates convergence rates in ε = 1/N.
//!
//! [`mesh`], [`assembly`] and [`linsolve`] provide the underlying structured
//! grids, Q1 operators and conjugate-gradient solvers.
//!
//! The element loops and sparse kernels are data-parallel; the default
//! `parallel` feature runs them on rayon, and disabling it falls back to
//! sequential loops with identical (bitwise) results.

pub mod assembly;
pub mod cell;
pub mod contact;
pub mod linsolve;
pub mod mesh;
pub mod metrics;
pub mod par;
pub mod recon;

pub use assembly::{CoefficientField, MicrostructureSpec, SparseSymMatrix};
pub use cell::{CellCoefficient, CorrectorSet};
pub use contact::{CoefficientSource, ContactProblemSpec, FixedPointConfig, FixedPointReport};
pub use linsolve::{Preconditioner, SolverConfig};
pub use mesh::{BoundaryPartition, BoundaryTag, PeriodicMap, StructuredMesh};
pub use metrics::ErrorReport;
pub use recon::ReconstructedGradient;
