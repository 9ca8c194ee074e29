//! Error metrics between the fine and homogenized solutions and
//! convergence-rate estimation across ε-refinement:
//!
//! ```text
//! ERR0 = ||u_ε - u_0||_L2 / ||u_0||_L2
//! ERR1 = [Σ_i ||∂_i u_ε - ∂_i u_0 - (∂_i N_l)(x/ε) ∂_l u_0||²_L2]^½ / |u_0|_H1
//! ERR2 = |u_ε - u_0|_H1 / |u_0|_H1
//! ```
//!
//! All norms use the 2 × 2 Gauss rule on the shared fine mesh, the same rule
//! as the assembly, so the discrete energy identity validates |·|_H1
//! independently.

use thiserror::Error;

use crate::assembly::{element_gauss_gradients, element_gauss_values};
use crate::cell::CorrectorSet;
use crate::mesh::StructuredMesh;
use crate::par;
use crate::recon::{reconstruct_element, ReconError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("field has {got} nodal values, mesh has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reference field has zero norm; relative errors are undefined")]
    ZeroDenominator,
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error("rate estimation needs at least two samples with distinct ε")]
    TooFewSamples,
    #[error("rate estimation requires strictly positive errors, got {value}")]
    NonPositiveError { value: f64 },
}

/// Relative errors of one (N, M) run.
#[derive(Debug, Clone, Copy)]
pub struct ErrorReport {
    pub err0: f64,
    pub err1: f64,
    pub err2: f64,
    /// ||u_0||_L2, the ERR0 denominator.
    pub u0_l2: f64,
    /// |u_0|_H1, the ERR1/ERR2 denominator.
    pub u0_h1: f64,
}

fn check_field(mesh: &StructuredMesh, u: &[f64]) -> Result<(), MetricsError> {
    if u.len() != mesh.n_nodes() {
        return Err(MetricsError::DimensionMismatch {
            expected: mesh.n_nodes(),
            got: u.len(),
        });
    }
    Ok(())
}

/// L² norm of the Q1 interpolant.
pub fn l2_norm(mesh: &StructuredMesh, u: &[f64]) -> f64 {
    let w = mesh.h() * mesh.h() / 4.0;
    par::sum_indexed(mesh.n_elements(), |e| {
        element_gauss_values(mesh, u, e)
            .iter()
            .map(|v| v * v * w)
            .sum()
    })
    .sqrt()
}

/// H¹ seminorm of the Q1 interpolant.
pub fn h1_seminorm(mesh: &StructuredMesh, u: &[f64]) -> f64 {
    let w = mesh.h() * mesh.h() / 4.0;
    par::sum_indexed(mesh.n_elements(), |e| {
        element_gauss_gradients(mesh, u, e)
            .iter()
            .map(|g| (g[0] * g[0] + g[1] * g[1]) * w)
            .sum()
    })
    .sqrt()
}

fn l2_diff(mesh: &StructuredMesh, u: &[f64], v: &[f64]) -> f64 {
    let w = mesh.h() * mesh.h() / 4.0;
    par::sum_indexed(mesh.n_elements(), |e| {
        let a = element_gauss_values(mesh, u, e);
        let b = element_gauss_values(mesh, v, e);
        (0..4).map(|k| (a[k] - b[k]) * (a[k] - b[k]) * w).sum()
    })
    .sqrt()
}

fn h1_diff(mesh: &StructuredMesh, u: &[f64], v: &[f64]) -> f64 {
    let w = mesh.h() * mesh.h() / 4.0;
    par::sum_indexed(mesh.n_elements(), |e| {
        let a = element_gauss_gradients(mesh, u, e);
        let b = element_gauss_gradients(mesh, v, e);
        (0..4)
            .map(|k| {
                let dx = a[k][0] - b[k][0];
                let dy = a[k][1] - b[k][1];
                (dx * dx + dy * dy) * w
            })
            .sum()
    })
    .sqrt()
}

/// Relative L² error ||u_ε - u_0|| / ||u_0||.
pub fn err0(u_eps: &[f64], u0: &[f64], mesh: &StructuredMesh) -> Result<f64, MetricsError> {
    check_field(mesh, u_eps)?;
    check_field(mesh, u0)?;
    let denom = l2_norm(mesh, u0);
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(l2_diff(mesh, u_eps, u0) / denom)
}

/// Relative corrected-gradient error: the fine gradient against the
/// first-order reconstruction from u_0 and the correctors.
pub fn err1(
    u_eps: &[f64],
    u0: &[f64],
    corr: &CorrectorSet,
    mesh: &StructuredMesh,
    n_cells: usize,
) -> Result<f64, MetricsError> {
    check_field(mesh, u_eps)?;
    check_field(mesh, u0)?;
    if mesh.nx != n_cells * corr.resolution {
        return Err(MetricsError::Recon(ReconError::ResolutionMismatch {
            fine: mesh.nx,
            n_cells,
            corrector: corr.resolution,
        }));
    }
    let denom = h1_seminorm(mesh, u0);
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    let w = mesh.h() * mesh.h() / 4.0;
    let numer = par::sum_indexed(mesh.n_elements(), |e| {
        let fine = element_gauss_gradients(mesh, u_eps, e);
        let star = reconstruct_element(mesh, u0, corr, e);
        (0..4)
            .map(|k| {
                let dx = fine[k][0] - star[k][0];
                let dy = fine[k][1] - star[k][1];
                (dx * dx + dy * dy) * w
            })
            .sum()
    })
    .sqrt();
    Ok(numer / denom)
}

/// Relative H¹-seminorm error |u_ε - u_0| / |u_0| (no corrector term).
pub fn err2(u_eps: &[f64], u0: &[f64], mesh: &StructuredMesh) -> Result<f64, MetricsError> {
    check_field(mesh, u_eps)?;
    check_field(mesh, u0)?;
    let denom = h1_seminorm(mesh, u0);
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(h1_diff(mesh, u_eps, u0) / denom)
}

/// All three metrics of one run.
pub fn error_report(
    u_eps: &[f64],
    u0: &[f64],
    corr: &CorrectorSet,
    mesh: &StructuredMesh,
    n_cells: usize,
) -> Result<ErrorReport, MetricsError> {
    Ok(ErrorReport {
        err0: err0(u_eps, u0, mesh)?,
        err1: err1(u_eps, u0, corr, mesh, n_cells)?,
        err2: err2(u_eps, u0, mesh)?,
        u0_l2: l2_norm(mesh, u0),
        u0_h1: h1_seminorm(mesh, u0),
    })
}

/// Least-squares slope of log(err) against log(ε). For exactly two samples
/// this reduces to the log₂ ratio.
pub fn estimate_rate(samples: &[(f64, f64)]) -> Result<f64, MetricsError> {
    for &(_, err) in samples {
        if !(err > 0.0) {
            return Err(MetricsError::NonPositiveError { value: err });
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(eps, err) in samples {
        let x = eps.ln();
        let y = err.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Log₂ ratios between consecutive samples (the tabulated per-row rates).
pub fn pairwise_rates(samples: &[(f64, f64)]) -> Vec<f64> {
    samples
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect()
}
