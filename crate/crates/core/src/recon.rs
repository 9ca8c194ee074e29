//! First-order gradient reconstruction on the fine grid:
//!
//! ```text
//! (∂_i u_ε)⋆(x) = ∂_i u_{0,h}(x) + ∂_i N_l(x/ε) ∂_l u_{0,h}(x)
//! ```
//!
//! evaluated at the 2 × 2 Gauss points of every fine element. The corrector
//! cell resolution is locked to the per-cell fine resolution, so each fine
//! element coincides with one cell element under y = x/ε mod 1 and its Gauss
//! points map onto the corresponding cell Gauss points exactly; no
//! inter-mesh interpolation is involved.

use std::io::{self, Write};

use thiserror::Error;

use crate::assembly::element_gauss_gradients;
use crate::cell::CorrectorSet;
use crate::mesh::StructuredMesh;
use crate::par;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReconError {
    #[error(
        "fine mesh has {fine} elements per axis, which is not {n_cells} cells \
         of {corrector} corrector elements"
    )]
    ResolutionMismatch {
        fine: usize,
        n_cells: usize,
        corrector: usize,
    },
}

/// Reconstructed fine-scale gradient at the Gauss points of every fine
/// element. Equals ∇u_{0,h} exactly when the correctors vanish.
#[derive(Debug, Clone)]
pub struct ReconstructedGradient {
    pub n_cells: usize,
    /// Per element, per Gauss point.
    pub values: Vec<[[f64; 2]; 4]>,
}

fn check_alignment(
    mesh: &StructuredMesh,
    corr: &CorrectorSet,
    n_cells: usize,
) -> Result<(), ReconError> {
    if n_cells == 0 || mesh.nx != n_cells * corr.resolution {
        return Err(ReconError::ResolutionMismatch {
            fine: mesh.nx,
            n_cells,
            corrector: corr.resolution,
        });
    }
    Ok(())
}

/// Reconstructed gradients of one fine element, chaining the homogenized
/// gradient with the corrector gradients of the congruent cell element.
pub fn reconstruct_element(
    mesh: &StructuredMesh,
    u0h: &[f64],
    corr: &CorrectorSet,
    e: usize,
) -> [[f64; 2]; 4] {
    let m = corr.resolution;
    let (i, j) = (e % mesh.nx, e / mesh.nx);
    let cell_elem = (j % m) * m + (i % m);
    let coarse = element_gauss_gradients(mesh, u0h, e);
    let mut out = [[0.0; 2]; 4];
    for k in 0..4 {
        let g = corr.gauss_gradients[cell_elem][k];
        for i_dir in 0..2 {
            out[k][i_dir] =
                coarse[k][i_dir] + g[i_dir][0] * coarse[k][0] + g[i_dir][1] * coarse[k][1];
        }
    }
    out
}

/// Reconstructs the fine-scale gradient of `u0h` over the whole mesh.
pub fn reconstruct(
    mesh: &StructuredMesh,
    u0h: &[f64],
    corr: &CorrectorSet,
    n_cells: usize,
) -> Result<ReconstructedGradient, ReconError> {
    check_alignment(mesh, corr, n_cells)?;
    let values = par::map_indexed(mesh.n_elements(), |e| {
        reconstruct_element(mesh, u0h, corr, e)
    });
    Ok(ReconstructedGradient { n_cells, values })
}

/// Per-element CSV dump of the reconstructed gradient averaged over the
/// element's Gauss points.
pub fn write_gradient_csv<W: Write>(
    mesh: &StructuredMesh,
    recon: &ReconstructedGradient,
    w: &mut W,
) -> io::Result<()> {
    writeln!(w, "x,y,gx,gy")?;
    for (e, grads) in recon.values.iter().enumerate() {
        let c = mesh.element_centroid(e);
        let gx = grads.iter().map(|g| g[0]).sum::<f64>() / 4.0;
        let gy = grads.iter().map(|g| g[1]).sum::<f64>() / 4.0;
        writeln!(w, "{},{},{},{}", c[0], c[1], gx, gy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::MicrostructureSpec;
    use crate::cell::{solve_correctors, CellCoefficient};
    use crate::linsolve::SolverConfig;
    use crate::mesh::{build_domain_mesh, BoundaryPartition};

    fn mesh(n: usize, m: usize) -> StructuredMesh {
        build_domain_mesh(n, m, BoundaryPartition::contact()).unwrap()
    }

    fn laminate(m: usize) -> CorrectorSet {
        solve_correctors(
            &CellCoefficient::Laminate {
                a_left: 1.0,
                a_right: 2.0,
            },
            m,
            &SolverConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_correctors_reproduce_coarse_gradient() {
        let spec = MicrostructureSpec::new(2.0, 2.0, 0.25).unwrap();
        let corr = solve_correctors(
            &CellCoefficient::Inclusion(spec),
            4,
            &SolverConfig::default(),
        )
        .unwrap();
        let mesh = mesh(2, 4);
        let u: Vec<f64> = mesh
            .node_coords
            .iter()
            .map(|c| c[0] * c[0] + 0.5 * c[1])
            .collect();
        let recon = reconstruct(&mesh, &u, &corr, 2).unwrap();
        for (e, grads) in recon.values.iter().enumerate() {
            let coarse = element_gauss_gradients(&mesh, &u, e);
            for k in 0..4 {
                assert!((grads[k][0] - coarse[k][0]).abs() < 1e-12);
                assert!((grads[k][1] - coarse[k][1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laminate_flux_is_continuous() {
        // u0 = x1 and the laminate correctors: (∂₁u)⋆ alternates between
        // 4/3 (on a=1) and 2/3 (on a=2), and the flux a(y)(∂₁u)⋆ is the
        // constant harmonic mean 4/3.
        let corr = laminate(4);
        let mesh = mesh(2, 4);
        let u: Vec<f64> = mesh.node_coords.iter().map(|c| c[0]).collect();
        let recon = reconstruct(&mesh, &u, &corr, 2).unwrap();
        for (e, grads) in recon.values.iter().enumerate() {
            let (_, y) = crate::mesh::locate_cell(mesh.element_centroid(e), 2);
            let kappa = corr.coefficient_at(y);
            let expected = if kappa == 1.0 { 4.0 / 3.0 } else { 2.0 / 3.0 };
            for g in grads {
                assert!((g[0] - expected).abs() < 1e-9, "element {e}: {}", g[0]);
                assert!(g[1].abs() < 1e-9);
                assert!((kappa * g[0] - 4.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_is_periodic_across_cells() {
        // With a linear u0 the local coarse gradient is identical in every
        // cell, so congruent Gauss points reconstruct identically.
        let corr = laminate(4);
        let mesh = mesh(2, 4);
        let u: Vec<f64> = mesh.node_coords.iter().map(|c| c[0] + 2.0 * c[1]).collect();
        let recon = reconstruct(&mesh, &u, &corr, 2).unwrap();
        let per_cell = 4; // M elements per cell per axis
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let e = j * mesh.nx + i;
                let congruent = (j % per_cell) * mesh.nx + (i % per_cell);
                for k in 0..4 {
                    for d in 0..2 {
                        let diff = (recon.values[e][k][d] - recon.values[congruent][k][d]).abs();
                        assert!(diff < 1e-12, "elements {e} vs {congruent}");
                    }
                }
            }
        }
    }

    #[test]
    fn reconstruction_is_linear_in_the_coarse_field() {
        let corr = laminate(4);
        let mesh = mesh(2, 4);
        let u: Vec<f64> = mesh
            .node_coords
            .iter()
            .map(|c| (c[0] * 3.1).sin())
            .collect();
        let v: Vec<f64> = mesh.node_coords.iter().map(|c| c[1] * c[1]).collect();
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let ru = reconstruct(&mesh, &u, &corr, 2).unwrap();
        let rv = reconstruct(&mesh, &v, &corr, 2).unwrap();
        let rc = reconstruct(&mesh, &combo, &corr, 2).unwrap();
        for e in 0..mesh.n_elements() {
            for k in 0..4 {
                for d in 0..2 {
                    let expect = a * ru.values[e][k][d] + b * rv.values[e][k][d];
                    assert!((rc.values[e][k][d] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_csv_has_one_record_per_element() {
        let corr = laminate(4);
        let mesh = mesh(2, 4);
        let u: Vec<f64> = mesh.node_coords.iter().map(|c| c[0]).collect();
        let recon = reconstruct(&mesh, &u, &corr, 2).unwrap();
        let mut buf = Vec::new();
        write_gradient_csv(&mesh, &recon, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,gx,gy\n"));
        assert_eq!(text.lines().count(), 1 + mesh.n_elements());
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let corr = laminate(4);
        let mesh = mesh(2, 8);
        assert_eq!(
            reconstruct(&mesh, &vec![0.0; mesh.n_nodes()], &corr, 2).unwrap_err(),
            ReconError::ResolutionMismatch {
                fine: 16,
                n_cells: 2,
                corrector: 4
            }
        );
    }
}
