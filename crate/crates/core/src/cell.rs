//! Periodic cell problems: the two correctors N_1, N_2 on the unit cell and
//! the homogenized tensor.
//!
//! The correctors solve, in weak form with periodic boundary conditions and
//! zero mean,
//!
//! ```text
//! ∫_Q A(y) ∇N_l · ∇v = -∫_Q A(y) e_l · ∇v     for all periodic v,
//! ```
//!
//! where the right-hand side is assembled weakly (the coefficient is
//! discontinuous, so its divergence is never formed). The homogenized tensor
//! is the cell average
//!
//! ```text
//! Â_il = ∫_Q A_il + A_ij ∂_j N_l dy,
//! ```
//!
//! evaluated with the same 2 × 2 Gauss rule as the stiffness assembly, which
//! makes the discrete energy identity Â ξ·ξ = ∫_Q A (∇χ_ξ + ξ)·(∇χ_ξ + ξ)
//! hold to solver precision.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::assembly::{
    assemble_from_elements, element_stiffness, q1, sample_cell_values, AssemblyError,
    CoefficientField, MicrostructureSpec,
};
use crate::linsolve::{cg_solve_projected, SolveError, SolverConfig};
use crate::mesh::{build_cell_mesh, MeshError, PeriodicMap, StructuredMesh};
use crate::par;

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("corrector solve failed: {0}")]
    Solver(#[from] SolveError),
    #[error("corrector cache: {0}")]
    CacheFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Scalar cell-periodic coefficient kappa(y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellCoefficient {
    /// Two-phase square inclusion.
    Inclusion(MicrostructureSpec),
    /// Vertical laminate: `a_left` on y_1 < 1/2, `a_right` on y_1 > 1/2.
    /// Has the closed-form homogenized tensor
    /// diag(harmonic mean, arithmetic mean); used as an independent oracle.
    Laminate { a_left: f64, a_right: f64 },
}

impl CellCoefficient {
    pub fn value_at(&self, y: [f64; 2]) -> f64 {
        match self {
            CellCoefficient::Inclusion(spec) => spec.value_at(y),
            CellCoefficient::Laminate { a_left, a_right } => {
                if y[0] < 0.5 {
                    *a_left
                } else {
                    *a_right
                }
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            CellCoefficient::Inclusion(spec) => spec.min_value(),
            CellCoefficient::Laminate { a_left, a_right } => a_left.min(*a_right),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            CellCoefficient::Inclusion(spec) => spec.max_value(),
            CellCoefficient::Laminate { a_left, a_right } => a_left.max(*a_right),
        }
    }

    /// Checks that every phase interface lies on element faces of an M × M
    /// cell grid.
    pub fn check_alignment(&self, m: usize) -> Result<(), AssemblyError> {
        match self {
            CellCoefficient::Inclusion(spec) => {
                let cut = spec.rho * m as f64;
                if (cut - cut.round()).abs() > 1e-9 {
                    return Err(AssemblyError::InterfaceMisaligned { m, rho: spec.rho });
                }
                Ok(())
            }
            CellCoefficient::Laminate { .. } => {
                if m % 2 != 0 {
                    return Err(AssemblyError::InterfaceMisaligned { m, rho: 0.5 });
                }
                Ok(())
            }
        }
    }
}

/// Corrector gradient matrix at one point: `g[i][l]` = ∂_i N_l.
pub type CorrectorGradient = [[f64; 2]; 2];

/// Correctors on the cell mesh together with the homogenized tensor.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    /// Elements per axis of the cell mesh.
    pub resolution: usize,
    pub coefficient: CellCoefficient,
    /// Nodal values of N_1 and N_2 on the (M+1)² node grid (periodic
    /// followers carry their leader's value).
    pub nodal: [Vec<f64>; 2],
    /// Per-element coefficient values.
    pub field: CoefficientField,
    /// Corrector gradients at the four Gauss points of every cell element.
    pub gauss_gradients: Vec<[CorrectorGradient; 4]>,
    /// Homogenized tensor.
    pub a_hat: [[f64; 2]; 2],
}

fn cell_mesh(resolution: usize) -> Result<(StructuredMesh, PeriodicMap), MeshError> {
    build_cell_mesh(resolution)
}

/// Solves the two corrector problems at the given cell resolution.
pub fn solve_correctors(
    coefficient: &CellCoefficient,
    resolution: usize,
    cfg: &SolverConfig,
) -> Result<CorrectorSet, CellError> {
    coefficient.check_alignment(resolution)?;
    let (mesh, pmap) = cell_mesh(resolution)?;
    let field = sample_cell_values(&mesh, 1, |y| coefficient.value_at(y))?;

    let n_unknowns = pmap.n_unknowns();
    let folded: Vec<[usize; 4]> = mesh
        .elements
        .iter()
        .map(|conn| conn.map(|node| pmap.node_to_unknown[node]))
        .collect();
    let values = &field.values;
    let a = assemble_from_elements(n_unknowns, &folded, |e| {
        let k = values[e];
        element_stiffness(&[[k, 0.0], [0.0, k]])
    });

    // Lumped-mass weights for the zero-mean constraint; uniform h² per
    // unknown on these grids, accumulated explicitly anyway.
    let h = mesh.h();
    let quarter_area = h * h / 4.0;
    let mut weights = vec![0.0; n_unknowns];
    for conn in &folded {
        for &d in conn {
            weights[d] += quarter_area;
        }
    }

    // Weak right-hand sides: b_l[a] = -sum_e kappa_e ∫_e ∂_l phi_a, using the
    // per-element local integrals ∫_e ∂_l phi_a = (h/2) Σ_gp ∂̂_l N_a, which
    // are identical on every element of the uniform grid.
    let mut local_rhs = [[0.0f64; 2]; 4];
    for gp in q1::gauss_points() {
        let grads = q1::ref_grads(gp);
        for a_loc in 0..4 {
            for l in 0..2 {
                local_rhs[a_loc][l] += grads[a_loc][l];
            }
        }
    }
    let scale = h / 2.0;
    let mut rhs = [vec![0.0; n_unknowns], vec![0.0; n_unknowns]];
    for (e, conn) in folded.iter().enumerate() {
        let k = values[e];
        for (a_loc, &dof) in conn.iter().enumerate() {
            for l in 0..2 {
                rhs[l][dof] -= k * scale * local_rhs[a_loc][l];
            }
        }
    }
    // The element contributions cancel exactly wherever the coefficient is
    // locally constant; a vector whose largest entry sits at the assembly
    // roundoff level is therefore an exact zero (constant coefficient, or a
    // corrector direction the coefficient does not vary in).
    let entry_unit = coefficient.max_value() * scale;
    for b in rhs.iter_mut() {
        let peak = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak <= 1e-12 * entry_unit {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let mut nodal: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for l in 0..2 {
        let sol = cg_solve_projected(&a, &rhs[l], &weights, cfg)?;
        nodal[l] = pmap.scatter(&sol.x);
    }

    let gauss_gradients = corrector_gauss_gradients(&mesh, &nodal);
    let mut set = CorrectorSet {
        resolution,
        coefficient: *coefficient,
        nodal,
        field,
        gauss_gradients,
        a_hat: [[0.0; 2]; 2],
    };
    set.a_hat = homogenized_tensor(&set);
    Ok(set)
}

fn corrector_gauss_gradients(
    mesh: &StructuredMesh,
    nodal: &[Vec<f64>; 2],
) -> Vec<[CorrectorGradient; 4]> {
    par::map_indexed(mesh.n_elements(), |e| {
        let g1 = crate::assembly::element_gauss_gradients(mesh, &nodal[0], e);
        let g2 = crate::assembly::element_gauss_gradients(mesh, &nodal[1], e);
        let mut out = [[[0.0; 2]; 2]; 4];
        for k in 0..4 {
            for i in 0..2 {
                out[k][i][0] = g1[k][i];
                out[k][i][1] = g2[k][i];
            }
        }
        out
    })
}

/// Cell average Â_il = ∫_Q kappa (δ_il + ∂_i N_l) with the assembly
/// quadrature.
pub fn homogenized_tensor(corr: &CorrectorSet) -> [[f64; 2]; 2] {
    let m = corr.resolution;
    let h = 1.0 / m as f64;
    let w = h * h / 4.0;
    let mut a_hat = [[0.0; 2]; 2];
    for (e, grads) in corr.gauss_gradients.iter().enumerate() {
        let kappa = corr.field.values[e];
        for g in grads {
            for i in 0..2 {
                for l in 0..2 {
                    let delta = if i == l { 1.0 } else { 0.0 };
                    a_hat[i][l] += kappa * (delta + g[i][l]) * w;
                }
            }
        }
    }
    a_hat
}

/// Discrete oscillation energy ∫_Q kappa |∇χ_ξ + ξ|² with χ_ξ = ξ_l N_l;
/// equals Â ξ·ξ up to solver tolerance.
pub fn cell_energy(corr: &CorrectorSet, xi: [f64; 2]) -> f64 {
    let m = corr.resolution;
    let h = 1.0 / m as f64;
    let w = h * h / 4.0;
    let mut energy = 0.0;
    for (e, grads) in corr.gauss_gradients.iter().enumerate() {
        let kappa = corr.field.values[e];
        for g in grads {
            let mut total = [0.0; 2];
            for i in 0..2 {
                total[i] = xi[i] + g[i][0] * xi[0] + g[i][1] * xi[1];
            }
            energy += kappa * (total[0] * total[0] + total[1] * total[1]) * w;
        }
    }
    energy
}

impl CorrectorSet {
    /// Weighted cell mean of corrector l (should vanish).
    pub fn mean(&self, l: usize) -> f64 {
        let (mesh, _) = cell_mesh(self.resolution).expect("resolution validated at build");
        let w = mesh.h() * mesh.h() / 4.0;
        let mut total = 0.0;
        for e in 0..mesh.n_elements() {
            for v in crate::assembly::element_gauss_values(&mesh, &self.nodal[l], e) {
                total += v * w;
            }
        }
        total
    }

    /// Discrete H¹(Q) norm of corrector l.
    pub fn h1_norm(&self, l: usize) -> f64 {
        let (mesh, _) = cell_mesh(self.resolution).expect("resolution validated at build");
        let w = mesh.h() * mesh.h() / 4.0;
        let mut total = 0.0;
        for e in 0..mesh.n_elements() {
            let vals = crate::assembly::element_gauss_values(&mesh, &self.nodal[l], e);
            let grads = crate::assembly::element_gauss_gradients(&mesh, &self.nodal[l], e);
            for k in 0..4 {
                total +=
                    (vals[k] * vals[k] + grads[k][0] * grads[k][0] + grads[k][1] * grads[k][1]) * w;
            }
        }
        total.sqrt()
    }

    /// Q1 corrector gradients at an arbitrary cell coordinate; the input is
    /// wrapped periodically into [0, 1)².
    pub fn gradient_at(&self, y: [f64; 2]) -> CorrectorGradient {
        let m = self.resolution;
        let mut cell = [0usize; 2];
        let mut local = [0.0f64; 2];
        for d in 0..2 {
            let wrapped = y[d] - y[d].floor();
            let scaled = wrapped * m as f64;
            let idx = (scaled.floor() as usize).min(m - 1);
            cell[d] = idx;
            // reference coordinate in [-1, 1]
            local[d] = 2.0 * (scaled - idx as f64) - 1.0;
        }
        let e = cell[1] * m + cell[0];
        let conn = element_connectivity(m, e);
        let grads = q1::ref_grads(local);
        let scale = 2.0 * m as f64; // 2/h
        let mut out = [[0.0; 2]; 2];
        for (a, node) in conn.into_iter().enumerate() {
            for l in 0..2 {
                let u = self.nodal[l][node];
                out[0][l] += u * grads[a][0] * scale;
                out[1][l] += u * grads[a][1] * scale;
            }
        }
        out
    }

    /// Per-element coefficient value of the cell element containing y.
    pub fn coefficient_at(&self, y: [f64; 2]) -> f64 {
        let wrapped = [y[0] - y[0].floor(), y[1] - y[1].floor()];
        self.coefficient.value_at(wrapped)
    }

    /// Text cache: header with the problem parameters and the homogenized
    /// tensor, then one `N1 N2` pair per node. Floats are written in
    /// shortest round-trip form, so save/load is bitwise exact.
    pub fn save_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "homfem correctors v1")?;
        writeln!(w, "m {}", self.resolution)?;
        match &self.coefficient {
            CellCoefficient::Inclusion(s) => writeln!(
                w,
                "coefficient inclusion {} {} {}",
                s.kappa1, s.kappa2, s.rho
            )?,
            CellCoefficient::Laminate { a_left, a_right } => {
                writeln!(w, "coefficient laminate {} {}", a_left, a_right)?
            }
        }
        writeln!(
            w,
            "ahat {} {} {} {}",
            self.a_hat[0][0], self.a_hat[0][1], self.a_hat[1][0], self.a_hat[1][1]
        )?;
        writeln!(w, "nodal {}", self.nodal[0].len())?;
        for (v1, v2) in self.nodal[0].iter().zip(&self.nodal[1]) {
            writeln!(w, "{} {}", v1, v2)?;
        }
        Ok(())
    }

    pub fn load_text<R: BufRead>(r: &mut R) -> Result<CorrectorSet, CellError> {
        let mut lines = r.lines();
        let mut next = || -> Result<String, CellError> {
            lines
                .next()
                .ok_or_else(|| CellError::CacheFormat("unexpected end of file".into()))?
                .map_err(CellError::Io)
        };
        let header = next()?;
        if header.trim() != "homfem correctors v1" {
            return Err(CellError::CacheFormat(format!(
                "unrecognized header {header:?}"
            )));
        }
        let m_line = next()?;
        let resolution: usize = field_after(&m_line, "m")?
            .parse()
            .map_err(|_| CellError::CacheFormat("bad resolution".into()))?;
        let coef_line = next()?;
        let coef_parts: Vec<&str> = coef_line.split_whitespace().collect();
        let coefficient = match coef_parts.as_slice() {
            ["coefficient", "inclusion", k1, k2, rho] => CellCoefficient::Inclusion(
                MicrostructureSpec::new(parse_f64(k1)?, parse_f64(k2)?, parse_f64(rho)?)
                    .map_err(|e| CellError::CacheFormat(e.to_string()))?,
            ),
            ["coefficient", "laminate", a1, a2] => CellCoefficient::Laminate {
                a_left: parse_f64(a1)?,
                a_right: parse_f64(a2)?,
            },
            _ => {
                return Err(CellError::CacheFormat(format!(
                    "bad coefficient line {coef_line:?}"
                )))
            }
        };
        let _ahat_line = next()?; // recomputed below from the nodal values
        let n_line = next()?;
        let n_nodes: usize = field_after(&n_line, "nodal")?
            .parse()
            .map_err(|_| CellError::CacheFormat("bad node count".into()))?;
        if n_nodes != (resolution + 1) * (resolution + 1) {
            return Err(CellError::CacheFormat(format!(
                "node count {n_nodes} does not match resolution {resolution}"
            )));
        }
        let mut nodal = [Vec::with_capacity(n_nodes), Vec::with_capacity(n_nodes)];
        for _ in 0..n_nodes {
            let line = next()?;
            let mut it = line.split_whitespace();
            let v1 = parse_f64(it.next().unwrap_or(""))?;
            let v2 = parse_f64(it.next().unwrap_or(""))?;
            nodal[0].push(v1);
            nodal[1].push(v2);
        }

        let (mesh, _) = cell_mesh(resolution)?;
        let field = sample_cell_values(&mesh, 1, |y| coefficient.value_at(y))?;
        let gauss_gradients = corrector_gauss_gradients(&mesh, &nodal);
        let mut set = CorrectorSet {
            resolution,
            coefficient,
            nodal,
            field,
            gauss_gradients,
            a_hat: [[0.0; 2]; 2],
        };
        set.a_hat = homogenized_tensor(&set);
        Ok(set)
    }
}

fn field_after<'a>(line: &'a str, key: &str) -> Result<&'a str, CellError> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| CellError::CacheFormat(format!("expected {key:?} line, got {line:?}")))
}

fn parse_f64(s: &str) -> Result<f64, CellError> {
    s.parse()
        .map_err(|_| CellError::CacheFormat(format!("bad float {s:?}")))
}

fn element_connectivity(m: usize, e: usize) -> [usize; 4] {
    let i = e % m;
    let j = e / m;
    let v0 = j * (m + 1) + i;
    [v0, v0 + 1, v0 + m + 2, v0 + m + 1]
}
