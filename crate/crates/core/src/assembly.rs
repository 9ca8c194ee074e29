//! Sparse assembly of Q1 stiffness matrices, boundary mass matrices and
//! load vectors on the structured meshes.
//!
//! All volume integrals use the 2 × 2 Gauss rule, which is exact for Q1
//! stiffness and mass with a per-element-constant coefficient; boundary
//! integrals of linear traces are integrated exactly. Coefficients are
//! sampled at element centroids, so a piecewise-constant microstructure is
//! represented exactly as long as the phase interface lies on element faces.
//!
//! Assembly is row-parallel: every matrix row is produced independently
//! from the elements adjacent to its node, which keeps the result
//! independent of thread count.

use std::io::{self, Write};
use std::sync::OnceLock;

use thiserror::Error;

use crate::mesh::{locate_cell, BoundaryTag, StructuredMesh};
use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("coefficient field has {got} entries, mesh has {expected} elements")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inclusion inset rho = {rho} must lie in (0, 0.5)")]
    InvalidInset { rho: f64 },
    #[error(
        "phase interface at cell coordinate {rho} does not align with the \
         M = {m} element grid (rho*M must be an integer)"
    )]
    InterfaceMisaligned { m: usize, rho: f64 },
    #[error("mesh with {nx} elements per axis is not divisible into {n_cells} cells")]
    GridNotCellAligned { nx: usize, n_cells: usize },
    #[error("Dirichlet node set is empty; the contact formulation requires a nonempty Dirichlet boundary")]
    EmptyDirichlet,
    #[error("value coupling kappa out of positive range")]
    NonPositiveCoefficient,
}

// ---------------------------------------------------------------------------
// Q1 reference element
// ---------------------------------------------------------------------------

/// Bilinear reference element on [-1, 1]², nodes counterclockwise from
/// (-1, -1). The 2 × 2 Gauss rule has unit weights.
pub mod q1 {
    pub const GAUSS_1D: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

    /// The four Gauss points in reference coordinates, same counterclockwise
    /// ordering as the element nodes.
    pub fn gauss_points() -> [[f64; 2]; 4] {
        let g = GAUSS_1D;
        [[-g, -g], [g, -g], [g, g], [-g, g]]
    }

    pub fn shapes(p: [f64; 2]) -> [f64; 4] {
        let [xi, eta] = p;
        [
            0.25 * (1.0 - xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 + eta),
            0.25 * (1.0 - xi) * (1.0 + eta),
        ]
    }

    /// Gradients with respect to the reference coordinates.
    pub fn ref_grads(p: [f64; 2]) -> [[f64; 2]; 4] {
        let [xi, eta] = p;
        [
            [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
            [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
            [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
            [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
        ]
    }
}

/// Reference integrals r[a][b][i][j] = Σ_gp ∂̂_a N_i ∂̂_b N_j. On a square
/// element of any size h the local stiffness for a constant tensor A is
/// K_ij = Σ_ab A_ab r[a][b][i][j] (the element scale cancels in 2D).
fn ref_stiffness() -> &'static [[[[f64; 4]; 4]; 2]; 2] {
    static REF: OnceLock<[[[[f64; 4]; 4]; 2]; 2]> = OnceLock::new();
    REF.get_or_init(|| {
        let mut r = [[[[0.0; 4]; 4]; 2]; 2];
        for gp in q1::gauss_points() {
            let g = q1::ref_grads(gp);
            for a in 0..2 {
                for b in 0..2 {
                    for i in 0..4 {
                        for j in 0..4 {
                            r[a][b][i][j] += g[i][a] * g[j][b];
                        }
                    }
                }
            }
        }
        r
    })
}

/// Local stiffness of one square element for a constant 2 × 2 tensor.
pub fn element_stiffness(tensor: &[[f64; 2]; 2]) -> [[f64; 4]; 4] {
    let r = ref_stiffness();
    let mut k = [[0.0; 4]; 4];
    for a in 0..2 {
        for b in 0..2 {
            let c = tensor[a][b];
            if c == 0.0 {
                continue;
            }
            for i in 0..4 {
                for j in 0..4 {
                    k[i][j] += c * r[a][b][i][j];
                }
            }
        }
    }
    k
}

/// Physical gradient of the Q1 interpolant of `nodal` at the four Gauss
/// points of element `e`.
pub fn element_gauss_gradients(mesh: &StructuredMesh, nodal: &[f64], e: usize) -> [[f64; 2]; 4] {
    let scale = 2.0 / mesh.h();
    let conn = mesh.elements[e];
    let mut out = [[0.0; 2]; 4];
    for (k, gp) in q1::gauss_points().into_iter().enumerate() {
        let grads = q1::ref_grads(gp);
        for (a, &node) in conn.iter().enumerate() {
            let u = nodal[node];
            out[k][0] += u * grads[a][0] * scale;
            out[k][1] += u * grads[a][1] * scale;
        }
    }
    out
}

/// Value of the Q1 interpolant of `nodal` at the four Gauss points of
/// element `e`.
pub fn element_gauss_values(mesh: &StructuredMesh, nodal: &[f64], e: usize) -> [f64; 4] {
    let conn = mesh.elements[e];
    let mut out = [0.0; 4];
    for (k, gp) in q1::gauss_points().into_iter().enumerate() {
        let shapes = q1::shapes(gp);
        for (a, &node) in conn.iter().enumerate() {
            out[k] += nodal[node] * shapes[a];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sparse matrix
// ---------------------------------------------------------------------------

/// Symmetric sparse matrix in compressed-row storage. Both triangles are
/// stored so the matrix-vector product is a plain row sweep.
#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    // u32 column indices: half the index traffic of the row sweeps, and
    // far more than enough for the grids at hand.
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_counts = vec![0usize; n + 1];
        let mut col_indices: Vec<u32> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            assert!(i < n && j < n, "triplet index out of range");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(j as u32);
                values.push(v);
                row_counts[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        SparseSymMatrix {
            n,
            row_offsets: row_counts,
            col_indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Entry (i, j), zero when outside the stored pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// y = A x.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let offsets = &self.row_offsets;
        let cols = &self.col_indices;
        let vals = &self.values;
        par::for_each_indexed(y, |i, yi| {
            let mut acc = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                acc += vals[k] * x[cols[k] as usize];
            }
            *yi = acc;
        });
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// uᵀ A u.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let au = self.matvec(u);
        par::dot(u, &au)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// self += c * other. The pattern of `other` must be contained in the
    /// pattern of `self` (true for boundary mass vs. stiffness on these
    /// meshes, since boundary-adjacent nodes always share an element).
    pub fn add_scaled_subset(&mut self, other: &SparseSymMatrix, c: f64) {
        assert_eq!(self.n, other.n);
        for i in 0..other.n {
            let lo = other.row_offsets[i];
            let hi = other.row_offsets[i + 1];
            for k in lo..hi {
                let j = other.col_indices[k];
                let slo = self.row_offsets[i];
                let shi = self.row_offsets[i + 1];
                let pos = self.col_indices[slo..shi]
                    .binary_search(&j)
                    .unwrap_or_else(|_| {
                        panic!("pattern of added matrix not contained at ({i}, {j})")
                    });
                self.values[slo + pos] += c * other.values[k];
            }
        }
    }

    /// Largest relative symmetry defect max |a_ij - a_ji| / max|a|.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j as usize, i)).abs());
            }
        }
        worst / scale
    }

    /// Coordinate-format text dump: one `row col value` record per line.
    pub fn write_coo_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {}", i, j, v)?;
            }
        }
        Ok(())
    }
}

/// Row-parallel assembly over elements: `dofs[e]` are the four matrix
/// indices of element `e` (already folded for periodic problems) and
/// `local(e)` its 4 × 4 local matrix.
pub(crate) fn assemble_from_elements<F>(
    n_dofs: usize,
    dofs: &[[usize; 4]],
    local: F,
) -> SparseSymMatrix
where
    F: Fn(usize) -> [[f64; 4]; 4] + Sync,
{
    // dof -> adjacent (element, local index) list, flattened.
    let mut counts = vec![0usize; n_dofs + 1];
    for conn in dofs {
        for &d in conn {
            counts[d + 1] += 1;
        }
    }
    for i in 0..n_dofs {
        counts[i + 1] += counts[i];
    }
    let adj_offsets = counts;
    let mut adj = vec![(0u32, 0u8); adj_offsets[n_dofs]];
    {
        let mut cursor = adj_offsets.clone();
        for (e, conn) in dofs.iter().enumerate() {
            for (a, &d) in conn.iter().enumerate() {
                adj[cursor[d]] = (e as u32, a as u8);
                cursor[d] += 1;
            }
        }
    }

    // Pass 1: sorted unique column set per row.
    let row_cols: Vec<Vec<usize>> = par::map_indexed(n_dofs, |r| {
        let mut cols: Vec<usize> = Vec::with_capacity(16);
        for &(e, _) in &adj[adj_offsets[r]..adj_offsets[r + 1]] {
            cols.extend_from_slice(&dofs[e as usize]);
        }
        cols.sort_unstable();
        cols.dedup();
        cols
    });
    let mut row_offsets = vec![0usize; n_dofs + 1];
    for r in 0..n_dofs {
        row_offsets[r + 1] = row_offsets[r] + row_cols[r].len();
    }
    let nnz = row_offsets[n_dofs];
    let mut col_indices = vec![0u32; nnz];
    for r in 0..n_dofs {
        for (slot, &c) in col_indices[row_offsets[r]..row_offsets[r + 1]]
            .iter_mut()
            .zip(&row_cols[r])
        {
            *slot = c as u32;
        }
    }
    drop(row_cols);

    // Pass 2: accumulate values row by row.
    let mut values = vec![0.0f64; nnz];
    {
        let cols_ref = &col_indices;
        let offsets_ref = &row_offsets;
        par::for_each_row_slice(&mut values, offsets_ref, |r, row_vals| {
            let cols = &cols_ref[offsets_ref[r]..offsets_ref[r + 1]];
            for &(e, a) in &adj[adj_offsets[r]..adj_offsets[r + 1]] {
                let e = e as usize;
                let k = local(e);
                let conn = &dofs[e];
                let a = a as usize;
                for (b, &cdof) in conn.iter().enumerate() {
                    let pos = cols
                        .binary_search(&(cdof as u32))
                        .expect("column in own pattern");
                    row_vals[pos] += k[a][b];
                }
            }
        });
    }

    SparseSymMatrix {
        n: n_dofs,
        row_offsets,
        col_indices,
        values,
    }
}

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Two-phase periodic microstructure: value `kappa2` on the centered square
/// inclusion `[rho, 1-rho]²` of the unit cell, `kappa1` outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrostructureSpec {
    pub kappa1: f64,
    pub kappa2: f64,
    pub rho: f64,
}

impl MicrostructureSpec {
    pub fn new(kappa1: f64, kappa2: f64, rho: f64) -> Result<Self, AssemblyError> {
        if !(rho > 0.0 && rho < 0.5) {
            return Err(AssemblyError::InvalidInset { rho });
        }
        if kappa1 <= 0.0 || kappa2 <= 0.0 {
            return Err(AssemblyError::NonPositiveCoefficient);
        }
        Ok(MicrostructureSpec {
            kappa1,
            kappa2,
            rho,
        })
    }

    /// Coefficient at a cell-local coordinate y in [0, 1)².
    pub fn value_at(&self, y: [f64; 2]) -> f64 {
        let inside = y.iter().all(|&c| c >= self.rho && c <= 1.0 - self.rho);
        if inside {
            self.kappa2
        } else {
            self.kappa1
        }
    }

    pub fn min_value(&self) -> f64 {
        self.kappa1.min(self.kappa2)
    }

    pub fn max_value(&self) -> f64 {
        self.kappa1.max(self.kappa2)
    }
}

/// Per-element scalar coefficient values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn constant(value: f64, n_elements: usize) -> Self {
        CoefficientField {
            values: vec![value; n_elements],
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Samples an arbitrary cell-periodic coefficient at element centroids.
pub fn sample_cell_values<F>(
    mesh: &StructuredMesh,
    n_cells: usize,
    value_at: F,
) -> Result<CoefficientField, AssemblyError>
where
    F: Fn([f64; 2]) -> f64 + Sync,
{
    if mesh.nx % n_cells != 0 {
        return Err(AssemblyError::GridNotCellAligned {
            nx: mesh.nx,
            n_cells,
        });
    }
    let values = par::map_indexed(mesh.n_elements(), |e| {
        let (_, y) = locate_cell(mesh.element_centroid(e), n_cells);
        value_at(y)
    });
    Ok(CoefficientField { values })
}

/// Samples the two-phase microstructure on a mesh of `n_cells` cells per
/// axis. The inclusion boundary must align with element faces
/// (`rho * M` integer, e.g. M divisible by 4 for rho = 0.25), otherwise the
/// piecewise-constant sampling would misrepresent the volume fraction.
pub fn sample_coefficient(
    spec: &MicrostructureSpec,
    mesh: &StructuredMesh,
    n_cells: usize,
) -> Result<CoefficientField, AssemblyError> {
    if !(spec.rho > 0.0 && spec.rho < 0.5) {
        return Err(AssemblyError::InvalidInset { rho: spec.rho });
    }
    if mesh.nx % n_cells != 0 {
        return Err(AssemblyError::GridNotCellAligned {
            nx: mesh.nx,
            n_cells,
        });
    }
    let m = mesh.nx / n_cells;
    let cut = spec.rho * m as f64;
    if (cut - cut.round()).abs() > 1e-9 {
        return Err(AssemblyError::InterfaceMisaligned { m, rho: spec.rho });
    }
    sample_cell_values(mesh, n_cells, |y| spec.value_at(y))
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Stiffness matrix for a per-element scalar coefficient. Scalar values are
/// routed through the tensor kernel (as kappa·I), so a constant field and a
/// constant tensor produce bitwise-identical matrices.
pub fn assemble_stiffness(
    mesh: &StructuredMesh,
    field: &CoefficientField,
) -> Result<SparseSymMatrix, AssemblyError> {
    if field.values.len() != mesh.n_elements() {
        return Err(AssemblyError::DimensionMismatch {
            expected: mesh.n_elements(),
            got: field.values.len(),
        });
    }
    let values = &field.values;
    Ok(assemble_from_elements(
        mesh.n_nodes(),
        &mesh.elements,
        |e| {
            let k = values[e];
            element_stiffness(&[[k, 0.0], [0.0, k]])
        },
    ))
}

/// Stiffness matrix for a constant 2 × 2 tensor coefficient.
pub fn assemble_stiffness_tensor(mesh: &StructuredMesh, tensor: &[[f64; 2]; 2]) -> SparseSymMatrix {
    let local = element_stiffness(tensor);
    assemble_from_elements(mesh.n_nodes(), &mesh.elements, |_| local)
}

/// Boundary mass matrix over all edges carrying one of `tags`:
/// M_ij = ∫ φ_i φ_j along the tagged segments. The total entry sum equals
/// the segment length.
pub fn assemble_boundary_mass_tags(mesh: &StructuredMesh, tags: &[BoundaryTag]) -> SparseSymMatrix {
    let h = mesh.h();
    let (d, o) = (h / 3.0, h / 6.0);
    let mut triplets = Vec::new();
    for edge in mesh.boundary_edges.iter().filter(|e| tags.contains(&e.tag)) {
        let [a, b] = edge.nodes;
        triplets.push((a, a, d));
        triplets.push((b, b, d));
        triplets.push((a, b, o));
        triplets.push((b, a, o));
    }
    SparseSymMatrix::from_triplets(mesh.n_nodes(), &triplets)
}

pub fn assemble_boundary_mass(mesh: &StructuredMesh, tag: BoundaryTag) -> SparseSymMatrix {
    assemble_boundary_mass_tags(mesh, &[tag])
}

/// Load vector b_i = f ∫_Ω φ_i + g ∫ φ_i over the edges tagged with any of
/// `g_tags`; both integrals are exact for constant data.
pub fn assemble_load(mesh: &StructuredMesh, f: f64, g: f64, g_tags: &[BoundaryTag]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    let h = mesh.h();
    if f != 0.0 {
        let w = f * h * h / 4.0;
        for conn in &mesh.elements {
            for &v in conn {
                b[v] += w;
            }
        }
    }
    if g != 0.0 {
        let w = g * h / 2.0;
        for edge in mesh
            .boundary_edges
            .iter()
            .filter(|e| g_tags.contains(&e.tag))
        {
            b[edge.nodes[0]] += w;
            b[edge.nodes[1]] += w;
        }
    }
    b
}

/// System after symmetric elimination of constrained (homogeneous
/// Dirichlet) nodes.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: SparseSymMatrix,
    pub rhs: Vec<f64>,
    /// Free-index -> full-node index.
    pub free_nodes: Vec<usize>,
    /// Full-node -> free index, `usize::MAX` for constrained nodes.
    pub node_to_free: Vec<usize>,
}

impl ReducedSystem {
    /// Restricts a full nodal vector to the free nodes.
    pub fn reduce_vec(&self, full: &[f64]) -> Vec<f64> {
        self.free_nodes.iter().map(|&n| full[n]).collect()
    }

    /// Expands a free vector to a full nodal vector, zero on constrained
    /// nodes.
    pub fn expand_vec(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.node_to_free.len()];
        for (k, &n) in self.free_nodes.iter().enumerate() {
            full[n] = reduced[k];
        }
        full
    }
}

/// Symmetric elimination of an explicit constrained-node set.
pub fn apply_dirichlet_nodes(
    matrix: &SparseSymMatrix,
    rhs: &[f64],
    constrained: &[usize],
) -> Result<ReducedSystem, AssemblyError> {
    if constrained.is_empty() {
        return Err(AssemblyError::EmptyDirichlet);
    }
    let n = matrix.n();
    let mut node_to_free = vec![usize::MAX; n];
    for &c in constrained {
        node_to_free[c] = usize::MAX - 1; // mark
    }
    let mut free_nodes = Vec::with_capacity(n - constrained.len());
    for node in 0..n {
        if node_to_free[node] == usize::MAX {
            node_to_free[node] = free_nodes.len();
            free_nodes.push(node);
        } else {
            node_to_free[node] = usize::MAX;
        }
    }

    let rows: Vec<(Vec<u32>, Vec<f64>)> = par::map_indexed(free_nodes.len(), |k| {
        let (cols, vals) = matrix.row(free_nodes[k]);
        let mut rcols = Vec::with_capacity(cols.len());
        let mut rvals = Vec::with_capacity(cols.len());
        for (&j, &v) in cols.iter().zip(vals) {
            let fj = node_to_free[j as usize];
            if fj != usize::MAX {
                rcols.push(fj as u32);
                rvals.push(v);
            }
        }
        (rcols, rvals)
    });
    let mut row_offsets = vec![0usize; free_nodes.len() + 1];
    for (k, (cols, _)) in rows.iter().enumerate() {
        row_offsets[k + 1] = row_offsets[k] + cols.len();
    }
    let mut col_indices = Vec::with_capacity(row_offsets[free_nodes.len()]);
    let mut values = Vec::with_capacity(row_offsets[free_nodes.len()]);
    for (cols, vals) in rows {
        col_indices.extend(cols);
        values.extend(vals);
    }
    let reduced_rhs = free_nodes.iter().map(|&nd| rhs[nd]).collect();
    Ok(ReducedSystem {
        matrix: SparseSymMatrix {
            n: free_nodes.len(),
            row_offsets,
            col_indices,
            values,
        },
        rhs: reduced_rhs,
        free_nodes,
        node_to_free,
    })
}

/// Symmetric elimination of all nodes on edges carrying one of `tags`.
pub fn apply_dirichlet(
    matrix: &SparseSymMatrix,
    rhs: &[f64],
    mesh: &StructuredMesh,
    tags: &[BoundaryTag],
) -> Result<ReducedSystem, AssemblyError> {
    let constrained = mesh.boundary_nodes(tags);
    apply_dirichlet_nodes(matrix, rhs, &constrained)
}
