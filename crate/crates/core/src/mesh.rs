//! Structured quadrilateral meshes of the unit square and the unit cell.
//!
//! The domain Ω = (0,1)² is meshed with a uniform NM × NM grid: N periodic
//! cells per axis (so the period is ε = 1/N), each cell sliced into M × M
//! square elements. Nodes are numbered lexicographically, `j * (nx+1) + i`,
//! and elements counterclockwise from the lower-left corner.
//!
//! Boundary layout (the contact configuration):
//! - top: homogeneous Dirichlet,
//! - left and right: Neumann,
//! - bottom left half x ∈ (0, ½): full Robin,
//! - bottom right half x ∈ (½, 1): partial Robin (flux `α·max(u,0)`).
//!
//! The unit-cell mesh additionally carries a [`PeriodicMap`] identifying
//! opposite faces, so cell problems are posed on M² unique unknowns.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeshError {
    #[error("grid must have at least one cell and one element per cell (got N={n}, M={m})")]
    EmptyGrid { n: usize, m: usize },
    #[error("N*M = {nm} is odd: the bottom-edge split point x = 1/2 must be a mesh node")]
    MidpointNotANode { nm: usize },
    #[error("cell resolution M = {m} is too coarse; need M >= 2")]
    CellTooCoarse { m: usize },
}

/// Boundary condition kind attached to a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// u = 0.
    Dirichlet,
    /// n·A∇u = g.
    Neumann,
    /// -n·A∇u = α u on the whole segment.
    Robin,
    /// -n·A∇u = α max(u, 0): Robin where the trace is positive, no flux
    /// where it is negative.
    PartialRobin,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Dirichlet,
        BoundaryTag::Neumann,
        BoundaryTag::Robin,
        BoundaryTag::PartialRobin,
    ];
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Dirichlet => "dirichlet",
            BoundaryTag::Neumann => "neumann",
            BoundaryTag::Robin => "robin",
            BoundaryTag::PartialRobin => "partial_robin",
        };
        f.write_str(s)
    }
}

/// Tag assignment for the four sides of the unit square. The bottom side is
/// split at x = 1/2 into two segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPartition {
    pub top: BoundaryTag,
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom_left: BoundaryTag,
    pub bottom_right: BoundaryTag,
}

impl BoundaryPartition {
    /// The contact layout: Dirichlet on top, Neumann on the sides, full
    /// Robin on the bottom-left half and partial Robin on the bottom-right.
    pub fn contact() -> Self {
        BoundaryPartition {
            top: BoundaryTag::Dirichlet,
            left: BoundaryTag::Neumann,
            right: BoundaryTag::Neumann,
            bottom_left: BoundaryTag::Robin,
            bottom_right: BoundaryTag::PartialRobin,
        }
    }

    pub fn has_dirichlet(&self) -> bool {
        [
            self.top,
            self.left,
            self.right,
            self.bottom_left,
            self.bottom_right,
        ]
        .contains(&BoundaryTag::Dirichlet)
    }
}

impl Default for BoundaryPartition {
    fn default() -> Self {
        Self::contact()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    /// Node pair, ordered along the boundary orientation of the side.
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Uniform tensor-product quadrilateral mesh of the unit square.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    /// Elements per axis.
    pub nx: usize,
    pub ny: usize,
    /// Node coordinates, lexicographic order: node (i, j) at index j*(nx+1)+i.
    pub node_coords: Vec<[f64; 2]>,
    /// Counterclockwise 4-node connectivity per element.
    pub elements: Vec<[usize; 4]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

impl StructuredMesh {
    fn uniform(nx: usize, ny: usize) -> Self {
        let hx = 1.0 / nx as f64;
        let hy = 1.0 / ny as f64;
        let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                node_coords.push([i as f64 * hx, j as f64 * hy]);
            }
        }
        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v0 = j * (nx + 1) + i;
                elements.push([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1]);
            }
        }
        StructuredMesh {
            nx,
            ny,
            node_coords,
            elements,
            boundary_edges: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Element side length (meshes are uniform squares of the unit domain).
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Lower-left corner of element `e`.
    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        self.node_coords[self.elements[e][0]]
    }

    /// Centroid of element `e`.
    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        let [x0, y0] = self.element_origin(e);
        let half = 0.5 * self.h();
        [x0 + half, y0 + half]
    }

    /// Sorted, de-duplicated node set of all boundary edges carrying one of
    /// the given tags.
    pub fn boundary_nodes(&self, tags: &[BoundaryTag]) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| tags.contains(&e.tag))
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn edges_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |e| e.tag == tag)
    }

    /// Plain-text dump (one record per line) for external inspection.
    pub fn write_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "nodes {}", self.n_nodes())?;
        for (idx, c) in self.node_coords.iter().enumerate() {
            writeln!(w, "node {} {} {}", idx, c[0], c[1])?;
        }
        writeln!(w, "elements {}", self.n_elements())?;
        for (idx, e) in self.elements.iter().enumerate() {
            writeln!(w, "elem {} {} {} {} {}", idx, e[0], e[1], e[2], e[3])?;
        }
        writeln!(w, "boundary_edges {}", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(w, "edge {} {} {}", e.nodes[0], e.nodes[1], e.tag)?;
        }
        Ok(())
    }
}

/// Identification of periodic follower nodes with their leaders on the
/// unit-cell mesh. Opposite faces are glued, so an (M+1)² node grid carries
/// M² unique unknowns (corners 4 → 1, face nodes 2 → 1).
#[derive(Debug, Clone)]
pub struct PeriodicMap {
    /// For every mesh node, the index of its unknown.
    pub node_to_unknown: Vec<usize>,
    /// Representative (leader) mesh node per unknown.
    pub unknown_to_node: Vec<usize>,
}

impl PeriodicMap {
    fn build(m: usize) -> Self {
        let n_nodes = (m + 1) * (m + 1);
        let mut node_to_unknown = vec![0; n_nodes];
        for j in 0..=m {
            for i in 0..=m {
                let (li, lj) = (i % m, j % m);
                node_to_unknown[j * (m + 1) + i] = lj * m + li;
            }
        }
        let mut unknown_to_node = vec![0; m * m];
        for j in 0..m {
            for i in 0..m {
                unknown_to_node[j * m + i] = j * (m + 1) + i;
            }
        }
        PeriodicMap {
            node_to_unknown,
            unknown_to_node,
        }
    }

    pub fn n_unknowns(&self) -> usize {
        self.unknown_to_node.len()
    }

    /// Leader mesh node of a mesh node.
    pub fn leader(&self, node: usize) -> usize {
        self.unknown_to_node[self.node_to_unknown[node]]
    }

    /// (follower, leader) pairs for all identified non-leader nodes.
    pub fn identifications(&self) -> Vec<(usize, usize)> {
        (0..self.node_to_unknown.len())
            .filter_map(|n| {
                let l = self.leader(n);
                (l != n).then_some((n, l))
            })
            .collect()
    }

    /// Expands a vector of unknowns to a full nodal vector.
    pub fn scatter(&self, unknowns: &[f64]) -> Vec<f64> {
        self.node_to_unknown.iter().map(|&u| unknowns[u]).collect()
    }
}

/// Builds the NM × NM mesh of Ω = (0,1)² with boundary tags from `partition`.
///
/// The grid must place a node at x = 1/2 on the bottom edge so the two
/// contact segments split along an element face; NM odd is rejected.
pub fn build_domain_mesh(
    n_cells: usize,
    m_per_cell: usize,
    partition: BoundaryPartition,
) -> Result<StructuredMesh, MeshError> {
    if n_cells == 0 || m_per_cell == 0 {
        return Err(MeshError::EmptyGrid {
            n: n_cells,
            m: m_per_cell,
        });
    }
    let nm = n_cells * m_per_cell;
    if nm % 2 != 0 {
        return Err(MeshError::MidpointNotANode { nm });
    }
    let mut mesh = StructuredMesh::uniform(nm, nm);
    let mut edges = Vec::with_capacity(4 * nm);
    // Bottom, split at i = nm/2.
    for i in 0..nm {
        let tag = if i < nm / 2 {
            partition.bottom_left
        } else {
            partition.bottom_right
        };
        edges.push(BoundaryEdge {
            nodes: [mesh.node_index(i, 0), mesh.node_index(i + 1, 0)],
            tag,
        });
    }
    for i in 0..nm {
        edges.push(BoundaryEdge {
            nodes: [mesh.node_index(i, nm), mesh.node_index(i + 1, nm)],
            tag: partition.top,
        });
    }
    for j in 0..nm {
        edges.push(BoundaryEdge {
            nodes: [mesh.node_index(0, j), mesh.node_index(0, j + 1)],
            tag: partition.left,
        });
        edges.push(BoundaryEdge {
            nodes: [mesh.node_index(nm, j), mesh.node_index(nm, j + 1)],
            tag: partition.right,
        });
    }
    mesh.boundary_edges = edges;
    Ok(mesh)
}

/// Builds the M × M mesh of the unit cell together with its periodic node
/// identification. The cell mesh carries no boundary tags.
pub fn build_cell_mesh(m: usize) -> Result<(StructuredMesh, PeriodicMap), MeshError> {
    if m < 2 {
        return Err(MeshError::CellTooCoarse { m });
    }
    Ok((StructuredMesh::uniform(m, m), PeriodicMap::build(m)))
}

/// Maps a point of Ω to its periodic cell and cell-local coordinate
/// y = x/ε mod 1. Points on a cell face belong to the cell in which their
/// local coordinate is zero; x = 1 is clamped to the last cell.
pub fn locate_cell(x: [f64; 2], n_cells: usize) -> ([usize; 2], [f64; 2]) {
    let mut cell = [0usize; 2];
    let mut local = [0f64; 2];
    for d in 0..2 {
        let scaled = x[d] * n_cells as f64;
        let idx = (scaled.floor() as usize).min(n_cells - 1);
        cell[d] = idx;
        local[d] = scaled - idx as f64;
    }
    (cell, local)
}
