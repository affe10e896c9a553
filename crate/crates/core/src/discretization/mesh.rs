//! Structured, axis-aligned hexahedral mesh of the cube (−r, r)³.

use thiserror::Error;

use crate::tensor_fields::{CubeDomain, Point3};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least 2 cells per axis, got {0}")]
    TooCoarse(usize),
    #[error("mesh half side must be positive, got {0}")]
    BadHalfSide(f64),
}

/// Uniform hexahedral mesh: N cells per axis, (N+1)³ nodes, spacing 2r/N.
/// Node and cell data are derived from indices rather than stored.
#[derive(Clone, Debug)]
pub struct HexMesh {
    half_side: f64,
    cells_per_axis: usize,
}

impl HexMesh {
    pub fn new(half_side: f64, cells_per_axis: usize) -> Result<Self, MeshError> {
        if half_side <= 0.0 {
            return Err(MeshError::BadHalfSide(half_side));
        }
        if cells_per_axis < 2 {
            return Err(MeshError::TooCoarse(cells_per_axis));
        }
        Ok(Self { half_side, cells_per_axis })
    }

    pub fn half_side(&self) -> f64 {
        self.half_side
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_side / self.cells_per_axis as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells_per_axis + 1
    }

    pub fn num_nodes(&self) -> usize {
        let m = self.nodes_per_axis();
        m * m * m
    }

    pub fn num_cells(&self) -> usize {
        let n = self.cells_per_axis;
        n * n * n
    }

    pub fn domain(&self) -> CubeDomain {
        CubeDomain::centered(self.half_side)
    }

    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.nodes_per_axis();
        (i * m + j) * m + k
    }

    pub fn node_ijk(&self, id: usize) -> (usize, usize, usize) {
        let m = self.nodes_per_axis();
        (id / (m * m), (id / m) % m, id % m)
    }

    pub fn node_coord(&self, id: usize) -> Point3 {
        let (i, j, k) = self.node_ijk(id);
        let s = self.spacing();
        Point3::new(
            -self.half_side + i as f64 * s,
            -self.half_side + j as f64 * s,
            -self.half_side + k as f64 * s,
        )
    }

    pub fn is_boundary_node(&self, id: usize) -> bool {
        let (i, j, k) = self.node_ijk(id);
        let n = self.cells_per_axis;
        i == 0 || j == 0 || k == 0 || i == n || j == n || k == n
    }

    pub fn cell_id(&self, ci: usize, cj: usize, ck: usize) -> usize {
        let n = self.cells_per_axis;
        (ci * n + cj) * n + ck
    }

    pub fn cell_ijk(&self, id: usize) -> (usize, usize, usize) {
        let n = self.cells_per_axis;
        (id / (n * n), (id / n) % n, id % n)
    }

    pub fn cell_min_corner(&self, id: usize) -> Point3 {
        let (ci, cj, ck) = self.cell_ijk(id);
        let s = self.spacing();
        Point3::new(
            -self.half_side + ci as f64 * s,
            -self.half_side + cj as f64 * s,
            -self.half_side + ck as f64 * s,
        )
    }

    /// Eight corner node ids; local corner l has offsets (l>>2, l>>1, l) & 1.
    pub fn cell_nodes(&self, id: usize) -> [usize; 8] {
        let (ci, cj, ck) = self.cell_ijk(id);
        let mut out = [0usize; 8];
        for (l, o) in out.iter_mut().enumerate() {
            *o = self.node_id(ci + ((l >> 2) & 1), cj + ((l >> 1) & 1), ck + (l & 1));
        }
        out
    }

    /// Cell containing x, clamped to the mesh on and beyond the boundary.
    pub fn locate_cell(&self, x: &Point3) -> usize {
        let s = self.spacing();
        let n = self.cells_per_axis as i64;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = ((x.coords[a] + self.half_side) / s).floor() as i64;
            idx[a] = t.clamp(0, n - 1) as usize;
        }
        self.cell_id(idx[0], idx[1], idx[2])
    }
}

/// Component layout per node: u1..u3 then P11, P12, ..., P33 (row-major).
pub const NODE_COMPONENTS: usize = 12;

/// Free/constrained partition of the nodal degrees of freedom. Every
/// component of every boundary node is constrained to zero; interior nodes
/// carry 12 contiguous unknowns each, ordered by node id.
#[derive(Clone, Debug)]
pub struct DofMap {
    free_index: Vec<Option<u32>>,
    free_nodes: Vec<u32>,
}

impl DofMap {
    pub fn new(mesh: &HexMesh) -> Self {
        let mut free_index = vec![None; mesh.num_nodes()];
        let mut free_nodes = Vec::new();
        for id in 0..mesh.num_nodes() {
            if !mesh.is_boundary_node(id) {
                free_index[id] = Some(free_nodes.len() as u32);
                free_nodes.push(id as u32);
            }
        }
        Self { free_index, free_nodes }
    }

    pub fn num_free_nodes(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.free_nodes.len() * NODE_COMPONENTS
    }

    pub fn free_of_node(&self, node: usize) -> Option<usize> {
        self.free_index[node].map(|v| v as usize)
    }

    pub fn node_of_free(&self, free: usize) -> usize {
        self.free_nodes[free] as usize
    }

    pub fn dof(&self, free_node: usize, component: usize) -> usize {
        debug_assert!(component < NODE_COMPONENTS);
        free_node * NODE_COMPONENTS + component
    }
}
