//! Galerkin assembly of the coupled weak form on trilinear nodal spaces.
//!
//! All twelve scalar unknowns per node (3 displacement components, 9 tensor
//! components) use the same trilinear basis. Homogeneous essential conditions
//! are imposed by assembling over interior nodes only, which eliminates
//! boundary rows and columns symmetrically.

use rayon::prelude::*;

use super::mesh::{DofMap, HexMesh, NODE_COMPONENTS};
use super::operator::SparseOperator;
use super::quadrature::gauss_1d;
use crate::material::BlockCoefficient;
use crate::tensor_fields::{FieldExpr, Point3};

const B: usize = NODE_COMPONENTS;
const LOCAL: usize = 8 * B; // 96 local unknowns per cell
const FLAT: usize = 30;

/// Default Gauss order per axis for stiffness and load integration.
pub const ASSEMBLY_GAUSS_ORDER: usize = 2;

struct QuadPointData {
    local: [f64; 3],
    weight: f64,
    theta: [f64; 8],
    /// Flat quadruple columns of the 96 local basis functions.
    cols: Vec<[f64; FLAT]>,
    /// Sparse views of the same columns.
    cols_nz: Vec<Vec<(usize, f64)>>,
}

/// Trilinear shape values and physical gradients at a local point of the
/// reference cell [0,1]³.
pub fn shape_functions(local: [f64; 3], spacing: f64) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut theta = [0.0; 8];
    let mut grad = [[0.0; 3]; 8];
    for l in 0..8 {
        let bits = [(l >> 2) & 1, (l >> 1) & 1, l & 1];
        let f: Vec<f64> = (0..3)
            .map(|a| if bits[a] == 1 { local[a] } else { 1.0 - local[a] })
            .collect();
        theta[l] = f[0] * f[1] * f[2];
        for a in 0..3 {
            let sign = if bits[a] == 1 { 1.0 } else { -1.0 };
            let mut d = sign / spacing;
            for b in 0..3 {
                if b != a {
                    d *= f[b];
                }
            }
            grad[l][a] = d;
        }
    }
    (theta, grad)
}

fn cross_with_axis(g: [f64; 3], axis: usize) -> [f64; 3] {
    match axis {
        0 => [0.0, g[2], -g[1]],
        1 => [-g[2], 0.0, g[0]],
        2 => [g[1], -g[0], 0.0],
        _ => unreachable!(),
    }
}

fn reference_data(mesh: &HexMesh, order: usize) -> Vec<QuadPointData> {
    let spacing = mesh.spacing();
    let rule = gauss_1d(order);
    let jac = (spacing / 2.0).powi(3);
    let mut out = Vec::with_capacity(rule.len().pow(3));
    for &(ga, wa) in rule {
        for &(gb, wb) in rule {
            for &(gc, wc) in rule {
                let local = [0.5 * (ga + 1.0), 0.5 * (gb + 1.0), 0.5 * (gc + 1.0)];
                let weight = wa * wb * wc * jac;
                let (theta, grad) = shape_functions(local, spacing);
                let mut cols = vec![[0.0; FLAT]; LOCAL];
                for a in 0..8 {
                    for c in 0..3 {
                        let col = &mut cols[a * B + c];
                        col[c] = theta[a];
                        for k in 0..3 {
                            col[12 + 3 * c + k] = grad[a][k];
                        }
                    }
                    for i in 0..3 {
                        for j in 0..3 {
                            let col = &mut cols[a * B + 3 + 3 * i + j];
                            col[3 + 3 * i + j] = theta[a];
                            let cr = cross_with_axis(grad[a], j);
                            for k in 0..3 {
                                col[21 + 3 * i + k] += cr[k];
                            }
                        }
                    }
                }
                let cols_nz = cols
                    .iter()
                    .map(|col| {
                        col.iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(i, v)| (i, *v))
                            .collect()
                    })
                    .collect();
                out.push(QuadPointData { local, weight, theta, cols, cols_nz });
            }
        }
    }
    out
}

fn local_matrix(coeff: &BlockCoefficient, qps: &[QuadPointData], cell_min: &Point3, spacing: f64) -> Vec<f64> {
    let mut k = vec![0.0f64; LOCAL * LOCAL];
    let mut applied = [0.0f64; FLAT];
    for qp in qps {
        let x = Point3::new(
            cell_min.coords[0] + qp.local[0] * spacing,
            cell_min.coords[1] + qp.local[1] * spacing,
            cell_min.coords[2] + qp.local[2] * spacing,
        );
        for i in 0..LOCAL {
            coeff.apply_flat33(&x, &qp.cols[i], &mut applied);
            for j in i..LOCAL {
                let mut s = 0.0;
                for &(idx, v) in &qp.cols_nz[j] {
                    s += applied[idx] * v;
                }
                k[i * LOCAL + j] += qp.weight * s;
            }
        }
    }
    // The coefficient's quadratic form is symmetric; mirror the upper triangle
    // so the stored matrix is exactly symmetric.
    for i in 0..LOCAL {
        for j in 0..i {
            k[i * LOCAL + j] = k[j * LOCAL + i];
        }
    }
    k
}

fn scatter_cell(
    op: &mut SparseOperator,
    dofmap: &DofMap,
    nodes: &[usize; 8],
    k_local: &[f64],
) {
    let free: Vec<Option<usize>> = nodes.iter().map(|&n| dofmap.free_of_node(n)).collect();
    for a in 0..8 {
        let Some(fa) = free[a] else { continue };
        for b in 0..8 {
            let Some(fb) = free[b] else { continue };
            let mut blk = [0.0f64; B * B];
            for c1 in 0..B {
                let src = (a * B + c1) * LOCAL + b * B;
                blk[c1 * B..(c1 + 1) * B].copy_from_slice(&k_local[src..src + B]);
            }
            op.add_block(fa, fb, &blk);
        }
    }
}

/// Sorted free-node neighbor pattern of the 27-point stencil.
fn sparsity_pattern(mesh: &HexMesh, dofmap: &DofMap) -> Vec<Vec<u32>> {
    let n = mesh.cells_per_axis();
    (0..dofmap.num_free_nodes())
        .map(|f| {
            let (i, j, k) = mesh.node_ijk(dofmap.node_of_free(f));
            let mut cols = Vec::with_capacity(27);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    for dk in -1i64..=1 {
                        let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if ni < 1 || nj < 1 || nk < 1 {
                            continue;
                        }
                        let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                        if ni >= n || nj >= n || nk >= n {
                            continue;
                        }
                        if let Some(nf) = dofmap.free_of_node(mesh.node_id(ni, nj, nk)) {
                            cols.push(nf as u32);
                        }
                    }
                }
            }
            cols.sort_unstable();
            cols
        })
        .collect()
}

pub struct AssembledSystem {
    pub operator: SparseOperator,
    pub load: Vec<f64>,
}

/// Assembles the symmetric operator of the bilinear form together with the
/// load vector ∫⟨f, v⟩ + ⟨M, Q⟩ over the free unknowns.
pub fn assemble(
    coeff: &BlockCoefficient,
    mesh: &HexMesh,
    dofmap: &DofMap,
    f_load: &FieldExpr,
    m_load: &FieldExpr,
) -> AssembledSystem {
    assert_eq!(coeff.shape(), (3, 3), "assembly requires m = n = 3");
    assert_eq!(f_load.shape(), (3, 1), "force density must be a 3-vector field");
    assert_eq!(m_load.shape(), (3, 3), "moment density must be a 3×3 field");

    let qps = reference_data(mesh, ASSEMBLY_GAUSS_ORDER);
    let spacing = mesh.spacing();
    let mut op = SparseOperator::from_pattern(&sparsity_pattern(mesh, dofmap));
    let num_cells = mesh.num_cells();

    if coeff.lipschitz_bound() == 0.0 {
        // Constant coefficient on a uniform mesh: one local matrix serves
        // every cell.
        let k_local = local_matrix(coeff, &qps, &mesh.cell_min_corner(0), spacing);
        for cell in 0..num_cells {
            scatter_cell(&mut op, dofmap, &mesh.cell_nodes(cell), &k_local);
        }
    } else {
        const CHUNK: usize = 256;
        let mut start = 0;
        while start < num_cells {
            let end = (start + CHUNK).min(num_cells);
            let locals: Vec<(usize, Vec<f64>)> = (start..end)
                .into_par_iter()
                .map(|cell| {
                    (cell, local_matrix(coeff, &qps, &mesh.cell_min_corner(cell), spacing))
                })
                .collect();
            for (cell, k_local) in locals {
                scatter_cell(&mut op, dofmap, &mesh.cell_nodes(cell), &k_local);
            }
            start = end;
        }
    }

    let mut load = vec![0.0; dofmap.num_dofs()];
    for cell in 0..num_cells {
        let min = mesh.cell_min_corner(cell);
        let nodes = mesh.cell_nodes(cell);
        for qp in &qps {
            let x = Point3::new(
                min.coords[0] + qp.local[0] * spacing,
                min.coords[1] + qp.local[1] * spacing,
                min.coords[2] + qp.local[2] * spacing,
            );
            let fv = f_load.eval(&x);
            let mv = m_load.eval(&x);
            for (a, &node) in nodes.iter().enumerate() {
                let Some(fa) = dofmap.free_of_node(node) else { continue };
                let w = qp.weight * qp.theta[a];
                for c in 0..3 {
                    load[dofmap.dof(fa, c)] += w * fv[(c, 0)];
                }
                for i in 0..3 {
                    for j in 0..3 {
                        load[dofmap.dof(fa, 3 + 3 * i + j)] += w * mv[(i, j)];
                    }
                }
            }
        }
    }

    AssembledSystem { operator: op, load }
}
