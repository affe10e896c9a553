//! Discrete solutions: nodal coefficient storage and element-local trilinear
//! evaluation of (u, ∇u, P, Curl P) at arbitrary points.

use super::mesh::{DofMap, HexMesh, NODE_COMPONENTS};
use super::operator::CgOutcome;
use crate::tensor_fields::{FieldExpr, Mat3, Point3, Vec3};

const B: usize = NODE_COMPONENTS;

/// Pointwise state of the discrete pair (u, P).
#[derive(Clone, Copy, Debug)]
pub struct PointState {
    pub u: Vec3,
    pub grad_u: Mat3,
    pub p: Mat3,
    pub curl_p: Mat3,
}

/// Nodal coefficients of the 12 scalar fields, kept both as the free-dof
/// vector and as a full nodal array (the evaluation cache).
#[derive(Clone)]
pub struct DiscreteSolution {
    mesh: HexMesh,
    nodal: Vec<f64>,
    free: Vec<f64>,
    outcome: Option<CgOutcome>,
}

impl DiscreteSolution {
    pub fn from_free_vector(
        mesh: HexMesh,
        dofmap: &DofMap,
        free: Vec<f64>,
        outcome: Option<CgOutcome>,
    ) -> Self {
        assert_eq!(free.len(), dofmap.num_dofs());
        let mut nodal = vec![0.0; mesh.num_nodes() * B];
        for fi in 0..dofmap.num_free_nodes() {
            let node = dofmap.node_of_free(fi);
            for c in 0..B {
                nodal[node * B + c] = free[dofmap.dof(fi, c)];
            }
        }
        Self { mesh, nodal, free, outcome }
    }

    pub fn zero(mesh: HexMesh) -> Self {
        let dofmap = DofMap::new(&mesh);
        let n = dofmap.num_dofs();
        Self::from_free_vector(mesh, &dofmap, vec![0.0; n], None)
    }

    /// Nodal interpolation of analytic fields, boundary values included.
    pub fn interpolate(mesh: HexMesh, u: &FieldExpr, p: &FieldExpr) -> Self {
        assert_eq!(u.shape(), (3, 1));
        assert_eq!(p.shape(), (3, 3));
        let mut nodal = vec![0.0; mesh.num_nodes() * B];
        for node in 0..mesh.num_nodes() {
            let x = mesh.node_coord(node);
            let uv = u.eval(&x);
            let pv = p.eval(&x);
            for c in 0..3 {
                nodal[node * B + c] = uv[(c, 0)];
            }
            for i in 0..3 {
                for j in 0..3 {
                    nodal[node * B + 3 + 3 * i + j] = pv[(i, j)];
                }
            }
        }
        let dofmap = DofMap::new(&mesh);
        let mut free = vec![0.0; dofmap.num_dofs()];
        for fi in 0..dofmap.num_free_nodes() {
            let node = dofmap.node_of_free(fi);
            for c in 0..B {
                free[dofmap.dof(fi, c)] = nodal[node * B + c];
            }
        }
        Self { mesh, nodal, free, outcome: None }
    }

    pub fn mesh(&self) -> &HexMesh {
        &self.mesh
    }

    pub fn free_vector(&self) -> &[f64] {
        &self.free
    }

    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    pub fn solve_outcome(&self) -> Option<CgOutcome> {
        self.outcome
    }

    pub fn node_components(&self, node: usize) -> &[f64] {
        &self.nodal[node * B..(node + 1) * B]
    }

    /// Trilinear evaluation with in-cell analytic derivatives. The point must
    /// lie in the closed cube.
    pub fn evaluate(&self, x: &Point3) -> PointState {
        let r = self.mesh.half_side();
        let tol = 1e-12 * r;
        for c in x.coords {
            assert!(c.abs() <= r + tol, "point ({}, {}, {}) outside the domain", x.coords[0], x.coords[1], x.coords[2]);
        }
        let cell = self.mesh.locate_cell(x);
        let min = self.mesh.cell_min_corner(cell);
        let s = self.mesh.spacing();
        let xi = [
            ((x.coords[0] - min.coords[0]) / s).clamp(0.0, 1.0),
            ((x.coords[1] - min.coords[1]) / s).clamp(0.0, 1.0),
            ((x.coords[2] - min.coords[2]) / s).clamp(0.0, 1.0),
        ];
        let (theta, grad) = super::assembly::shape_functions(xi, s);
        let nodes = self.mesh.cell_nodes(cell);

        let mut vals = [0.0f64; B];
        let mut grads = [[0.0f64; 3]; B];
        for (l, &node) in nodes.iter().enumerate() {
            let row = &self.nodal[node * B..(node + 1) * B];
            let t = theta[l];
            let g = grad[l];
            for c in 0..B {
                let v = row[c];
                vals[c] += t * v;
                for a in 0..3 {
                    grads[c][a] += g[a] * v;
                }
            }
        }

        let u = [vals[0], vals[1], vals[2]];
        let mut grad_u = [[0.0; 3]; 3];
        for c in 0..3 {
            grad_u[c] = grads[c];
        }
        let mut p = [[0.0; 3]; 3];
        let mut gp = [[[0.0f64; 3]; 3]; 3]; // gp[i][j][k] = ∂_k P_ij
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = vals[3 + 3 * i + j];
                gp[i][j] = grads[3 + 3 * i + j];
            }
        }
        let mut curl_p = [[0.0; 3]; 3];
        for i in 0..3 {
            curl_p[i] = [
                gp[i][2][1] - gp[i][1][2],
                gp[i][0][2] - gp[i][2][0],
                gp[i][1][0] - gp[i][0][1],
            ];
        }
        PointState { u, grad_u, p, curl_p }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_fields::{field_from_components, C2Scalar, MatMN, SmoothScalar};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn linear_fields() -> (FieldExpr, FieldExpr) {
        // u = (2x1 − x3, x2, x1 + x2 + x3); P affine row-major ramp.
        let u = field_from_components(vec![
            vec![Arc::new(SmoothScalar::linear(0.0, [2.0, 0.0, -1.0])) as Arc<dyn C2Scalar>],
            vec![Arc::new(SmoothScalar::linear(0.0, [0.0, 1.0, 0.0]))],
            vec![Arc::new(SmoothScalar::linear(0.5, [1.0, 1.0, 1.0]))],
        ]);
        let p = field_from_components(
            (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| {
                            let k = (3 * i + j) as f64;
                            Arc::new(SmoothScalar::linear(0.1 * k, [0.2 * k, -0.1, 0.3]))
                                as Arc<dyn C2Scalar>
                        })
                        .collect()
                })
                .collect(),
        );
        (u, p)
    }

    #[test]
    fn interpolant_reproduces_linear_fields_exactly() {
        let mesh = HexMesh::new(1.0, 3).unwrap();
        let (u, p) = linear_fields();
        let sol = DiscreteSolution::interpolate(mesh, &u, &p);
        for x in [
            Point3::new(0.35, -0.2, 0.9),
            Point3::new(-0.99, 0.4, 0.11),
            Point3::new(0.0, 0.0, 0.0),
        ] {
            let st = sol.evaluate(&x);
            let uv = u.eval(&x);
            for c in 0..3 {
                assert_abs_diff_eq!(st.u[c], uv[(c, 0)], epsilon = 1e-13);
            }
            let ju = u.jacobian_at(&x);
            for c in 0..3 {
                for a in 0..3 {
                    assert_abs_diff_eq!(st.grad_u[c][a], ju[a][(c, 0)], epsilon = 1e-12);
                }
            }
            let pv = p.eval(&x);
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(st.p[i][j], pv[(i, j)], epsilon = 1e-13);
                }
            }
            let curl = crate::tensor_fields::curl_mat_at(&p, &x, crate::tensor_fields::CurlConvention::Standard);
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(st.curl_p[i][j], curl[(i, j)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_solution_evaluates_to_zero() {
        let mesh = HexMesh::new(1.0, 2).unwrap();
        let sol = DiscreteSolution::zero(mesh);
        let st = sol.evaluate(&Point3::new(0.3, 0.3, -0.4));
        assert_eq!(st.u, [0.0; 3]);
        assert_eq!(st.p, [[0.0; 3]; 3]);
    }

    #[test]
    #[should_panic(expected = "outside the domain")]
    fn evaluation_outside_domain_panics() {
        let mesh = HexMesh::new(1.0, 2).unwrap();
        let sol = DiscreteSolution::zero(mesh);
        sol.evaluate(&Point3::new(1.5, 0.0, 0.0));
    }

    #[test]
    fn from_free_vector_respects_boundary_mask() {
        let mesh = HexMesh::new(1.0, 2).unwrap();
        let dofmap = DofMap::new(&mesh);
        let free = vec![1.0; dofmap.num_dofs()];
        let sol = DiscreteSolution::from_free_vector(mesh.clone(), &dofmap, free, None);
        for node in 0..mesh.num_nodes() {
            let expect = if mesh.is_boundary_node(node) { 0.0 } else { 1.0 };
            assert!(sol.node_components(node).iter().all(|v| *v == expect));
        }
        // Interpolation keeps boundary samples.
        let ones = FieldExpr::constant(MatMN::from_fn(3, 1, |_, _| 1.0));
        let zero = FieldExpr::constant(MatMN::zeros(3, 3));
        let interp = DiscreteSolution::interpolate(mesh, &ones, &zero);
        assert!(interp.node_components(0)[0] == 1.0);
    }
}
