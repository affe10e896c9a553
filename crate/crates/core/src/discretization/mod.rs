//! Conforming finite element discretization of the coupled weak problem on
//! the cube: structured hexahedral mesh, trilinear nodal spaces for all 12
//! scalar unknowns, symmetric sparse assembly with eliminated boundary
//! conditions, preconditioned conjugate gradients, manufactured-solution
//! loads and norm evaluation.

pub mod assembly;
pub mod mesh;
pub mod mms;
pub mod norms;
pub mod operator;
pub mod quadrature;
pub mod solution;

pub use assembly::{assemble, AssembledSystem};
pub use mesh::{DofMap, HexMesh, MeshError, NODE_COMPONENTS};
pub use mms::{
    bump_problem, convergence_study, mms_loads, observed_rate, problem_by_name, solve_weak_problem,
    zero_problem, ConvergenceRow, MmsProblem,
};
pub use norms::{
    error_p_norms, error_u_norms, field_norm, integrate_cube, integrate_mesh, solution_p_norms,
    solution_u_norms, NormKind, NormsPair,
};
pub use operator::{solve_cg, CgConfig, CgOutcome, SolveError, SparseOperator};
pub use solution::{DiscreteSolution, PointState};
