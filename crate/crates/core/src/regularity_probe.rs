//! Difference-quotient probes on computed solutions: inner-variation
//! differences of the displacement, Piola-transformed differences of the
//! tensor field, plain translation differences on an interior subcube, the
//! dual-pairing ratio against discrete trial fields, and a discrete
//! coercivity witness.
//!
//! The curl of the transformed tensor field is evaluated through the
//! (independently verified) covariant transformation identity from the
//! discrete curl, never by differentiating the composed piecewise-trilinear
//! interpolant across mapped element boundaries.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::discretization::{
    assemble, integrate_mesh, solution_u_norms, solve_cg, CgConfig, DiscreteSolution, DofMap,
    HexMesh, SolveError,
};
use crate::inner_variation::{scaled_direction, Cutoff, InnerVariationError, InnerVariationMap};
use crate::material::{norm_block_coefficient, MicromorphicMaterial};
use crate::tensor_fields::{
    dot3, mat3_transpose, CubeDomain, FieldExpr, Mat3, MatMN, Point3, Vec3,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Map(#[from] InnerVariationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("magnitudes must be strictly decreasing and bounded by h_cap = {h_cap}")]
    BadMagnitudes { h_cap: f64 },
    #[error("smallest |h| = {h} is below the resolved scale 2·(2r/N) = {min} of the mesh")]
    MeshTooCoarse { h: f64, min: f64 },
    #[error("shifted subdomain escapes the computational domain")]
    ShiftEscapesDomain,
}

/// Sweep configuration: cutoff geometry, step direction, magnitudes and the
/// stabilization acceptance knob.
#[derive(Clone)]
pub struct ProbeConfig {
    pub cutoff: Arc<Cutoff>,
    pub direction: Vec3,
    pub magnitudes: Vec<f64>,
    pub delta_min: f64,
    pub gauss_order: usize,
    /// Accepted max/min spread of the ratio columns over the sweep.
    pub stabilization_tolerance: f64,
    /// When set, refuse to probe below twice the mesh spacing instead of
    /// flagging rows as unresolved.
    pub require_mesh_resolution: bool,
}

impl ProbeConfig {
    /// Dyadic sweep h_cap/2, h_cap/4, ... with `levels` entries.
    pub fn dyadic(
        cutoff: Arc<Cutoff>,
        direction: Vec3,
        levels: usize,
        delta_min: f64,
    ) -> Self {
        let h_cap = cutoff.admissible_h_cap(delta_min);
        let magnitudes = crate::inner_variation::dyadic_magnitudes(h_cap, levels);
        Self {
            cutoff,
            direction,
            magnitudes,
            delta_min,
            gauss_order: 3,
            stabilization_tolerance: 1.25,
            require_mesh_resolution: false,
        }
    }

    pub fn h_cap(&self) -> f64 {
        self.cutoff.admissible_h_cap(self.delta_min)
    }

    fn validate(&self, mesh: Option<&HexMesh>) -> Result<(), ProbeError> {
        let h_cap = self.h_cap();
        let decreasing = self.magnitudes.windows(2).all(|w| w[0] > w[1]);
        let bounded = self.magnitudes.iter().all(|&m| m >= 0.0 && m <= h_cap * (1.0 + 1e-12));
        if self.magnitudes.is_empty() || !decreasing || !bounded {
            return Err(ProbeError::BadMagnitudes { h_cap });
        }
        if self.require_mesh_resolution {
            if let Some(mesh) = mesh {
                let min = 2.0 * mesh.spacing();
                if let Some(&smallest) = self.magnitudes.iter().filter(|m| **m > 0.0).next_back() {
                    if smallest < min {
                        return Err(ProbeError::MeshTooCoarse { h: smallest, min });
                    }
                }
            }
        }
        Ok(())
    }

    /// Interior subcube C_{ρ/2} used by the translation probe.
    pub fn interior_subdomain(&self) -> CubeDomain {
        CubeDomain::centered(0.5 * self.cutoff.rho())
    }
}

/// One sweep row of the inner-variation probe.
#[derive(Clone, Copy, Debug)]
pub struct ProbeRow {
    pub h: f64,
    pub du_h1: f64,
    pub du_ratio: f64,
    pub dp_l2: f64,
    pub dp_ratio: f64,
    pub dcurlp_l2: f64,
    pub dcurlp_ratio: f64,
    pub mesh_resolved: bool,
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// max/min of each ratio column: (du, dP, dCurlP).
    pub column_spread: [f64; 3],
    /// Worst column spread.
    pub stabilization: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// max/min over positive entries; 1.0 when the column is identically zero
/// (norms of a vanishing quantity stabilize trivially).
fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if max <= 1e-14 {
        return 1.0;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn frob_sq(m: &Mat3) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn mat3_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

fn mat3_mul_local(a: &Mat3, b: &Mat3) -> Mat3 {
    crate::tensor_fields::mat3_mul(a, b)
}

/// Difference-quotient sweep of ‖u − u∘T_h‖_{H¹}, ‖(1 − 𝒯_h)P‖_{L²} and
/// ‖Curl(1 − 𝒯_h)P‖_{L²} with ratios against |h|. Integration runs over the
/// whole mesh; the integrands vanish outside the cutoff support.
pub fn probe_inner_variation(
    sol: &DiscreteSolution,
    cfg: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    probe_inner_variation_restricted(sol, cfg, None)
}

/// Same probe with integration restricted to `sub` (support diagnostics).
pub fn probe_inner_variation_restricted(
    sol: &DiscreteSolution,
    cfg: &ProbeConfig,
    sub: Option<&CubeDomain>,
) -> Result<ProbeReport, ProbeError> {
    cfg.validate(Some(sol.mesh()))?;
    let resolved_scale = 2.0 * sol.mesh().spacing();
    let mut rows = Vec::with_capacity(cfg.magnitudes.len());
    for &mag in &cfg.magnitudes {
        if mag == 0.0 {
            rows.push(ProbeRow {
                h: 0.0,
                du_h1: 0.0,
                du_ratio: 0.0,
                dp_l2: 0.0,
                dp_ratio: 0.0,
                dcurlp_l2: 0.0,
                dcurlp_ratio: 0.0,
                mesh_resolved: false,
            });
            continue;
        }
        let h = scaled_direction(cfg.direction, mag);
        let map = InnerVariationMap::new(cfg.cutoff.clone(), h, cfg.delta_min)?;

        let du_sq = integrate_mesh(sol.mesh(), sub, cfg.gauss_order, |x| {
            let here = sol.evaluate(x);
            let there = sol.evaluate(&map.apply(x));
            let jac = map.jacobian(x);
            let du = sub3(here.u, there.u);
            let grad_comp = mat3_mul_local(&there.grad_u, &jac);
            du.iter().map(|v| v * v).sum::<f64>() + frob_sq(&mat3_sub(&here.grad_u, &grad_comp))
        });
        let dp_sq = integrate_mesh(sol.mesh(), sub, cfg.gauss_order, |x| {
            let here = sol.evaluate(x);
            let there = sol.evaluate(&map.apply(x));
            let jac = map.jacobian(x);
            frob_sq(&mat3_sub(&here.p, &mat3_mul_local(&there.p, &jac)))
        });
        let dcurl_sq = integrate_mesh(sol.mesh(), sub, cfg.gauss_order, |x| {
            let here = sol.evaluate(x);
            let there = sol.evaluate(&map.apply(x));
            let det = map.jacobian_det(x);
            let inv_t = mat3_transpose(&map.jacobian_inv(x));
            let mut transformed = mat3_mul_local(&there.curl_p, &inv_t);
            for row in transformed.iter_mut() {
                for v in row.iter_mut() {
                    *v *= det;
                }
            }
            frob_sq(&mat3_sub(&here.curl_p, &transformed))
        });

        let du_h1 = du_sq.sqrt();
        let dp_l2 = dp_sq.sqrt();
        let dcurlp_l2 = dcurl_sq.sqrt();
        rows.push(ProbeRow {
            h: mag,
            du_h1,
            du_ratio: du_h1 / mag,
            dp_l2,
            dp_ratio: dp_l2 / mag,
            dcurlp_l2,
            dcurlp_ratio: dcurlp_l2 / mag,
            mesh_resolved: mag >= resolved_scale,
        });
    }

    let column_spread = [
        spread(&rows.iter().map(|r| r.du_ratio).collect::<Vec<_>>()),
        spread(&rows.iter().map(|r| r.dp_ratio).collect::<Vec<_>>()),
        spread(&rows.iter().map(|r| r.dcurlp_ratio).collect::<Vec<_>>()),
    ];
    let stabilization = column_spread.iter().copied().fold(0.0f64, f64::max);
    Ok(ProbeReport {
        rows,
        column_spread,
        stabilization,
        tolerance: cfg.stabilization_tolerance,
        pass: stabilization <= cfg.stabilization_tolerance,
    })
}

/// Translation-difference norms on a subcube:
/// (‖u(·+h) − u‖_{H¹(sub)}, ‖P(·+h) − P‖_{H(Curl;sub)}).
pub fn probe_translation(
    sol: &DiscreteSolution,
    h: Vec3,
    sub: &CubeDomain,
) -> Result<(f64, f64), ProbeError> {
    let r = sol.mesh().half_side();
    for k in 0..3 {
        let reach = sub.center.coords[k].abs() + sub.half_side + h[k].abs();
        if reach > r + 1e-12 * r {
            return Err(ProbeError::ShiftEscapesDomain);
        }
    }
    let du_sq = integrate_mesh(sol.mesh(), Some(sub), 3, |x| {
        let here = sol.evaluate(x);
        let there = sol.evaluate(&x.translated(h, 1.0));
        let du = sub3(there.u, here.u);
        du.iter().map(|v| v * v).sum::<f64>() + frob_sq(&mat3_sub(&there.grad_u, &here.grad_u))
    });
    let dp_sq = integrate_mesh(sol.mesh(), Some(sub), 3, |x| {
        let here = sol.evaluate(x);
        let there = sol.evaluate(&x.translated(h, 1.0));
        frob_sq(&mat3_sub(&there.p, &here.p)) + frob_sq(&mat3_sub(&there.curl_p, &here.curl_p))
    });
    Ok((du_sq.sqrt(), dp_sq.sqrt()))
}

#[derive(Clone, Copy, Debug)]
pub struct TranslationRow {
    pub h: f64,
    pub du_h1: f64,
    pub du_ratio: f64,
    pub dp_hcurl: f64,
    pub dp_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct TranslationReport {
    pub rows: Vec<TranslationRow>,
    pub column_spread: [f64; 2],
    pub stabilization: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Translation sweep over the configured magnitudes on C_{ρ/2}.
pub fn probe_translation_sweep(
    sol: &DiscreteSolution,
    cfg: &ProbeConfig,
) -> Result<TranslationReport, ProbeError> {
    cfg.validate(Some(sol.mesh()))?;
    let sub = cfg.interior_subdomain();
    let mut rows = Vec::new();
    for &mag in &cfg.magnitudes {
        if mag == 0.0 {
            rows.push(TranslationRow { h: 0.0, du_h1: 0.0, du_ratio: 0.0, dp_hcurl: 0.0, dp_ratio: 0.0 });
            continue;
        }
        let h = scaled_direction(cfg.direction, mag);
        let (du, dp) = probe_translation(sol, h, &sub)?;
        rows.push(TranslationRow {
            h: mag,
            du_h1: du,
            du_ratio: du / mag,
            dp_hcurl: dp,
            dp_ratio: dp / mag,
        });
    }
    let column_spread = [
        spread(&rows.iter().map(|r| r.du_ratio).collect::<Vec<_>>()),
        spread(&rows.iter().map(|r| r.dp_ratio).collect::<Vec<_>>()),
    ];
    let stabilization = column_spread.iter().copied().fold(0.0f64, f64::max);
    Ok(TranslationReport {
        rows,
        column_spread,
        stabilization,
        tolerance: cfg.stabilization_tolerance,
        pass: stabilization <= cfg.stabilization_tolerance,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DualPairingRow {
    pub h: f64,
    /// max over trial fields of |⟨f, v − v∘S_h⟩| / (|h| · ‖f‖_{L²(C_ρ)}).
    pub max_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct DualPairingReport {
    pub rows: Vec<DualPairingRow>,
    pub f_norm_rho: f64,
    pub trials: usize,
    pub stabilization: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Dual-pairing sweep: pairs a fixed force density against inverse-variation
/// differences of random normalized discrete H¹₀ trial fields.
pub fn probe_dual_pairing(
    f_field: &FieldExpr,
    cfg: &ProbeConfig,
    mesh: &HexMesh,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<DualPairingReport, ProbeError> {
    assert_eq!(f_field.shape(), (3, 1));
    cfg.validate(Some(mesh))?;
    let dofmap = DofMap::new(mesh);
    let rho_dom = CubeDomain::centered(cfg.cutoff.rho());

    // Random trial displacements, P identically zero, normalized in the full
    // discrete H¹ norm.
    let mut trial_fields = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut free = vec![0.0; dofmap.num_dofs()];
        for fnode in 0..dofmap.num_free_nodes() {
            for c in 0..3 {
                free[dofmap.dof(fnode, c)] = rng.gen_range(-1.0..1.0);
            }
        }
        let sol = DiscreteSolution::from_free_vector(mesh.clone(), &dofmap, free, None);
        let norms = solution_u_norms(&sol, None, cfg.gauss_order);
        let scale = norms.full();
        let free: Vec<f64> = sol.free_vector().iter().map(|v| v / scale).collect();
        trial_fields.push(DiscreteSolution::from_free_vector(mesh.clone(), &dofmap, free, None));
    }

    // ‖f‖_{L²(C_ρ)} by quadrature on the same mesh restriction.
    let f_norm_rho = integrate_mesh(mesh, Some(&rho_dom), cfg.gauss_order, |x| {
        let v = f_field.eval(x);
        (0..3).map(|c| v[(c, 0)] * v[(c, 0)]).sum()
    })
    .sqrt();

    // Quadrature points with weights and f-values, shared across trials.
    let spacing = mesh.spacing();
    let mut points: Vec<(Point3, f64, Vec3)> = Vec::new();
    for cell in 0..mesh.num_cells() {
        let min = mesh.cell_min_corner(cell).coords;
        let max = [min[0] + spacing, min[1] + spacing, min[2] + spacing];
        let Some((lo, hi)) = crate::discretization::quadrature::box_intersection(
            min,
            max,
            rho_dom.min_corner(),
            rho_dom.max_corner(),
        ) else {
            continue;
        };
        for (x, w) in crate::discretization::quadrature::gauss_box(lo, hi, cfg.gauss_order) {
            let v = f_field.eval(&x);
            points.push((x, w, [v[(0, 0)], v[(1, 0)], v[(2, 0)]]));
        }
    }

    let mut rows = Vec::new();
    for &mag in &cfg.magnitudes {
        if mag == 0.0 {
            rows.push(DualPairingRow { h: 0.0, max_ratio: 0.0 });
            continue;
        }
        let h = scaled_direction(cfg.direction, mag);
        let map = InnerVariationMap::new(cfg.cutoff.clone(), h, cfg.delta_min)?;
        let mapped: Vec<Point3> = points
            .iter()
            .map(|(x, _, _)| map.apply_inverse(x))
            .collect::<Result<_, _>>()?;
        let mut max_ratio = 0.0f64;
        for trial in &trial_fields {
            let mut pairing = 0.0;
            for ((x, w, fv), s) in points.iter().zip(&mapped) {
                let here = trial.evaluate(x).u;
                let there = trial.evaluate(s).u;
                pairing += w * dot3(*fv, sub3(here, there));
            }
            max_ratio = max_ratio.max(pairing.abs() / (mag * f_norm_rho));
        }
        rows.push(DualPairingRow { h: mag, max_ratio });
    }

    let stabilization = spread(&rows.iter().map(|r| r.max_ratio).collect::<Vec<_>>());
    Ok(DualPairingReport {
        rows,
        f_norm_rho,
        trials,
        stabilization,
        tolerance: cfg.stabilization_tolerance,
        pass: stabilization <= cfg.stabilization_tolerance,
    })
}

#[derive(Clone, Debug)]
pub struct CoercivityRow {
    pub label: String,
    pub n: usize,
    /// Smallest Rayleigh quotient of the operator against the discrete norm
    /// ‖∇u‖² + ‖P‖² + ‖Curl P‖².
    pub quotient: f64,
    pub outer_iterations: usize,
}

/// Inverse power iteration on the pencil (K, B), where K is the assembled
/// operator and B the Gram matrix of the discrete seminorm.
pub fn coercivity_sweep(
    materials: &[(String, MicromorphicMaterial)],
    mesh_sizes: &[usize],
    r: f64,
    cg: CgConfig,
    rng: &mut impl Rng,
) -> Result<Vec<CoercivityRow>, ProbeError> {
    let zero_f = FieldExpr::constant(MatMN::zeros(3, 1));
    let zero_m = FieldExpr::constant(MatMN::zeros(3, 3));
    let mut rows = Vec::new();
    for (label, mat) in materials {
        for &n in mesh_sizes {
            let mesh = HexMesh::new(r, n).expect("validated mesh size");
            let dofmap = DofMap::new(&mesh);
            let stiffness = assemble(&mat.block_coefficient(), &mesh, &dofmap, &zero_f, &zero_m);
            let gram = assemble(&norm_block_coefficient(), &mesh, &dofmap, &zero_f, &zero_m);
            let k = stiffness.operator;
            let b = gram.operator;

            let dim = k.dim();
            let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut quotient = f64::INFINITY;
            let mut outer = 0;
            let mut warm: Option<Vec<f64>> = None;
            for it in 1..=40 {
                outer = it;
                let mut bx = vec![0.0; dim];
                b.matvec(&x, &mut bx);
                let inner_cfg = CgConfig { tol: 1e-8, max_iter: cg.max_iter };
                let (z, _) = solve_cg(&k, &bx, warm.as_deref(), inner_cfg)?;
                let kz = k.bilinear(&z, &z);
                let bz = b.bilinear(&z, &z);
                let new_quotient = kz / bz;
                let scale = bz.sqrt();
                x = z.iter().map(|v| v / scale).collect();
                warm = Some(x.clone());
                if (new_quotient - quotient).abs() <= 1e-4 * new_quotient.abs() {
                    quotient = new_quotient;
                    break;
                }
                quotient = new_quotient;
            }
            rows.push(CoercivityRow { label: label.clone(), n, quotient, outer_iterations: outer });
        }
    }
    Ok(rows)
}
