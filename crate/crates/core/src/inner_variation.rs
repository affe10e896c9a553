//! Inner-variation diffeomorphisms T_h(x) = x + φ(x)h, their Jacobian
//! algebra, and the covariant/contravariant Piola-type field transformations.
//!
//! The curl of a transformed field is always obtained by numerical
//! differentiation of the composed expression; the curl transformation
//! identity is a verification target here, never an implementation shortcut.

use std::sync::Arc;

use thiserror::Error;

use crate::tensor_fields::{
    cross3, curl_mat_at, div_mat_at, dot3, mat3_transpose, mat3_vec,
    norm3, outer3, C2Scalar, CurlConvention, FdScheme, FieldExpr, Mat3, MatMN, Point3, Vec3,
};

#[derive(Debug, Error)]
pub enum InnerVariationError {
    #[error("cutoff requires 0 < rho < r, got rho = {rho}, r = {r}")]
    InvalidCutoff { rho: f64, r: f64 },
    #[error("|h| = {h_norm} exceeds the admissible cap {h_cap}")]
    StepTooLarge { h_norm: f64, h_cap: f64 },
    #[error("Newton inversion failed to converge within {max_iter} iterations (|F| = {residual})")]
    NewtonDiverged { max_iter: usize, residual: f64 },
}

// Smooth transition S: [0,1] -> [0,1] built from e(s) = exp(-1/s):
// S(s) = e(s) / (e(s) + e(1-s)). All derivatives vanish at both endpoints.
fn bump_e(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn bump_e_d1(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        bump_e(s) / (s * s)
    }
}

fn bump_e_d2(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        bump_e(s) * (1.0 / (s * s * s * s) - 2.0 / (s * s * s))
    }
}

const S_EDGE: f64 = 1e-9;

fn smooth_step(s: f64) -> f64 {
    if s <= S_EDGE {
        return 0.0;
    }
    if s >= 1.0 - S_EDGE {
        return 1.0;
    }
    let a = bump_e(s);
    let b = bump_e(1.0 - s);
    a / (a + b)
}

fn smooth_step_d1(s: f64) -> f64 {
    if s <= S_EDGE || s >= 1.0 - S_EDGE {
        return 0.0;
    }
    let a = bump_e(s);
    let b = bump_e(1.0 - s);
    let d = a + b;
    // d/ds [a/(a+b)] with b' = -e'(1-s).
    (bump_e_d1(s) * b + a * bump_e_d1(1.0 - s)) / (d * d)
}

fn smooth_step_d2(s: f64) -> f64 {
    if s <= S_EDGE || s >= 1.0 - S_EDGE {
        return 0.0;
    }
    let a = bump_e(s);
    let b = bump_e(1.0 - s);
    let da = bump_e_d1(s);
    let e1m = bump_e_d1(1.0 - s);
    let d = a + b;
    let n = da * b + a * e1m;
    let n_prime = bump_e_d2(s) * b - a * bump_e_d2(1.0 - s);
    let d_prime = da - e1m;
    n_prime / (d * d) - 2.0 * n * d_prime / (d * d * d)
}

// One-dimensional profile: 1 on [-1/2,1/2], 0 outside (-1,1), smooth between.
fn psi(t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        smooth_step(2.0 * (1.0 - a))
    }
}

fn psi_d1(t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 || a >= 1.0 {
        0.0
    } else {
        -2.0 * t.signum() * smooth_step_d1(2.0 * (1.0 - a))
    }
}

fn psi_d2(t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 || a >= 1.0 {
        0.0
    } else {
        4.0 * smooth_step_d2(2.0 * (1.0 - a))
    }
}

/// Tensor-product smooth cutoff φ(x) = ∏ᵢ ψ(xᵢ/ρ): identically 1 on the
/// closed cube of half side ρ/2, identically 0 outside the open cube of half
/// side ρ, with analytic gradient and Hessian.
#[derive(Clone, Debug)]
pub struct Cutoff {
    r: f64,
    rho: f64,
    grad_sup: f64,
}

impl Cutoff {
    /// Points sampled per axis interval when measuring the gradient sup-norm.
    pub const GRAD_SUP_SAMPLES: usize = 4096;

    pub fn new(r: f64, rho: f64) -> Result<Self, InnerVariationError> {
        if !(rho > 0.0 && rho < r) {
            return Err(InnerVariationError::InvalidCutoff { rho, r });
        }
        let grad_sup = Self::measure_grad_sup(rho, Self::GRAD_SUP_SAMPLES);
        Ok(Self { r, rho, grad_sup })
    }

    // Dense sampling of |∇φ| over the tensor-product structure. The per-axis
    // profiles are tabulated over the transition interval; one-, two- and
    // three-axis combinations are scanned on progressively coarser grids.
    fn measure_grad_sup(rho: f64, n: usize) -> f64 {
        let table: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let t = 0.5 + 0.5 * (i as f64) / (n as f64);
                (psi(t), psi_d1(t).abs())
            })
            .collect();
        let mut sup2 = 0.0_f64;
        for &(_, dp) in &table {
            sup2 = sup2.max(dp * dp);
        }
        let coarse = |step: usize| -> Vec<(f64, f64)> {
            table.iter().step_by(step.max(1)).copied().collect()
        };
        let t2 = coarse(n / 512);
        for &(pa, da) in &t2 {
            for &(pb, db) in &t2 {
                sup2 = sup2.max(da * da * pb * pb + pa * pa * db * db);
            }
        }
        let t3 = coarse(n / 128);
        for &(pa, da) in &t3 {
            for &(pb, db) in &t3 {
                for &(pc, dc) in &t3 {
                    let v = da * da * pb * pb * pc * pc
                        + pa * pa * db * db * pc * pc
                        + pa * pa * pb * pb * dc * dc;
                    sup2 = sup2.max(v);
                }
            }
        }
        sup2.sqrt() / rho
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Measured sup-norm of ∇φ.
    pub fn grad_sup(&self) -> f64 {
        self.grad_sup
    }

    /// Largest |h| for which det ∇T_h ≥ delta_min is guaranteed:
    /// (1 − delta_min) / sup|∇φ|.
    pub fn admissible_h_cap(&self, delta_min: f64) -> f64 {
        assert!(delta_min > 0.0 && delta_min < 1.0, "delta_min must lie in (0,1)");
        (1.0 - delta_min) / self.grad_sup
    }

    pub fn value(&self, x: &Point3) -> f64 {
        x.coords.iter().map(|&c| psi(c / self.rho)).product()
    }

    pub fn gradient(&self, x: &Point3) -> Vec3 {
        let t: Vec<f64> = x.coords.iter().map(|&c| c / self.rho).collect();
        let p: Vec<f64> = t.iter().map(|&ti| psi(ti)).collect();
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut v = psi_d1(t[k]) / self.rho;
            for j in 0..3 {
                if j != k {
                    v *= p[j];
                }
            }
            g[k] = v;
        }
        g
    }

    pub fn hessian(&self, x: &Point3) -> Mat3 {
        let t: Vec<f64> = x.coords.iter().map(|&c| c / self.rho).collect();
        let p: Vec<f64> = t.iter().map(|&ti| psi(ti)).collect();
        let d: Vec<f64> = t.iter().map(|&ti| psi_d1(ti)).collect();
        let rho2 = self.rho * self.rho;
        let mut h = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                if k == l {
                    let mut v = psi_d2(t[k]) / rho2;
                    for j in 0..3 {
                        if j != k {
                            v *= p[j];
                        }
                    }
                    h[k][l] = v;
                } else {
                    let mut v = d[k] * d[l] / rho2;
                    for j in 0..3 {
                        if j != k && j != l {
                            v *= p[j];
                        }
                    }
                    h[k][l] = v;
                }
            }
        }
        h
    }
}

impl C2Scalar for Cutoff {
    fn eval(&self, x: &Point3) -> f64 {
        self.value(x)
    }
    fn grad(&self, x: &Point3) -> Vec3 {
        self.gradient(x)
    }
    fn hess(&self, x: &Point3) -> Mat3 {
        self.hessian(x)
    }
}

/// The inner variation T_h(x) = x + φ(x)h together with its inverse S_h and
/// closed-form Jacobian algebra. Construction enforces |h| ≤ h_cap, which
/// keeps det ∇T_h ≥ delta_min everywhere.
#[derive(Clone)]
pub struct InnerVariationMap {
    cutoff: Arc<Cutoff>,
    h: Vec3,
    h_cap: f64,
    delta_min: f64,
}

pub const DEFAULT_DELTA_MIN: f64 = 0.1;

impl InnerVariationMap {
    pub fn new(cutoff: Arc<Cutoff>, h: Vec3, delta_min: f64) -> Result<Self, InnerVariationError> {
        let h_cap = cutoff.admissible_h_cap(delta_min);
        let h_norm = norm3(h);
        if h_norm > h_cap {
            return Err(InnerVariationError::StepTooLarge { h_norm, h_cap });
        }
        Ok(Self { cutoff, h, h_cap, delta_min })
    }

    // Bypasses the |h| cap; only for tests that exercise the degenerate path.
    #[cfg(test)]
    pub(crate) fn new_unchecked(cutoff: Arc<Cutoff>, h: Vec3, delta_min: f64) -> Self {
        let h_cap = cutoff.admissible_h_cap(delta_min);
        Self { cutoff, h, h_cap, delta_min }
    }

    pub fn cutoff(&self) -> &Arc<Cutoff> {
        &self.cutoff
    }

    pub fn h(&self) -> Vec3 {
        self.h
    }

    pub fn h_norm(&self) -> f64 {
        norm3(self.h)
    }

    pub fn h_cap(&self) -> f64 {
        self.h_cap
    }

    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }

    /// T_h(x) = x + φ(x) h.
    pub fn apply(&self, x: &Point3) -> Point3 {
        x.translated(self.h, self.cutoff.value(x))
    }

    /// ∇T_h(x) = 1 + h ⊗ ∇φ(x).
    pub fn jacobian(&self, x: &Point3) -> Mat3 {
        let g = self.cutoff.gradient(x);
        let mut j = outer3(self.h, g);
        for (k, row) in j.iter_mut().enumerate() {
            row[k] += 1.0;
        }
        j
    }

    /// det ∇T_h(x) = 1 + ⟨h, ∇φ(x)⟩.
    pub fn jacobian_det(&self, x: &Point3) -> f64 {
        1.0 + dot3(self.h, self.cutoff.gradient(x))
    }

    /// Closed-form inverse (∇T_h)⁻¹ = 1 − (1 + ⟨h,∇φ⟩)⁻¹ h ⊗ ∇φ.
    pub fn jacobian_inv(&self, x: &Point3) -> Mat3 {
        self.try_jacobian_inv(x)
            .expect("jacobian determinant fell below delta_min: |h| precondition violated")
    }

    pub fn try_jacobian_inv(&self, x: &Point3) -> Result<Mat3, InnerVariationError> {
        let g = self.cutoff.gradient(x);
        let det = 1.0 + dot3(self.h, g);
        if det < self.delta_min * (1.0 - 1e-12) {
            return Err(InnerVariationError::StepTooLarge {
                h_norm: self.h_norm(),
                h_cap: self.h_cap,
            });
        }
        let mut inv = outer3(self.h, g);
        let s = -1.0 / det;
        for (k, row) in inv.iter_mut().enumerate() {
            for e in row.iter_mut() {
                *e *= s;
            }
            row[k] += 1.0;
        }
        Ok(inv)
    }

    /// S_h(y) = T_h⁻¹(y) by a damped Newton iteration on F(x) = x + φ(x)h − y
    /// with the exact Jacobian, starting from x₀ = y − φ(y)h.
    pub fn apply_inverse(&self, y: &Point3) -> Result<Point3, InnerVariationError> {
        const MAX_ITER: usize = 50;
        let tol = 1e-12 * self.cutoff.r();
        let residual = |x: &Point3| {
            let tx = self.apply(x);
            [
                tx.coords[0] - y.coords[0],
                tx.coords[1] - y.coords[1],
                tx.coords[2] - y.coords[2],
            ]
        };
        let mut x = y.translated(self.h, -self.cutoff.value(y));
        let mut f = residual(&x);
        let mut fn_norm = norm3(f);
        for _ in 0..MAX_ITER {
            if fn_norm <= tol {
                return Ok(x);
            }
            let inv = self.try_jacobian_inv(&x)?;
            let step = mat3_vec(&inv, f);
            let mut damping = 1.0;
            loop {
                let cand = x.translated(step, -damping);
                let fc = residual(&cand);
                let fc_norm = norm3(fc);
                if fc_norm < fn_norm || damping < 1.0 / 16.0 {
                    x = cand;
                    f = fc;
                    fn_norm = fc_norm;
                    break;
                }
                damping *= 0.5;
            }
        }
        if fn_norm <= tol {
            Ok(x)
        } else {
            Err(InnerVariationError::NewtonDiverged { max_iter: MAX_ITER, residual: fn_norm })
        }
    }

    /// ∇S_h(y) = (∇T_h(S_h(y)))⁻¹.
    pub fn inverse_jacobian_at(&self, y: &Point3) -> Result<Mat3, InnerVariationError> {
        let s = self.apply_inverse(y)?;
        self.try_jacobian_inv(&s)
    }
}

/// Which Piola-type transformation to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    /// 𝒯_h(Q)(x) = Q(T_h(x)) ∇T_h(x).
    CovariantPullback,
    /// 𝒮_h(Q)(y) = Q(S_h(y)) ∇S_h(y).
    CovariantPushforward,
    /// 𝒫(A)(x) = det ∇T_h(x) · A(T_h(x)) · (∇T_h(x))⁻ᵀ.
    Contravariant,
}

/// Lazily evaluated transform of an n×3 field. The result is value-only:
/// derivatives of transformed fields are taken numerically.
pub fn piola_transform(kind: TransformKind, q: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    let (n, c) = q.shape();
    assert_eq!(c, 3, "piola transforms act on n×3 fields");
    let q = q.clone();
    let map = map.clone();
    let fd = q.fd_scheme();
    match kind {
        TransformKind::CovariantPullback => FieldExpr::new((n, 3), move |x| {
            let t = map.apply(x);
            q.eval(&t).matmul(&MatMN::from_mat3(&map.jacobian(x)))
        })
        .with_fd(fd),
        TransformKind::CovariantPushforward => FieldExpr::new((n, 3), move |y| {
            let s = map.apply_inverse(y).expect("inner variation inversion failed");
            let grad_s = map.try_jacobian_inv(&s).expect("degenerate jacobian");
            q.eval(&s).matmul(&MatMN::from_mat3(&grad_s))
        })
        .with_fd(fd),
        TransformKind::Contravariant => FieldExpr::new((n, 3), move |x| {
            let t = map.apply(x);
            let det = map.jacobian_det(x);
            let inv_t = mat3_transpose(&map.jacobian_inv(x));
            q.eval(&t).matmul(&MatMN::from_mat3(&inv_t)).scaled(det)
        })
        .with_fd(fd),
    }
}

pub fn covariant_pullback(q: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    piola_transform(TransformKind::CovariantPullback, q, map)
}

pub fn covariant_pushforward(q: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    piola_transform(TransformKind::CovariantPushforward, q, map)
}

pub fn contravariant_piola(a: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    piola_transform(TransformKind::Contravariant, a, map)
}

/// w − w∘T_h; vanishes outside the cutoff support.
pub fn delta_forward(w: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    let shape = w.shape();
    let w = w.clone();
    let map = map.clone();
    FieldExpr::new(shape, move |x| {
        let t = map.apply(x);
        w.eval(x).sub(&w.eval(&t))
    })
}

/// w − w∘S_h; vanishes outside the cutoff support.
pub fn delta_inverse(w: &FieldExpr, map: &InnerVariationMap) -> FieldExpr {
    let shape = w.shape();
    let w = w.clone();
    let map = map.clone();
    FieldExpr::new(shape, move |y| {
        let s = map.apply_inverse(y).expect("inner variation inversion failed");
        w.eval(y).sub(&w.eval(&s))
    })
}

/// Max-norm residual of the covariant curl transformation identity
///
///   Curl(𝒯_h Q)(x) = det ∇T_h(x) · (Curl Q)(T_h(x)) · (∇T_h(x))⁻ᵀ,
///
/// with the left side differentiated numerically at the given step and the
/// right side using the analytic curl of `q`.
pub fn curl_identity_residual(
    q: &FieldExpr,
    map: &InnerVariationMap,
    samples: &[Point3],
    step: f64,
    conv: CurlConvention,
) -> f64 {
    assert!(q.has_jacobian(), "analytic jacobian required for the reference curl");
    let transformed = covariant_pullback(q, map)
        .value_only()
        .with_fd(FdScheme { step, order: 2 });
    let mut worst = 0.0_f64;
    for x in samples {
        let lhs = curl_mat_at(&transformed, x, conv);
        let t = map.apply(x);
        let det = map.jacobian_det(x);
        let inv_t = MatMN::from_mat3(&mat3_transpose(&map.jacobian_inv(x)));
        let rhs = curl_mat_at(q, &t, conv).matmul(&inv_t).scaled(det);
        worst = worst.max(lhs.sub(&rhs).max_abs());
    }
    worst
}

fn cofactor_field(map: &InnerVariationMap) -> (FieldExpr, FieldExpr) {
    // det ∇T_h (∇T_h)⁻ᵀ = (1 + ⟨h,∇φ⟩) 1 − ∇φ ⊗ h, with analytic jacobian
    // from the cutoff Hessian; plus a value-only copy for the FD route.
    let h = map.h();
    let cut = map.cutoff().clone();
    let cv = cut.clone();
    let hv = h;
    let value = move |x: &Point3| {
        let g = cv.gradient(x);
        let det = 1.0 + dot3(hv, g);
        let mut m = MatMN::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = if i == j { det } else { 0.0 };
                m[(i, j)] -= g[i] * hv[j];
            }
        }
        m
    };
    let analytic = FieldExpr::new((3, 3), value.clone()).with_jacobian(move |x| {
        let hess = cut.hessian(x);
        let part = |k: usize| {
            let dg: Vec3 = [hess[0][k], hess[1][k], hess[2][k]];
            let ddet = dot3(h, dg);
            let mut m = MatMN::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = if i == j { ddet } else { 0.0 };
                    m[(i, j)] -= dg[i] * h[j];
                }
            }
            m
        };
        [part(0), part(1), part(2)]
    });
    let value_only = FieldExpr::new((3, 3), value);
    (analytic, value_only)
}

/// Residual of Div(det ∇T_h (∇T_h)⁻ᵀ) = 0 with analytic derivatives.
pub fn piola_identity_residual(map: &InnerVariationMap, samples: &[Point3]) -> f64 {
    let (field, _) = cofactor_field(map);
    samples
        .iter()
        .map(|x| div_mat_at(&field, x).iter().fold(0.0_f64, |a, v| a.max(v.abs())))
        .fold(0.0, f64::max)
}

/// Same residual with the divergence taken by central differences.
pub fn piola_identity_residual_fd(map: &InnerVariationMap, samples: &[Point3], step: f64) -> f64 {
    let (_, field) = cofactor_field(map);
    let field = field.with_fd(FdScheme { step, order: 2 });
    samples
        .iter()
        .map(|x| div_mat_at(&field, x).iter().fold(0.0_f64, |a, v| a.max(v.abs())))
        .fold(0.0, f64::max)
}

/// Residual of Div 𝒫(A) = det ∇T_h · (Div A)∘T_h for an n×3 field with
/// analytic divergence; the left side is differentiated numerically.
pub fn piola_divergence_residual(
    a: &FieldExpr,
    map: &InnerVariationMap,
    samples: &[Point3],
    step: f64,
) -> f64 {
    assert!(a.has_jacobian(), "analytic jacobian required for the reference divergence");
    let transformed = contravariant_piola(a, map)
        .value_only()
        .with_fd(FdScheme { step, order: 2 });
    let mut worst = 0.0_f64;
    for x in samples {
        let lhs = div_mat_at(&transformed, x);
        let t = map.apply(x);
        let det = map.jacobian_det(x);
        let rhs = div_mat_at(a, &t);
        for (l, r) in lhs.iter().zip(&rhs) {
            worst = worst.max((l - det * r).abs());
        }
    }
    worst
}

/// Measured sup-norms behind the uniform bound on the map family: sup over
/// samples and the |h| sweep of ‖∇T_h‖, ‖(∇T_h)⁻¹‖, det, 1/det.
#[derive(Clone, Copy, Debug)]
pub struct UniformBounds {
    pub sup_jacobian: f64,
    pub sup_jacobian_inv: f64,
    pub sup_det: f64,
    pub sup_det_inv: f64,
}

pub fn uniform_bounds_over_sweep(
    cutoff: &Arc<Cutoff>,
    direction: Vec3,
    magnitudes: &[f64],
    delta_min: f64,
    samples: &[Point3],
) -> Result<UniformBounds, InnerVariationError> {
    let mut b = UniformBounds { sup_jacobian: 0.0, sup_jacobian_inv: 0.0, sup_det: 0.0, sup_det_inv: 0.0 };
    let dn = norm3(direction);
    for &mag in magnitudes {
        let h = [direction[0] / dn * mag, direction[1] / dn * mag, direction[2] / dn * mag];
        let map = InnerVariationMap::new(cutoff.clone(), h, delta_min)?;
        for x in samples {
            let j = map.jacobian(x);
            let ji = map.try_jacobian_inv(x)?;
            let det = map.jacobian_det(x);
            b.sup_jacobian = b.sup_jacobian.max(crate::tensor_fields::mat3_frob(&j));
            b.sup_jacobian_inv = b.sup_jacobian_inv.max(crate::tensor_fields::mat3_frob(&ji));
            b.sup_det = b.sup_det.max(det.abs());
            b.sup_det_inv = b.sup_det_inv.max(1.0 / det.abs());
        }
    }
    Ok(b)
}

/// Unit direction scaled to the requested magnitude.
pub fn scaled_direction(direction: Vec3, magnitude: f64) -> Vec3 {
    let n = norm3(direction);
    assert!(n > 0.0, "direction must be nonzero");
    [direction[0] / n * magnitude, direction[1] / n * magnitude, direction[2] / n * magnitude]
}

/// Dyadic magnitude sweep h_cap/2, h_cap/4, ... with `levels` entries.
pub fn dyadic_magnitudes(h_cap: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| h_cap / 2.0_f64.powi(k as i32 + 1)).collect()
}

// Separate from tests so the cross product helper stays exercised.
#[allow(dead_code)]
fn curl_of_constant_column(q: &MatMN, g: Vec3, row: usize) -> Vec3 {
    cross3(g, [q[(row, 0)], q[(row, 1)], q[(row, 2)]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_fields::{ident3, mat3_det, mat3_mul, presets, random_fields, CubeDomain};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn standard_cutoff() -> Arc<Cutoff> {
        Arc::new(Cutoff::new(1.0, 0.5).unwrap())
    }

    fn standard_map(mag_frac: f64) -> InnerVariationMap {
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(DEFAULT_DELTA_MIN);
        let h = scaled_direction([1.0, 0.4, -0.3], cap * mag_frac);
        InnerVariationMap::new(cut, h, DEFAULT_DELTA_MIN).unwrap()
    }

    #[test]
    fn cutoff_plateau_and_support() {
        let cut = standard_cutoff();
        assert_abs_diff_eq!(cut.value(&Point3::origin()), 1.0);
        assert_abs_diff_eq!(cut.value(&Point3::new(0.24, -0.2, 0.1)), 1.0);
        for x in [
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.1, -0.6, 0.2),
            Point3::new(0.0, 0.0, 0.9),
        ] {
            assert_eq!(cut.value(&x), 0.0, "support must be inside the rho-cube");
        }
        assert_eq!(norm3(cut.gradient(&Point3::origin())), 0.0);
        assert_eq!(norm3(cut.gradient(&Point3::new(0.8, 0.0, 0.0))), 0.0);
    }

    #[test]
    fn cutoff_rejects_bad_rho() {
        assert!(Cutoff::new(1.0, 1.0).is_err());
        assert!(Cutoff::new(1.0, 1.5).is_err());
        assert!(Cutoff::new(1.0, 0.0).is_err());
    }

    #[test]
    fn grad_sup_matches_dense_oracle() {
        // Independent oracle: denser 1D scan of the profile derivative. The
        // transition of ψ(·/ρ) has slope at most max|ψ'|/ρ, attained with the
        // other axes on the plateau.
        let cut = standard_cutoff();
        let n = 65536;
        let mut sup = 0.0_f64;
        for i in 0..=n {
            let t = 0.5 + 0.5 * (i as f64) / (n as f64);
            sup = sup.max(psi_d1(t).abs());
        }
        let oracle = sup / cut.rho();
        assert!((cut.grad_sup() - oracle).abs() <= 1e-6, "grad_sup {} vs oracle {}", cut.grad_sup(), oracle);
        // Reproducibility of the construction-time measurement.
        let again = Cutoff::new(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(cut.grad_sup(), again.grad_sup());
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        let cut = standard_cutoff();
        let mut r = rng(11);
        // Sample inside the transition shell where derivatives are nontrivial.
        for _ in 0..40 {
            let x = Point3::new(
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
            );
            let h = 1e-6;
            let g = cut.gradient(&x);
            for k in 0..3 {
                let fd = (cut.value(&x.shifted(k, h)) - cut.value(&x.shifted(k, -h))) / (2.0 * h);
                assert_abs_diff_eq!(g[k], fd, epsilon = 5e-4);
            }
            let hess = cut.hessian(&x);
            for k in 0..3 {
                for l in 0..3 {
                    let fd = (cut.gradient(&x.shifted(l, h))[k]
                        - cut.gradient(&x.shifted(l, -h))[k])
                        / (2.0 * h);
                    assert_abs_diff_eq!(hess[k][l], fd, epsilon = 5e-3);
                }
            }
        }
    }

    #[test]
    fn admissible_cap_formula() {
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        assert_abs_diff_eq!(cap, 0.9 / cut.grad_sup(), epsilon = 1e-15);
        // grad_sup = 10, delta = 0.1 -> cap = 0.09 via the same formula.
        assert_abs_diff_eq!((1.0 - 0.1) / 10.0, 0.09, epsilon = 1e-15);
    }

    #[test]
    fn determinant_stays_above_delta_min_on_dense_samples() {
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        let mut r = rng(12);
        for trial in 0..5 {
            let dir = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let mag = cap * (0.2 + 0.2 * trial as f64);
            let map = InnerVariationMap::new(cut.clone(), scaled_direction(dir, mag), 0.1).unwrap();
            let dom = CubeDomain::centered(1.0);
            let mut min_det = f64::INFINITY;
            for x in random_fields::sample_points(&mut r, &dom, 20_000) {
                min_det = min_det.min(map.jacobian_det(&x));
            }
            assert!(min_det >= 0.1, "min det {}", min_det);
        }
    }

    #[test]
    fn map_is_identity_outside_support_and_shifts_plateau() {
        let map = standard_map(0.7);
        let outside = Point3::new(0.8, -0.7, 0.9);
        assert_eq!(map.apply(&outside), outside);
        assert_eq!(map.jacobian(&outside), ident3());
        assert_eq!(map.jacobian_det(&outside), 1.0);

        let h = map.h();
        let t0 = map.apply(&Point3::origin());
        assert_eq!(t0.coords, h);
        assert_eq!(map.jacobian(&Point3::origin()), ident3());
    }

    #[test]
    fn zero_step_is_identity() {
        let cut = standard_cutoff();
        let map = InnerVariationMap::new(cut, [0.0; 3], 0.1).unwrap();
        let x = Point3::new(0.3, 0.1, -0.2);
        assert_eq!(map.apply(&x), x);
        assert_eq!(map.jacobian_inv(&x), ident3());
        assert_eq!(map.apply_inverse(&x).unwrap(), x);
    }

    #[test]
    fn jacobian_matches_finite_differences_in_shell() {
        let map = standard_map(0.8);
        let mut r = rng(13);
        for _ in 0..30 {
            let x = Point3::new(r.gen_range(0.25..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5));
            let j = map.jacobian(&x);
            let det = map.jacobian_det(&x);
            let step = 1e-6;
            let mut j_fd = [[0.0; 3]; 3];
            for k in 0..3 {
                let tp = map.apply(&x.shifted(k, step));
                let tm = map.apply(&x.shifted(k, -step));
                for i in 0..3 {
                    j_fd[i][k] = (tp.coords[i] - tm.coords[i]) / (2.0 * step);
                }
            }
            for i in 0..3 {
                for k in 0..3 {
                    assert_abs_diff_eq!(j[i][k], j_fd[i][k], epsilon = 1e-4);
                }
            }
            assert_abs_diff_eq!(det, mat3_det(&j_fd), epsilon = 1e-4);
        }
    }

    #[test]
    fn closed_form_inverse_is_exact() {
        let map = standard_map(0.95);
        let mut r = rng(14);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 200) {
            let prod = mat3_mul(&map.jacobian_inv(&x), &map.jacobian(&x));
            let mut res = 0.0_f64;
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    res = res.max((prod[i][j] - expect).abs());
                }
            }
            assert!(res < 1e-13, "inverse residual {}", res);
        }
    }

    #[test]
    fn inverse_jacobian_uniformly_bounded_over_sweep() {
        // ‖(∇T_h)⁻¹‖ ≤ 1 + |h|·sup|∇φ|/δ ≤ 1 + (1−δ)/δ = 1/δ in spectral
        // terms; allow the Frobenius factor √3 on top of that.
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        let mags = dyadic_magnitudes(cap, 5);
        let mut r = rng(15);
        let dom = CubeDomain::centered(1.0);
        let samples = random_fields::sample_points(&mut r, &dom, 2000);
        let b = uniform_bounds_over_sweep(&cut, [0.6, -0.8, 0.2], &mags, 0.1, &samples).unwrap();
        let cap_bound = 3.0_f64.sqrt() / 0.1;
        assert!(b.sup_jacobian_inv.is_finite() && b.sup_jacobian_inv <= cap_bound);
        assert!(b.sup_jacobian.is_finite());
        assert!(b.sup_det_inv <= 1.0 / 0.1 + 1e-12);
    }

    #[test]
    fn newton_inverse_round_trip() {
        let map = standard_map(0.9);
        let mut r = rng(16);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 1000) {
            let y = map.apply(&x);
            let back = map.apply_inverse(&y).unwrap();
            let err = norm3([
                back.coords[0] - x.coords[0],
                back.coords[1] - x.coords[1],
                back.coords[2] - x.coords[2],
            ]);
            assert!(err < 1e-11, "round trip error {}", err);
        }
        let outside = Point3::new(0.95, 0.8, -0.9);
        assert_eq!(map.apply_inverse(&outside).unwrap(), outside);
    }

    #[test]
    fn newton_inverse_first_order_expansion() {
        // S_h(y) = y − φ(y)h + O(|h|²): halving |h| divides the defect by ~4.
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        let dir = [0.7, -0.5, 0.4];
        let mut r = rng(17);
        let dom = CubeDomain::centered(0.45);
        let samples = random_fields::sample_points(&mut r, &dom, 50);
        let defect = |mag: f64| -> f64 {
            let map = InnerVariationMap::new(cut.clone(), scaled_direction(dir, mag), 0.1).unwrap();
            samples
                .iter()
                .map(|y| {
                    let s = map.apply_inverse(y).unwrap();
                    let approx = y.translated(map.h(), -cut.value(y));
                    norm3([
                        s.coords[0] - approx.coords[0],
                        s.coords[1] - approx.coords[1],
                        s.coords[2] - approx.coords[2],
                    ])
                })
                .fold(0.0, f64::max)
        };
        let e1 = defect(cap / 100.0);
        let e2 = defect(cap / 200.0);
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "Taylor defect ratio {}", ratio);
    }

    #[test]
    fn pullback_of_constant_matches_closed_form() {
        // 𝒯_h(Q) = Q + (Qh) ⊗ ∇φ for constant Q.
        let map = standard_map(0.8);
        let mut r = rng(18);
        let q_mat = random_fields::matmn(&mut r, 3, 3);
        let q = FieldExpr::constant(q_mat.clone());
        let t = covariant_pullback(&q, &map);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 100) {
            let g = map.cutoff().gradient(&x);
            let h = map.h();
            let qh = [
                q_mat[(0, 0)] * h[0] + q_mat[(0, 1)] * h[1] + q_mat[(0, 2)] * h[2],
                q_mat[(1, 0)] * h[0] + q_mat[(1, 1)] * h[1] + q_mat[(1, 2)] * h[2],
                q_mat[(2, 0)] * h[0] + q_mat[(2, 1)] * h[1] + q_mat[(2, 2)] * h[2],
            ];
            let expect = q_mat.add(&MatMN::from_mat3(&outer3(qh, g)));
            assert!(t.eval(&x).sub(&expect).max_abs() < 1e-14);
        }
    }

    #[test]
    fn pullback_at_zero_step_is_identity_and_linear() {
        let cut = standard_cutoff();
        let map0 = InnerVariationMap::new(cut, [0.0; 3], 0.1).unwrap();
        let q = presets::matrix_field("poly2").unwrap();
        let t = covariant_pullback(&q, &map0);
        let x = Point3::new(0.2, -0.1, 0.3);
        assert!(t.eval(&x).sub(&q.eval(&x)).max_abs() < 1e-15);

        let map = standard_map(0.75);
        let a = presets::matrix_field("poly2").unwrap();
        let b = presets::matrix_field("trig").unwrap();
        let combo = crate::tensor_fields::lincomb_fields(1.3, &a, -0.7, &b);
        let lhs = covariant_pullback(&combo, &map);
        let ta = covariant_pullback(&a, &map);
        let tb = covariant_pullback(&b, &map);
        let mut r = rng(19);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 50) {
            let rhs = ta.eval(&x).scaled(1.3).add(&tb.eval(&x).scaled(-0.7));
            assert!(lhs.eval(&x).sub(&rhs).max_abs() < 1e-13);
        }
    }

    #[test]
    fn pushforward_inverts_pullback_pointwise() {
        let map = standard_map(0.85);
        let q = presets::matrix_field("trig").unwrap();
        let round = covariant_pushforward(&covariant_pullback(&q, &map), &map);
        let mut r = rng(20);
        let dom = CubeDomain::centered(0.95);
        for x in random_fields::sample_points(&mut r, &dom, 60) {
            let err = round.eval(&x).sub(&q.eval(&x)).max_abs();
            assert!(err < 1e-10, "composition error {}", err);
        }
    }

    #[test]
    fn curl_identity_on_constant_and_gradient_fields() {
        let map = standard_map(0.8);
        let mut r = rng(21);
        let dom = CubeDomain::centered(0.9);
        let samples = random_fields::sample_points(&mut r, &dom, 40);

        let q_const = FieldExpr::constant(random_fields::matmn(&mut r, 3, 3));
        let res = curl_identity_residual(&q_const, &map, &samples, 1e-5, CurlConvention::Standard);
        assert!(res < 5e-7, "constant-field residual {}", res);

        let u = presets::vector_field("poly2").unwrap();
        let grad_u = crate::tensor_fields::grad_field(&u);
        let res = curl_identity_residual(&grad_u, &map, &samples, 1e-5, CurlConvention::Standard);
        assert!(res < 5e-7, "gradient-field residual {}", res);
    }

    #[test]
    fn curl_identity_second_order_in_step_and_below_tolerance() {
        let map = standard_map(0.8);
        let q = presets::matrix_field("poly2").unwrap();
        let mut r = rng(22);
        let dom = CubeDomain::centered(0.9);
        let samples = random_fields::sample_points(&mut r, &dom, 60);
        let res1 = curl_identity_residual(&q, &map, &samples, 1e-5, CurlConvention::Standard);
        assert!(res1 < 5e-7, "residual at step 1e-5: {}", res1);
        let res_coarse = curl_identity_residual(&q, &map, &samples, 4e-5, CurlConvention::Standard);
        let res_fine = curl_identity_residual(&q, &map, &samples, 2e-5, CurlConvention::Standard);
        let ratio = res_coarse / res_fine;
        assert!((3.5..=4.5).contains(&ratio), "step-halving ratio {}", ratio);
    }

    #[test]
    fn curl_identity_fails_with_flipped_convention() {
        let map = standard_map(0.8);
        let q = presets::matrix_field("poly2").unwrap();
        let mut r = rng(23);
        let dom = CubeDomain::centered(0.9);
        let samples = random_fields::sample_points(&mut r, &dom, 60);
        let res = curl_identity_residual(&q, &map, &samples, 1e-5, CurlConvention::FlippedThird);
        assert!(res > 1e-3, "flipped convention should break the identity, residual {}", res);
    }

    #[test]
    fn contravariant_identity_map_is_identity() {
        let cut = standard_cutoff();
        let map0 = InnerVariationMap::new(cut, [0.0; 3], 0.1).unwrap();
        let a = presets::matrix_field("poly2").unwrap();
        let p = contravariant_piola(&a, &map0);
        let x = Point3::new(-0.2, 0.4, 0.1);
        assert!(p.eval(&x).sub(&a.eval(&x)).max_abs() < 1e-15);
    }

    #[test]
    fn piola_identity_analytic_and_fd() {
        let map = standard_map(0.9);
        let mut r = rng(24);
        let dom = CubeDomain::centered(0.95);
        let samples = random_fields::sample_points(&mut r, &dom, 80);
        let res = piola_identity_residual(&map, &samples);
        assert!(res < 1e-12, "analytic residual {}", res);
        let res_fd = piola_identity_residual_fd(&map, &samples, 1e-5);
        assert!(res_fd < 5e-7, "fd residual {}", res_fd);
    }

    #[test]
    fn piola_divergence_rule() {
        let map = standard_map(0.8);
        let mut r = rng(25);
        let dom = CubeDomain::centered(0.9);
        let samples = random_fields::sample_points(&mut r, &dom, 40);
        let a = presets::matrix_field("poly2").unwrap();
        let res = piola_divergence_residual(&a, &map, &samples, 1e-5);
        assert!(res < 5e-7, "divergence transform residual {}", res);

        let a_const = FieldExpr::constant(random_fields::matmn(&mut r, 3, 3));
        let res0 = piola_divergence_residual(&a_const, &map, &samples, 1e-5);
        assert!(res0 < 5e-7, "constant-field residual {}", res0);
    }

    #[test]
    fn delta_fields_vanish_for_constants_zero_step_and_outside_support() {
        let map = standard_map(0.8);
        let w_const = FieldExpr::constant(MatMN::from_fn(3, 1, |i, _| i as f64));
        let d = delta_forward(&w_const, &map);
        assert_eq!(d.eval(&Point3::new(0.1, 0.2, 0.3)).max_abs(), 0.0);

        let cut = standard_cutoff();
        let map0 = InnerVariationMap::new(cut, [0.0; 3], 0.1).unwrap();
        let w = presets::vector_field("trig").unwrap();
        assert_eq!(delta_forward(&w, &map0).eval(&Point3::new(0.3, 0.1, 0.0)).max_abs(), 0.0);

        let outside = Point3::new(0.9, -0.8, 0.7);
        assert_eq!(delta_forward(&w, &map).eval(&outside).max_abs(), 0.0);
        assert_eq!(delta_inverse(&w, &map).eval(&outside).max_abs(), 0.0);
        let q = presets::matrix_field("trig").unwrap();
        let one_minus = crate::tensor_fields::lincomb_fields(
            1.0,
            &q,
            -1.0,
            &covariant_pullback(&q, &map),
        );
        assert!(one_minus.eval(&outside).max_abs() < 1e-15);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        let err = InnerVariationMap::new(cut, [cap * 1.5, 0.0, 0.0], 0.1);
        assert!(matches!(err, Err(InnerVariationError::StepTooLarge { .. })));
    }

    #[test]
    #[should_panic(expected = "delta_min")]
    fn degenerate_jacobian_inverse_panics() {
        let cut = standard_cutoff();
        let cap = cut.admissible_h_cap(0.1);
        let map = InnerVariationMap::new_unchecked(cut, [4.0 * cap, 0.0, 0.0], 0.1);
        // Walk the transition shell until the determinant actually degenerates.
        for i in 0..200 {
            let x = Point3::new(0.25 + 0.25 * (i as f64) / 200.0, 0.0, 0.0);
            let _ = map.jacobian_inv(&x);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn pullback_linearity(alpha in -2.0..2.0_f64, beta in -2.0..2.0_f64,
                                  px in -0.9..0.9_f64, py in -0.9..0.9_f64, pz in -0.9..0.9_f64) {
                let map = standard_map(0.8);
                let a = presets::matrix_field("poly2").unwrap();
                let b = presets::matrix_field("trig").unwrap();
                let combo = crate::tensor_fields::lincomb_fields(alpha, &a, beta, &b);
                let x = Point3::new(px, py, pz);
                let lhs = covariant_pullback(&combo, &map).eval(&x);
                let rhs = covariant_pullback(&a, &map).eval(&x).scaled(alpha)
                    .add(&covariant_pullback(&b, &map).eval(&x).scaled(beta));
                prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12);
            }
        }
    }
}
