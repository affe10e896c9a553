//! Material tensors of the coupled model and the pointwise block coefficient
//! of the abstract bilinear form.
//!
//! The coefficient acts on quadruples (u, P, ∇u, Curl P); the model couples
//! an isotropic elastic tensor on sym(∇u − P), a second isotropic tensor on
//! sym P and a curvature tensor on Curl P. The force stress stays symmetric
//! (no couple-stress term), so the skew part of ∇u − P never enters.

use std::sync::Arc;

use thiserror::Error;

use crate::tensor_fields::{frobenius, sym, MatMN, Point3};

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("{what}: not positive definite (witness eigenvalue {witness})")]
    NotPositiveDefinite { what: String, witness: f64 },
    #[error("{what}: matrix representation is not symmetric (asymmetry {asymmetry})")]
    NonSymmetric { what: String, asymmetry: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Isotropic rank-4 tensor acting on 3×3 matrices through their symmetric
/// part: X ↦ 2μ sym X + λ tr(sym X) 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicElasticTensor {
    pub shear: f64,
    pub lame: f64,
}

impl IsotropicElasticTensor {
    pub fn new(shear: f64, lame: f64) -> Result<Self, MaterialError> {
        let t = Self { shear, lame };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if self.shear <= 0.0 {
            return Err(MaterialError::NotPositiveDefinite {
                what: format!("elastic tensor (mu = {})", self.shear),
                witness: 2.0 * self.shear,
            });
        }
        if 3.0 * self.lame + 2.0 * self.shear <= 0.0 {
            return Err(MaterialError::NotPositiveDefinite {
                what: format!("elastic tensor (mu = {}, lambda = {})", self.shear, self.lame),
                witness: 2.0 * self.shear + 3.0 * self.lame,
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &MatMN) -> MatMN {
        assert_eq!(x.shape(), (3, 3), "elastic tensor acts on 3×3 matrices");
        let s = sym(x);
        let tr = s.trace();
        let mut out = s.scaled(2.0 * self.shear);
        for i in 0..3 {
            out[(i, i)] += self.lame * tr;
        }
        out
    }

    /// Matrix representation on a Frobenius-orthonormal basis of Sym(3).
    pub fn sym_basis_matrix(&self) -> MatMN {
        let mut m = MatMN::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = self.lame + if i == j { 2.0 * self.shear } else { 0.0 };
            }
        }
        for i in 3..6 {
            m[(i, i)] = 2.0 * self.shear;
        }
        m
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        (2.0 * self.shear).max(2.0 * self.shear + 3.0 * self.lame)
    }
}

/// Curvature tensor acting on Curl P: either a positive multiple of the
/// identity on 3×3 matrices or a full SPD 9×9 matrix in the row-major basis.
#[derive(Clone, Debug)]
pub enum CurvatureTensor {
    Scalar(f64),
    Full(MatMN),
}

impl CurvatureTensor {
    pub fn validate(&self) -> Result<(), MaterialError> {
        match self {
            CurvatureTensor::Scalar(a) => {
                if *a <= 0.0 {
                    return Err(MaterialError::NotPositiveDefinite {
                        what: format!("curvature tensor (alpha = {a})"),
                        witness: *a,
                    });
                }
                Ok(())
            }
            CurvatureTensor::Full(m) => {
                if m.shape() != (9, 9) {
                    return Err(MaterialError::Invalid(format!(
                        "curvature matrix must be 9×9, got {:?}",
                        m.shape()
                    )));
                }
                let witness = smallest_eigenvalue_sym(m).map_err(|_| MaterialError::NonSymmetric {
                    what: "curvature tensor".into(),
                    asymmetry: m.sub(&m.transpose()).max_abs(),
                })?;
                if witness <= 0.0 {
                    return Err(MaterialError::NotPositiveDefinite {
                        what: "curvature tensor".into(),
                        witness,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, c: &MatMN) -> MatMN {
        assert_eq!(c.shape(), (3, 3), "curvature tensor acts on 3×3 matrices");
        match self {
            CurvatureTensor::Scalar(a) => c.scaled(*a),
            CurvatureTensor::Full(m) => {
                let mut out = MatMN::zeros(3, 3);
                for i in 0..3 {
                    for j in 0..3 {
                        let row = 3 * i + j;
                        let mut v = 0.0;
                        for k in 0..3 {
                            for l in 0..3 {
                                v += m[(row, 3 * k + l)] * c[(k, l)];
                            }
                        }
                        out[(i, j)] = v;
                    }
                }
                out
            }
        }
    }

    /// 9×9 representation in the row-major matrix basis.
    pub fn matrix9(&self) -> MatMN {
        match self {
            CurvatureTensor::Scalar(a) => MatMN::identity(9).scaled(*a),
            CurvatureTensor::Full(m) => m.clone(),
        }
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        match self {
            CurvatureTensor::Scalar(a) => *a,
            CurvatureTensor::Full(m) => {
                // Frobenius norm bounds the spectral radius; enough for the
                // uniform upper bound.
                m.frob_norm()
            }
        }
    }
}

/// The material triple; the couple modulus is identically zero.
#[derive(Clone, Debug)]
pub struct MicromorphicMaterial {
    pub elastic: IsotropicElasticTensor,
    pub micro: IsotropicElasticTensor,
    pub curvature: CurvatureTensor,
}

impl MicromorphicMaterial {
    pub fn new(
        elastic: IsotropicElasticTensor,
        micro: IsotropicElasticTensor,
        curvature: CurvatureTensor,
    ) -> Result<Self, MaterialError> {
        let m = Self { elastic, micro, curvature };
        m.validate()?;
        Ok(m)
    }

    /// Declared defaults used throughout the test suites.
    pub fn default_parameters() -> Self {
        Self {
            elastic: IsotropicElasticTensor { shear: 1.0, lame: 1.0 },
            micro: IsotropicElasticTensor { shear: 1.0, lame: 1.0 },
            curvature: CurvatureTensor::Scalar(0.5),
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        self.elastic.validate()?;
        self.micro.validate()?;
        self.curvature.validate()
    }

    /// ⟨ℂ_e sym(G−P), sym(G−P)⟩ + ⟨ℂ_micro sym P, sym P⟩ + ⟨𝕃_c C, C⟩.
    /// Nonnegative; zero exactly when sym(G−P) = sym P = C = 0.
    pub fn energy_density(&self, g: &MatMN, p: &MatMN, c: &MatMN) -> f64 {
        let e = sym(&g.sub(p));
        let sp = sym(p);
        frobenius(&self.elastic.apply(&e), &e)
            + frobenius(&self.micro.apply(&sp), &sp)
            + frobenius(&self.curvature.apply(c), c)
    }

    /// Upper bound Λ with density ≤ Λ(‖G‖² + ‖P‖² + ‖C‖²).
    pub fn uniform_bound(&self) -> f64 {
        2.0 * self.elastic.largest_eigenvalue()
            + self.micro.largest_eigenvalue()
            + self.curvature.largest_eigenvalue()
    }

    pub fn block_coefficient(&self) -> BlockCoefficient {
        let mat = self.clone();
        let apply = move |_x: &Point3, z: &Quadruple| -> Quadruple {
            let e = sym(&z.g.sub(&z.p));
            let stress = mat.elastic.apply(&e);
            let micro_term = mat.micro.apply(&sym(&z.p));
            Quadruple {
                u: MatMN::zeros(3, 1),
                p: micro_term.sub(&stress),
                g: stress.clone(),
                c: mat.curvature.apply(&z.c),
            }
        };

        let (mu_e, la_e) = (self.elastic.shear, self.elastic.lame);
        let (mu_m, la_m) = (self.micro.shear, self.micro.lame);
        let curvature = self.curvature.clone();
        let flat = move |_x: &Point3, z: &[f64; 30], out: &mut [f64; 30]| {
            out.fill(0.0);
            // sym(G − P) and sym P in row-major 3×3 layout.
            let mut e = [0.0_f64; 9];
            let mut sp = [0.0_f64; 9];
            for i in 0..3 {
                for j in 0..3 {
                    let ij = 3 * i + j;
                    let ji = 3 * j + i;
                    e[ij] = 0.5 * ((z[12 + ij] - z[3 + ij]) + (z[12 + ji] - z[3 + ji]));
                    sp[ij] = 0.5 * (z[3 + ij] + z[3 + ji]);
                }
            }
            let tr_e = e[0] + e[4] + e[8];
            let tr_sp = sp[0] + sp[4] + sp[8];
            for ij in 0..9 {
                let stress = 2.0 * mu_e * e[ij];
                let micro = 2.0 * mu_m * sp[ij];
                out[12 + ij] = stress;
                out[3 + ij] = micro - stress;
            }
            for d in [0, 4, 8] {
                out[12 + d] += la_e * tr_e;
                out[3 + d] += la_m * tr_sp - la_e * tr_e;
            }
            match &curvature {
                CurvatureTensor::Scalar(a) => {
                    for ij in 0..9 {
                        out[21 + ij] = a * z[21 + ij];
                    }
                }
                CurvatureTensor::Full(m) => {
                    for row in 0..9 {
                        let mut v = 0.0;
                        for col in 0..9 {
                            v += m[(row, col)] * z[21 + col];
                        }
                        out[21 + row] = v;
                    }
                }
            }
        };

        BlockCoefficient::new((3, 3), 0.0, apply).with_flat33(flat)
    }
}

/// State quadruple (u, P, ∇u, Curl P) at a point.
#[derive(Clone, Debug)]
pub struct Quadruple {
    pub u: MatMN,
    pub p: MatMN,
    pub g: MatMN,
    pub c: MatMN,
}

impl Quadruple {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            u: MatMN::zeros(m, 1),
            p: MatMN::zeros(n, 3),
            g: MatMN::zeros(m, 3),
            c: MatMN::zeros(n, 3),
        }
    }

    pub fn dot(&self, other: &Quadruple) -> f64 {
        frobenius(&self.u, &other.u)
            + frobenius(&self.p, &other.p)
            + frobenius(&self.g, &other.g)
            + frobenius(&self.c, &other.c)
    }

    /// Flat layout for m = n = 3: [u; P; ∇u; Curl P], matrices row-major.
    pub fn to_flat33(&self) -> [f64; 30] {
        assert_eq!(self.u.shape(), (3, 1));
        assert_eq!(self.p.shape(), (3, 3));
        let mut out = [0.0; 30];
        for i in 0..3 {
            out[i] = self.u[(i, 0)];
        }
        for i in 0..3 {
            for j in 0..3 {
                out[3 + 3 * i + j] = self.p[(i, j)];
                out[12 + 3 * i + j] = self.g[(i, j)];
                out[21 + 3 * i + j] = self.c[(i, j)];
            }
        }
        out
    }

    pub fn from_flat33(z: &[f64; 30]) -> Self {
        let mut q = Quadruple::zeros(3, 3);
        for i in 0..3 {
            q.u[(i, 0)] = z[i];
        }
        for i in 0..3 {
            for j in 0..3 {
                q.p[(i, j)] = z[3 + 3 * i + j];
                q.g[(i, j)] = z[12 + 3 * i + j];
                q.c[(i, j)] = z[21 + 3 * i + j];
            }
        }
        q
    }
}

type ApplyFn = dyn Fn(&Point3, &Quadruple) -> Quadruple + Send + Sync;
type Flat33Fn = dyn Fn(&Point3, &[f64; 30], &mut [f64; 30]) + Send + Sync;

/// Pointwise linear map on quadruples with a symmetric induced quadratic
/// form. `lipschitz_bound` bounds its variation in x.
#[derive(Clone)]
pub struct BlockCoefficient {
    shape: (usize, usize),
    lipschitz_bound: f64,
    apply: Arc<ApplyFn>,
    flat33: Option<Arc<Flat33Fn>>,
}

impl BlockCoefficient {
    pub fn new(
        shape: (usize, usize),
        lipschitz_bound: f64,
        apply: impl Fn(&Point3, &Quadruple) -> Quadruple + Send + Sync + 'static,
    ) -> Self {
        Self { shape, lipschitz_bound, apply: Arc::new(apply), flat33: None }
    }

    pub fn with_flat33(
        mut self,
        f: impl Fn(&Point3, &[f64; 30], &mut [f64; 30]) + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(self.shape, (3, 3), "flat path is specific to m = n = 3");
        self.flat33 = Some(Arc::new(f));
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn apply(&self, x: &Point3, z: &Quadruple) -> Quadruple {
        (self.apply)(x, z)
    }

    /// Allocation-free application in the flat layout (m = n = 3).
    pub fn apply_flat33(&self, x: &Point3, z: &[f64; 30], out: &mut [f64; 30]) {
        match &self.flat33 {
            Some(f) => f(x, z, out),
            None => {
                let q = self.apply(x, &Quadruple::from_flat33(z));
                *out = q.to_flat33();
            }
        }
    }

    pub fn bilinear(&self, x: &Point3, z: &Quadruple, w: &Quadruple) -> f64 {
        self.apply(x, z).dot(w)
    }

    pub fn quadratic_form(&self, x: &Point3, z: &Quadruple) -> f64 {
        self.bilinear(x, z, z)
    }
}

/// Gram coefficient of the discrete norm ‖∇u‖² + ‖P‖² + ‖Curl P‖².
pub fn norm_block_coefficient() -> BlockCoefficient {
    BlockCoefficient::new((3, 3), 0.0, |_x, z| Quadruple {
        u: MatMN::zeros(3, 1),
        p: z.p.clone(),
        g: z.g.clone(),
        c: z.c.clone(),
    })
    .with_flat33(|_x, z, out| {
        out[..3].fill(0.0);
        out[3..30].copy_from_slice(&z[3..30]);
    })
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
pub fn smallest_eigenvalue_sym(a: &MatMN) -> Result<f64, MaterialError> {
    if !a.is_square() {
        return Err(MaterialError::Invalid("eigenvalue of a non-square matrix".into()));
    }
    let n = a.rows();
    let scale = a.max_abs().max(1e-300);
    let asymmetry = a.sub(&a.transpose()).max_abs();
    if asymmetry > 1e-12 * scale {
        return Err(MaterialError::NonSymmetric { what: "matrix".into(), asymmetry });
    }

    let mut m = a.clone();
    let off = |m: &MatMN| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&m) <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = cos * mkp - sin * mkq;
                    m[(k, q)] = sin * mkp + cos * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = cos * mpk - sin * mqk;
                    m[(q, k)] = sin * mpk + cos * mqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min))
}

/// Smallest eigenvalue of the elastic tensor on Sym(3).
pub fn spd_witness_elastic(t: &IsotropicElasticTensor) -> f64 {
    smallest_eigenvalue_sym(&t.sym_basis_matrix()).expect("representation is symmetric")
}

/// Smallest eigenvalue of the curvature tensor on 3×3 matrices.
pub fn spd_witness_curvature(lc: &CurvatureTensor) -> Result<f64, MaterialError> {
    smallest_eigenvalue_sym(&lc.matrix9())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_fields::{random_fields, skew};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_quadruple(r: &mut ChaCha8Rng) -> Quadruple {
        Quadruple {
            u: random_fields::matmn(r, 3, 1),
            p: random_fields::matmn(r, 3, 3),
            g: random_fields::matmn(r, 3, 3),
            c: random_fields::matmn(r, 3, 3),
        }
    }

    #[test]
    fn elastic_tensor_examples() {
        let t = IsotropicElasticTensor::new(1.0, 0.0).unwrap();
        let id = MatMN::identity(3);
        assert!(t.apply(&id).sub(&id.scaled(2.0)).max_abs() < 1e-15);

        let mut r = rng(31);
        let w = skew(&random_fields::matmn(&mut r, 3, 3));
        assert!(t.apply(&w).max_abs() < 1e-15);

        let t2 = IsotropicElasticTensor::new(1.0, 1.0).unwrap();
        assert!(t2.apply(&id).sub(&id.scaled(5.0)).max_abs() < 1e-15);
    }

    #[test]
    fn elastic_validation() {
        assert!(IsotropicElasticTensor::new(-1.0, 1.0).is_err());
        assert!(IsotropicElasticTensor::new(1.0, -1.0).is_err()); // 3λ+2μ = -1
        assert!(IsotropicElasticTensor::new(1.0, -0.5).is_ok()); // 3λ+2μ = 0.5
    }

    #[test]
    fn energy_density_examples() {
        let mat = MicromorphicMaterial::new(
            IsotropicElasticTensor::new(1.0, 0.0).unwrap(),
            IsotropicElasticTensor::new(1.0, 1.0).unwrap(),
            CurvatureTensor::Scalar(0.5),
        )
        .unwrap();
        let mut r = rng(32);
        let w = skew(&random_fields::matmn(&mut r, 3, 3));
        let zero = MatMN::zeros(3, 3);
        // G = P skew, C = 0 lies in the kernel of the density.
        assert_abs_diff_eq!(mat.energy_density(&w, &w, &zero), 0.0, epsilon = 1e-15);

        let id = MatMN::identity(3);
        assert_abs_diff_eq!(mat.energy_density(&id, &zero, &zero), 6.0, epsilon = 1e-13);
    }

    #[test]
    fn energy_density_nonnegative_and_kernel_family() {
        let mat = MicromorphicMaterial::default_parameters();
        let mut r = rng(33);
        for _ in 0..200 {
            let q = random_quadruple(&mut r);
            assert!(mat.energy_density(&q.g, &q.p, &q.c) >= -1e-14);
        }
        // Family crossing the kernel: P(t) = W + t S with W skew, S symmetric,
        // G = P, C = t C0. Zero energy exactly at t = 0.
        let w = skew(&random_fields::matmn(&mut r, 3, 3));
        let s = sym(&random_fields::matmn(&mut r, 3, 3));
        let c0 = random_fields::matmn(&mut r, 3, 3);
        for t in [-0.5, -0.1, 0.0, 0.1, 0.5] {
            let p = w.add(&s.scaled(t));
            let c = c0.scaled(t);
            let density = mat.energy_density(&p, &p, &c);
            if t == 0.0 {
                assert!(density < 1e-14);
            } else {
                assert!(density > 1e-6, "density {} at t = {}", density, t);
            }
        }
    }

    #[test]
    fn density_matches_quadratic_form() {
        let mat = MicromorphicMaterial::default_parameters();
        let coeff = mat.block_coefficient();
        let mut r = rng(34);
        let x = Point3::origin();
        for _ in 0..100 {
            let z = random_quadruple(&mut r);
            let density = mat.energy_density(&z.g, &z.p, &z.c);
            let form = coeff.quadratic_form(&x, &z);
            let scale = density.abs().max(1.0);
            assert!((density - form).abs() / scale < 1e-12, "density {} form {}", density, form);
        }
    }

    #[test]
    fn block_coefficient_symmetry_and_linearity() {
        let mat = MicromorphicMaterial::default_parameters();
        let coeff = mat.block_coefficient();
        let x = Point3::new(0.1, -0.2, 0.3);
        let mut r = rng(35);
        for _ in 0..100 {
            let z = random_quadruple(&mut r);
            let w = random_quadruple(&mut r);
            let a = coeff.bilinear(&x, &z, &w);
            let b = coeff.bilinear(&x, &w, &z);
            assert!((a - b).abs() / a.abs().max(1.0) < 1e-12);
        }
        // Linearity against the flat path on a random combination.
        let z1 = random_quadruple(&mut r);
        let z2 = random_quadruple(&mut r);
        let mut combo = [0.0; 30];
        let f1 = z1.to_flat33();
        let f2 = z2.to_flat33();
        for i in 0..30 {
            combo[i] = 1.7 * f1[i] - 0.4 * f2[i];
        }
        let mut out_combo = [0.0; 30];
        let mut out1 = [0.0; 30];
        let mut out2 = [0.0; 30];
        coeff.apply_flat33(&x, &combo, &mut out_combo);
        coeff.apply_flat33(&x, &f1, &mut out1);
        coeff.apply_flat33(&x, &f2, &mut out2);
        for i in 0..30 {
            assert_abs_diff_eq!(out_combo[i], 1.7 * out1[i] - 0.4 * out2[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn zeroth_order_term_is_absent() {
        let mat = MicromorphicMaterial::default_parameters();
        let coeff = mat.block_coefficient();
        let mut z = Quadruple::zeros(3, 3);
        z.u = MatMN::from_fn(3, 1, |i, _| 1.0 + i as f64);
        let out = coeff.apply(&Point3::origin(), &z);
        assert_eq!(out.u.max_abs(), 0.0);
        assert_eq!(out.p.max_abs(), 0.0);
        assert_eq!(out.g.max_abs(), 0.0);
        assert_eq!(out.c.max_abs(), 0.0);
    }

    #[test]
    fn flat_path_matches_general_apply() {
        let mat = MicromorphicMaterial::new(
            IsotropicElasticTensor::new(1.3, 0.7).unwrap(),
            IsotropicElasticTensor::new(0.8, 1.1).unwrap(),
            CurvatureTensor::Scalar(0.4),
        )
        .unwrap();
        let coeff = mat.block_coefficient();
        let x = Point3::new(0.05, 0.1, -0.3);
        let mut r = rng(36);
        for _ in 0..50 {
            let z = random_quadruple(&mut r);
            let general = coeff.apply(&x, &z).to_flat33();
            let mut flat = [0.0; 30];
            coeff.apply_flat33(&x, &z.to_flat33(), &mut flat);
            for i in 0..30 {
                assert_abs_diff_eq!(general[i], flat[i], epsilon = 1e-14);
            }
        }
        // Full 9×9 curvature goes through the same paths.
        let mut r9 = rng(37);
        let base = random_fields::matmn(&mut r9, 9, 9);
        let spd = base.matmul(&base.transpose()).add(&MatMN::identity(9).scaled(0.5));
        let mat_full = MicromorphicMaterial::new(
            mat.elastic,
            mat.micro,
            CurvatureTensor::Full(spd),
        )
        .unwrap();
        let coeff_full = mat_full.block_coefficient();
        let z = random_quadruple(&mut r9);
        let general = coeff_full.apply(&x, &z).to_flat33();
        let mut flat = [0.0; 30];
        coeff_full.apply_flat33(&x, &z.to_flat33(), &mut flat);
        for i in 0..30 {
            assert_abs_diff_eq!(general[i], flat[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn spd_witness_values() {
        assert_abs_diff_eq!(
            spd_witness_curvature(&CurvatureTensor::Scalar(0.3)).unwrap(),
            0.3,
            epsilon = 1e-13
        );
        let t = IsotropicElasticTensor::new(1.0, 0.0).unwrap();
        assert_abs_diff_eq!(spd_witness_elastic(&t), 2.0, epsilon = 1e-12);
        // Indefinite input reports a negative witness for the caller to reject.
        let indefinite = MatMN::from_fn(9, 9, |i, j| if i == j { if i == 0 { -0.2 } else { 1.0 } } else { 0.0 });
        let w = smallest_eigenvalue_sym(&indefinite).unwrap();
        assert!(w < 0.0);
        assert!(CurvatureTensor::Full(indefinite).validate().is_err());
    }

    #[test]
    fn eigenvalue_solver_cross_checked_against_characteristic_roots() {
        // 2×2 oracle: eigenvalues of [[a,b],[b,c]] from the quadratic formula.
        let (a, b, c) = (1.7, -0.6, 0.9);
        let m = MatMN::from_rows(&[&[a, b], &[b, c]]);
        let mean = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let expect = mean - disc;
        assert_abs_diff_eq!(smallest_eigenvalue_sym(&m).unwrap(), expect, epsilon = 1e-13);
        // Non-symmetric input is rejected.
        let ns = MatMN::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(smallest_eigenvalue_sym(&ns).is_err());
    }

    #[test]
    fn uniform_upper_bound_holds_on_samples() {
        let mat = MicromorphicMaterial::default_parameters();
        let bound = mat.uniform_bound();
        let mut r = rng(38);
        for _ in 0..500 {
            let q = random_quadruple(&mut r);
            let density = mat.energy_density(&q.g, &q.p, &q.c);
            let scale = frobenius(&q.g, &q.g) + frobenius(&q.p, &q.p) + frobenius(&q.c, &q.c);
            assert!(density <= bound * scale + 1e-12);
        }
    }

    #[test]
    fn norm_coefficient_reproduces_seminorms() {
        let coeff = norm_block_coefficient();
        let mut r = rng(39);
        let z = random_quadruple(&mut r);
        let q = coeff.quadratic_form(&Point3::origin(), &z);
        let expect = frobenius(&z.p, &z.p) + frobenius(&z.g, &z.g) + frobenius(&z.c, &z.c);
        assert_abs_diff_eq!(q, expect, epsilon = 1e-13);
    }
}
