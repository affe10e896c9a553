//! Small dense matrix algebra and differential operators on tensor fields.
//!
//! Fields map points of a cube to m×n matrices (vectors are m×1, scalars 1×1)
//! and carry optional analytic first and second derivatives. Differential
//! operators (`grad`, `div`, `curl`, row-wise `Curl`/`Div`) use the analytic
//! data when present and fall back to central differences otherwise.

use std::ops::{Index, IndexMut};
use std::sync::Arc;

/// A point of the computational domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub coords: [f64; 3],
}

impl Point3 {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { coords: [x1, x2, x3] }
    }

    pub fn origin() -> Self {
        Self { coords: [0.0; 3] }
    }

    /// Point shifted by `delta` along coordinate axis `axis`.
    pub fn shifted(&self, axis: usize, delta: f64) -> Self {
        let mut c = self.coords;
        c[axis] += delta;
        Self { coords: c }
    }

    pub fn translated(&self, v: Vec3, scale: f64) -> Self {
        Self {
            coords: [
                self.coords[0] + scale * v[0],
                self.coords[1] + scale * v[1],
                self.coords[2] + scale * v[2],
            ],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coords.iter().fold(0.0_f64, |a, c| a.max(c.abs()))
    }
}

pub type Vec3 = [f64; 3];
/// Row-major 3×3 matrix for geometry-heavy inner loops.
pub type Mat3 = [[f64; 3]; 3];

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn outer3(a: Vec3, b: Vec3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = a[i] * b[j];
        }
    }
    m
}

pub fn ident3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        dot3(m[0], v),
        dot3(m[1], v),
        dot3(m[2], v),
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat3_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn mat3_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn mat3_frob(m: &Mat3) -> f64 {
    let mut s = 0.0;
    for row in m {
        for e in row {
            s += e * e;
        }
    }
    s.sqrt()
}

/// Dense row-major m×n matrix with small runtime dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct MatMN {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatMN {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn from_mat3(m: &Mat3) -> Self {
        Self::from_fn(3, 3, |i, j| m[i][j])
    }

    pub fn to_mat3(&self) -> Mat3 {
        assert_eq!(self.shape(), (3, 3), "not a 3x3 matrix");
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self[(i, j)];
            }
        }
        m
    }

    pub fn column_vec3(v: Vec3) -> Self {
        Self::from_fn(3, 1, |i, _| v[i])
    }

    pub fn to_vec3(&self) -> Vec3 {
        assert_eq!(self.cols, 1, "not a column vector");
        assert_eq!(self.rows, 3, "not a 3-vector");
        [self[(0, 0)], self[(1, 0)], self[(2, 0)]]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> MatMN {
        MatMN::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &MatMN) -> MatMN {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = MatMN::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &MatMN) -> MatMN {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &MatMN) -> MatMN {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> MatMN {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn axpy(&mut self, s: f64, other: &MatMN) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

impl Index<(usize, usize)> for MatMN {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for MatMN {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Euclidean (Frobenius) scalar product of two matrices of the same shape.
pub fn frobenius(a: &MatMN, b: &MatMN) -> f64 {
    assert_eq!(a.shape(), b.shape(), "frobenius: shape mismatch");
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Symmetric part (P + Pᵀ)/2 of a square matrix.
pub fn sym(p: &MatMN) -> MatMN {
    assert!(p.is_square(), "sym of non-square matrix");
    MatMN::from_fn(p.rows(), p.cols(), |i, j| 0.5 * (p[(i, j)] + p[(j, i)]))
}

/// Skew part (P − Pᵀ)/2.
pub fn skew(p: &MatMN) -> MatMN {
    assert!(p.is_square(), "skew of non-square matrix");
    MatMN::from_fn(p.rows(), p.cols(), |i, j| 0.5 * (p[(i, j)] - p[(j, i)]))
}

/// Axis-aligned cube {x : |x_i - center_i| < r}.
#[derive(Clone, Copy, Debug)]
pub struct CubeDomain {
    pub half_side: f64,
    pub center: Point3,
}

impl CubeDomain {
    pub fn centered(half_side: f64) -> Self {
        assert!(half_side > 0.0, "half side must be positive");
        Self { half_side, center: Point3::origin() }
    }

    pub fn new(half_side: f64, center: Point3) -> Self {
        assert!(half_side > 0.0, "half side must be positive");
        Self { half_side, center }
    }

    pub fn contains(&self, x: &Point3) -> bool {
        (0..3).all(|k| (x.coords[k] - self.center.coords[k]).abs() < self.half_side)
    }

    pub fn min_corner(&self) -> [f64; 3] {
        let mut c = self.center.coords;
        for v in c.iter_mut() {
            *v -= self.half_side;
        }
        c
    }

    pub fn max_corner(&self) -> [f64; 3] {
        let mut c = self.center.coords;
        for v in c.iter_mut() {
            *v += self.half_side;
        }
        c
    }

    pub fn volume(&self) -> f64 {
        let s = 2.0 * self.half_side;
        s * s * s
    }
}

/// Sign convention for the third curl component. `FlippedThird` reverses it
/// and serves as a negative control: it still annihilates gradients but
/// breaks the covariant transformation identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurlConvention {
    Standard,
    FlippedThird,
}

impl Default for CurlConvention {
    fn default() -> Self {
        CurlConvention::Standard
    }
}

/// Finite-difference fallback scheme for fields without analytic derivatives.
#[derive(Clone, Copy, Debug)]
pub struct FdScheme {
    pub step: f64,
    /// 2 = three-point central stencil, 4 = five-point central stencil.
    pub order: usize,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self { step: 1e-5, order: 2 }
    }
}

type ValueFn = dyn Fn(&Point3) -> MatMN + Send + Sync;
type JacobianFn = dyn Fn(&Point3) -> [MatMN; 3] + Send + Sync;
type HessianFn = dyn Fn(&Point3) -> [[MatMN; 3]; 3] + Send + Sync;

/// A matrix-valued field with optional analytic first and second partials.
///
/// `jacobian(x)[k]` holds the partial derivative of the value with respect to
/// x_k; `hessian(x)[k][l]` the second partial ∂_k∂_l. Differential operators
/// fall back to central differences with the field's `FdScheme` whenever the
/// requested derivative level is not supplied.
#[derive(Clone)]
pub struct FieldExpr {
    shape: (usize, usize),
    value: Arc<ValueFn>,
    jacobian: Option<Arc<JacobianFn>>,
    hessian: Option<Arc<HessianFn>>,
    fd: FdScheme,
}

impl FieldExpr {
    pub fn new(shape: (usize, usize), value: impl Fn(&Point3) -> MatMN + Send + Sync + 'static) -> Self {
        Self { shape, value: Arc::new(value), jacobian: None, hessian: None, fd: FdScheme::default() }
    }

    pub fn constant(m: MatMN) -> Self {
        let shape = m.shape();
        let mc = m.clone();
        let zero = MatMN::zeros(shape.0, shape.1);
        let z1 = zero.clone();
        let z2 = zero;
        Self::new(shape, move |_| mc.clone())
            .with_jacobian(move |_| [z1.clone(), z1.clone(), z1.clone()])
            .with_hessian(move |_| {
                [
                    [z2.clone(), z2.clone(), z2.clone()],
                    [z2.clone(), z2.clone(), z2.clone()],
                    [z2.clone(), z2.clone(), z2.clone()],
                ]
            })
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Point3) -> [MatMN; 3] + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_hessian(mut self, hess: impl Fn(&Point3) -> [[MatMN; 3]; 3] + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(hess));
        self
    }

    pub fn with_fd(mut self, fd: FdScheme) -> Self {
        self.fd = fd;
        self
    }

    /// Drops analytic derivative data, forcing finite-difference fallbacks.
    pub fn value_only(&self) -> FieldExpr {
        FieldExpr { shape: self.shape, value: self.value.clone(), jacobian: None, hessian: None, fd: self.fd }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn fd_scheme(&self) -> FdScheme {
        self.fd
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn eval(&self, x: &Point3) -> MatMN {
        let v = (self.value)(x);
        debug_assert_eq!(v.shape(), self.shape, "field value has inconsistent shape");
        v
    }

    /// All first partials, analytic when available.
    pub fn jacobian_at(&self, x: &Point3) -> [MatMN; 3] {
        match &self.jacobian {
            Some(j) => j(x),
            None => self.fd_jacobian(x),
        }
    }

    fn fd_jacobian(&self, x: &Point3) -> [MatMN; 3] {
        let h = self.fd.step;
        let mut out: Vec<MatMN> = Vec::with_capacity(3);
        for k in 0..3 {
            let d = match self.fd.order {
                4 => {
                    let f2p = self.eval(&x.shifted(k, 2.0 * h));
                    let f1p = self.eval(&x.shifted(k, h));
                    let f1m = self.eval(&x.shifted(k, -h));
                    let f2m = self.eval(&x.shifted(k, -2.0 * h));
                    let mut d = f1p.sub(&f1m).scaled(8.0);
                    d.axpy(-1.0, &f2p);
                    d.axpy(1.0, &f2m);
                    d.scaled(1.0 / (12.0 * h))
                }
                _ => {
                    let fp = self.eval(&x.shifted(k, h));
                    let fm = self.eval(&x.shifted(k, -h));
                    fp.sub(&fm).scaled(0.5 / h)
                }
            };
            out.push(d);
        }
        [out.remove(0), out.remove(0), out.remove(0)]
    }
}

/// A C² scalar function together with its gradient and Hessian.
pub trait C2Scalar: Send + Sync {
    fn eval(&self, x: &Point3) -> f64;
    fn grad(&self, x: &Point3) -> Vec3;
    fn hess(&self, x: &Point3) -> Mat3;
}

/// Builds an (m, n) field from per-entry C² scalars with full analytic data.
pub fn field_from_components(comps: Vec<Vec<Arc<dyn C2Scalar>>>) -> FieldExpr {
    let m = comps.len();
    assert!(m >= 1);
    let n = comps[0].len();
    assert!(comps.iter().all(|r| r.len() == n), "ragged component grid");
    let comps = Arc::new(comps);

    let cv = comps.clone();
    let cj = comps.clone();
    let ch = comps;
    FieldExpr::new((m, n), move |x| MatMN::from_fn(m, n, |i, j| cv[i][j].eval(x)))
        .with_jacobian(move |x| {
            let mut parts = [MatMN::zeros(m, n), MatMN::zeros(m, n), MatMN::zeros(m, n)];
            for i in 0..m {
                for j in 0..n {
                    let g = cj[i][j].grad(x);
                    for (k, p) in parts.iter_mut().enumerate() {
                        p[(i, j)] = g[k];
                    }
                }
            }
            parts
        })
        .with_hessian(move |x| {
            let mut out: Vec<Vec<MatMN>> = (0..3)
                .map(|_| (0..3).map(|_| MatMN::zeros(m, n)).collect())
                .collect();
            for i in 0..m {
                for j in 0..n {
                    let h = ch[i][j].hess(x);
                    for (k, row) in out.iter_mut().enumerate() {
                        for (l, p) in row.iter_mut().enumerate() {
                            p[(i, j)] = h[k][l];
                        }
                    }
                }
            }
            let mut it = out.into_iter().map(|row| {
                let mut r = row.into_iter();
                [r.next().unwrap(), r.next().unwrap(), r.next().unwrap()]
            });
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        })
}

// ---------------------------------------------------------------------------
// Differential operators.
// ---------------------------------------------------------------------------

fn curl_row_from_partials(partials: &[MatMN; 3], i: usize, conv: CurlConvention) -> Vec3 {
    let third = match conv {
        CurlConvention::Standard => partials[0][(i, 1)] - partials[1][(i, 0)],
        CurlConvention::FlippedThird => partials[1][(i, 0)] - partials[0][(i, 1)],
    };
    [
        partials[1][(i, 2)] - partials[2][(i, 1)],
        partials[2][(i, 0)] - partials[0][(i, 2)],
        third,
    ]
}

fn curl_mat_from_partials(partials: &[MatMN; 3], n: usize, conv: CurlConvention) -> MatMN {
    let mut out = MatMN::zeros(n, 3);
    for i in 0..n {
        let r = curl_row_from_partials(partials, i, conv);
        for (j, v) in r.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    out
}

fn div_rows_from_partials(partials: &[MatMN; 3], n: usize) -> Vec<f64> {
    (0..n).map(|i| partials[0][(i, 0)] + partials[1][(i, 1)] + partials[2][(i, 2)]).collect()
}

/// Curl of a 3-vector field at a point.
pub fn curl_vec_at(w: &FieldExpr, x: &Point3, conv: CurlConvention) -> Vec3 {
    assert_eq!(w.shape(), (3, 1), "curl_vec_at expects a 3-vector field");
    let j = w.jacobian_at(x);
    // Reuse the row stencil by viewing the column vector as the row (w1,w2,w3).
    let third = match conv {
        CurlConvention::Standard => j[0][(1, 0)] - j[1][(0, 0)],
        CurlConvention::FlippedThird => j[1][(0, 0)] - j[0][(1, 0)],
    };
    [
        j[1][(2, 0)] - j[2][(1, 0)],
        j[2][(0, 0)] - j[0][(2, 0)],
        third,
    ]
}

/// Row-wise curl of an n×3 matrix field at a point.
pub fn curl_mat_at(q: &FieldExpr, x: &Point3, conv: CurlConvention) -> MatMN {
    let (n, c) = q.shape();
    assert_eq!(c, 3, "curl_mat_at expects an n×3 field");
    curl_mat_from_partials(&q.jacobian_at(x), n, conv)
}

/// Row-wise divergence of an n×3 matrix field at a point.
pub fn div_mat_at(q: &FieldExpr, x: &Point3) -> Vec<f64> {
    let (n, c) = q.shape();
    assert_eq!(c, 3, "div_mat_at expects an n×3 field");
    div_rows_from_partials(&q.jacobian_at(x), n)
}

/// Divergence of a 3-vector field at a point.
pub fn div_vec_at(w: &FieldExpr, x: &Point3) -> f64 {
    assert_eq!(w.shape(), (3, 1), "div_vec_at expects a 3-vector field");
    let j = w.jacobian_at(x);
    j[0][(0, 0)] + j[1][(1, 0)] + j[2][(2, 0)]
}

/// Gradient of a scalar field at a point.
pub fn grad_scalar_at(v: &FieldExpr, x: &Point3) -> Vec3 {
    assert_eq!(v.shape(), (1, 1), "grad_scalar_at expects a scalar field");
    let j = v.jacobian_at(x);
    [j[0][(0, 0)], j[1][(0, 0)], j[2][(0, 0)]]
}

/// ∇u of an m-vector field as an m×3 field. The result carries an analytic
/// jacobian exactly when `u` has an analytic Hessian.
pub fn grad_field(u: &FieldExpr) -> FieldExpr {
    let (m, c) = u.shape();
    assert_eq!(c, 1, "grad_field expects a column-vector field");
    let uv = u.clone();
    let mut out = FieldExpr::new((m, 3), move |x| {
        let j = uv.jacobian_at(x);
        MatMN::from_fn(m, 3, |i, k| j[k][(i, 0)])
    })
    .with_fd(u.fd_scheme());
    if u.has_hessian() {
        let uh = u.clone();
        out = out.with_jacobian(move |x| {
            let h = (uh.hessian.as_ref().unwrap())(x);
            let part = |l: usize| MatMN::from_fn(m, 3, |i, k| h[k][l][(i, 0)]);
            [part(0), part(1), part(2)]
        });
    }
    out
}

/// Row-wise curl as a field. Analytic jacobian when `q` has a Hessian.
pub fn curl_mat_field(q: &FieldExpr, conv: CurlConvention) -> FieldExpr {
    let (n, c) = q.shape();
    assert_eq!(c, 3, "curl_mat_field expects an n×3 field");
    let qv = q.clone();
    let mut out = FieldExpr::new((n, 3), move |x| curl_mat_from_partials(&qv.jacobian_at(x), n, conv))
        .with_fd(q.fd_scheme());
    if q.has_hessian() {
        let qh = q.clone();
        out = out.with_jacobian(move |x| {
            let h = (qh.hessian.as_ref().unwrap())(x);
            // ∂_l commutes with the curl stencil.
            let part = |l: usize| {
                let slices = [h[0][l].clone(), h[1][l].clone(), h[2][l].clone()];
                curl_mat_from_partials(&slices, n, conv)
            };
            [part(0), part(1), part(2)]
        });
    }
    out
}

/// Row-wise divergence as an n×1 field.
pub fn div_mat_field(q: &FieldExpr) -> FieldExpr {
    let (n, c) = q.shape();
    assert_eq!(c, 3, "div_mat_field expects an n×3 field");
    let qv = q.clone();
    let mut out = FieldExpr::new((n, 1), move |x| {
        let d = div_rows_from_partials(&qv.jacobian_at(x), n);
        MatMN::from_fn(n, 1, |i, _| d[i])
    })
    .with_fd(q.fd_scheme());
    if q.has_hessian() {
        let qh = q.clone();
        out = out.with_jacobian(move |x| {
            let h = (qh.hessian.as_ref().unwrap())(x);
            let part = |l: usize| {
                let slices = [h[0][l].clone(), h[1][l].clone(), h[2][l].clone()];
                let d = div_rows_from_partials(&slices, n);
                MatMN::from_fn(n, 1, |i, _| d[i])
            };
            [part(0), part(1), part(2)]
        });
    }
    out
}

/// Pointwise application of a constant linear map; derivatives pass through.
pub fn linear_map_field(
    q: &FieldExpr,
    out_shape: (usize, usize),
    map: impl Fn(&MatMN) -> MatMN + Send + Sync + 'static,
) -> FieldExpr {
    let map = Arc::new(map);
    let qv = q.clone();
    let mv = map.clone();
    let mut out = FieldExpr::new(out_shape, move |x| mv(&qv.eval(x))).with_fd(q.fd_scheme());
    if let Some(jac) = q.jacobian.clone() {
        let mj = map.clone();
        out = out.with_jacobian(move |x| {
            let j = jac(x);
            [mj(&j[0]), mj(&j[1]), mj(&j[2])]
        });
    }
    if let Some(hess) = q.hessian.clone() {
        let mh = map;
        out = out.with_hessian(move |x| {
            let h = hess(x);
            let row = |k: usize| [mh(&h[k][0]), mh(&h[k][1]), mh(&h[k][2])];
            [row(0), row(1), row(2)]
        });
    }
    out
}

/// α·a + β·b with derivative data carried through when both sides have it.
pub fn lincomb_fields(alpha: f64, a: &FieldExpr, beta: f64, b: &FieldExpr) -> FieldExpr {
    assert_eq!(a.shape(), b.shape(), "lincomb shape mismatch");
    let shape = a.shape();
    let (av, bv) = (a.clone(), b.clone());
    let mut out = FieldExpr::new(shape, move |x| av.eval(x).scaled(alpha).add(&bv.eval(x).scaled(beta)))
        .with_fd(a.fd_scheme());
    if let (Some(ja), Some(jb)) = (a.jacobian.clone(), b.jacobian.clone()) {
        out = out.with_jacobian(move |x| {
            let (pa, pb) = (ja(x), jb(x));
            let part = |k: usize| pa[k].scaled(alpha).add(&pb[k].scaled(beta));
            [part(0), part(1), part(2)]
        });
    }
    if let (Some(ha), Some(hb)) = (a.hessian.clone(), b.hessian.clone()) {
        out = out.with_hessian(move |x| {
            let (pa, pb) = (ha(x), hb(x));
            let entry = |k: usize, l: usize| pa[k][l].scaled(alpha).add(&pb[k][l].scaled(beta));
            let row = |k: usize| [entry(k, 0), entry(k, 1), entry(k, 2)];
            [row(0), row(1), row(2)]
        });
    }
    out
}

pub fn sym_field(q: &FieldExpr) -> FieldExpr {
    let (n, c) = q.shape();
    assert_eq!(n, c, "sym_field expects a square matrix field");
    linear_map_field(q, (n, n), |m| sym(m))
}

pub fn transpose_field(q: &FieldExpr) -> FieldExpr {
    let (m, n) = q.shape();
    linear_map_field(q, (n, m), |a| a.transpose())
}

/// Maximum over samples of the residuals of the two divergence product rules
///
///   div(v f) − ⟨grad v, f⟩ − v div f,
///   div(A f) − ⟨Div Aᵀ, f⟩ − ⟨Aᵀ, ∇f⟩,
///
/// where the left side differentiates the assembled product numerically and
/// the right side uses the supplied analytic jacobians.
pub fn div_product_rules_residual(
    v: &FieldExpr,
    f: &FieldExpr,
    a: &FieldExpr,
    samples: &[Point3],
) -> f64 {
    assert_eq!(v.shape(), (1, 1), "v must be scalar");
    assert_eq!(f.shape(), (3, 1), "f must be a 3-vector");
    assert_eq!(a.shape(), (3, 3), "A must be 3x3");
    assert!(v.has_jacobian() && f.has_jacobian() && a.has_jacobian(), "analytic jacobians required");

    // Differentiating products of degree-2 polynomials needs the wider stencil
    // to stay below 1e-10.
    let fd = FdScheme { step: 1e-3, order: 4 };
    let (vv, fv) = (v.clone(), f.clone());
    let vf = FieldExpr::new((3, 1), move |x| fv.eval(x).scaled(vv.eval(x)[(0, 0)])).with_fd(fd);
    let (am, fm) = (a.clone(), f.clone());
    let af = FieldExpr::new((3, 1), move |x| am.eval(x).matmul(&fm.eval(x))).with_fd(fd);

    let at = transpose_field(a);
    let mut worst = 0.0_f64;
    for x in samples {
        let fval = f.eval(x);
        let lhs1 = div_vec_at(&vf, x);
        let gv = grad_scalar_at(v, x);
        let rhs1 = dot3(gv, fval.to_vec3()) + v.eval(x)[(0, 0)] * div_vec_at(f, x);
        worst = worst.max((lhs1 - rhs1).abs());

        let lhs2 = div_vec_at(&af, x);
        let div_at = div_mat_at(&at, x);
        let grad_f = MatMN::from_fn(3, 3, |i, k| f.jacobian_at(x)[k][(i, 0)]);
        let rhs2 = div_at.iter().zip(fval.data()).map(|(d, fi)| d * fi).sum::<f64>()
            + frobenius(&at.eval(x), &grad_f);
        worst = worst.max((lhs2 - rhs2).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Concrete C² building blocks and the preset registry.
// ---------------------------------------------------------------------------

/// Quadratic polynomial plus one optional sine term:
/// c0 + ⟨c1, x⟩ + xᵀ c2 x + amp·sin(⟨wave, x⟩ + phase).
#[derive(Clone, Debug)]
pub struct SmoothScalar {
    pub c0: f64,
    pub c1: Vec3,
    /// Symmetric quadratic coefficient matrix.
    pub c2: Mat3,
    pub trig: Option<TrigTerm>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrigTerm {
    pub amp: f64,
    pub wave: Vec3,
    pub phase: f64,
}

impl SmoothScalar {
    pub fn zero() -> Self {
        Self { c0: 0.0, c1: [0.0; 3], c2: [[0.0; 3]; 3], trig: None }
    }

    pub fn constant(c: f64) -> Self {
        Self { c0: c, ..Self::zero() }
    }

    pub fn linear(c0: f64, c1: Vec3) -> Self {
        Self { c0, c1, ..Self::zero() }
    }
}

impl C2Scalar for SmoothScalar {
    fn eval(&self, x: &Point3) -> f64 {
        let p = x.coords;
        let mut v = self.c0 + dot3(self.c1, p);
        for i in 0..3 {
            for j in 0..3 {
                v += self.c2[i][j] * p[i] * p[j];
            }
        }
        if let Some(t) = &self.trig {
            v += t.amp * (dot3(t.wave, p) + t.phase).sin();
        }
        v
    }

    fn grad(&self, x: &Point3) -> Vec3 {
        let p = x.coords;
        let mut g = self.c1;
        for (k, gk) in g.iter_mut().enumerate() {
            for j in 0..3 {
                *gk += (self.c2[k][j] + self.c2[j][k]) * p[j];
            }
        }
        if let Some(t) = &self.trig {
            let c = t.amp * (dot3(t.wave, p) + t.phase).cos();
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += c * t.wave[k];
            }
        }
        g
    }

    fn hess(&self, x: &Point3) -> Mat3 {
        let p = x.coords;
        let mut h = [[0.0; 3]; 3];
        for (k, row) in h.iter_mut().enumerate() {
            for (l, e) in row.iter_mut().enumerate() {
                *e = self.c2[k][l] + self.c2[l][k];
            }
        }
        if let Some(t) = &self.trig {
            let s = -t.amp * (dot3(t.wave, p) + t.phase).sin();
            for (k, row) in h.iter_mut().enumerate() {
                for (l, e) in row.iter_mut().enumerate() {
                    *e += s * t.wave[k] * t.wave[l];
                }
            }
        }
        h
    }
}

/// Separable product of shifted sines A·∏ᵢ sin(c (xᵢ + r)) with c = π/(2r).
/// Vanishes on the whole boundary of the cube (−r, r)³.
#[derive(Clone, Copy, Debug)]
pub struct ProductSine {
    pub amplitude: f64,
    pub half_side: f64,
}

impl ProductSine {
    pub fn new(amplitude: f64, half_side: f64) -> Self {
        assert!(half_side > 0.0);
        Self { amplitude, half_side }
    }

    fn freq(&self) -> f64 {
        std::f64::consts::PI / (2.0 * self.half_side)
    }

    fn factors(&self, x: &Point3) -> ([f64; 3], [f64; 3]) {
        let c = self.freq();
        let mut s = [0.0; 3];
        let mut co = [0.0; 3];
        for k in 0..3 {
            let t = c * (x.coords[k] + self.half_side);
            s[k] = t.sin();
            co[k] = t.cos();
        }
        (s, co)
    }
}

impl C2Scalar for ProductSine {
    fn eval(&self, x: &Point3) -> f64 {
        let (s, _) = self.factors(x);
        self.amplitude * s[0] * s[1] * s[2]
    }

    fn grad(&self, x: &Point3) -> Vec3 {
        let c = self.freq();
        let (s, co) = self.factors(x);
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut v = self.amplitude * c;
            for j in 0..3 {
                v *= if j == k { co[j] } else { s[j] };
            }
            g[k] = v;
        }
        g
    }

    fn hess(&self, x: &Point3) -> Mat3 {
        let c = self.freq();
        let (s, co) = self.factors(x);
        let mut h = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                if k == l {
                    h[k][l] = -c * c * self.amplitude * s[0] * s[1] * s[2];
                } else {
                    let mut v = self.amplitude * c * c;
                    for j in 0..3 {
                        v *= if j == k || j == l { co[j] } else { s[j] };
                    }
                    h[k][l] = v;
                }
            }
        }
        h
    }
}

pub mod presets {
    //! Named analytic fields used across tests and the verification suites.

    use super::*;

    fn rotation_components() -> Vec<Vec<Arc<dyn C2Scalar>>> {
        vec![
            vec![Arc::new(SmoothScalar::linear(0.0, [0.0, -1.0, 0.0])) as Arc<dyn C2Scalar>],
            vec![Arc::new(SmoothScalar::linear(0.0, [1.0, 0.0, 0.0]))],
            vec![Arc::new(SmoothScalar::constant(0.0))],
        ]
    }

    fn poly2_scalar(seeds: [f64; 10]) -> Arc<dyn C2Scalar> {
        let [a, b, c, d, e, f, g, h, i, j] = seeds;
        Arc::new(SmoothScalar {
            c0: a,
            c1: [b, c, d],
            c2: [[e, f * 0.5, g * 0.5], [f * 0.5, h, i * 0.5], [g * 0.5, i * 0.5, j]],
            trig: None,
        })
    }

    fn trig_scalar(amp: f64, wave: Vec3, phase: f64) -> Arc<dyn C2Scalar> {
        Arc::new(SmoothScalar { trig: Some(TrigTerm { amp, wave, phase }), ..SmoothScalar::zero() })
    }

    /// Named 3-vector fields: "rotation", "poly2", "trig".
    pub fn vector_field(name: &str) -> Option<FieldExpr> {
        match name {
            "rotation" => Some(field_from_components(rotation_components())),
            "poly2" => Some(field_from_components(vec![
                vec![poly2_scalar([0.3, 0.5, -0.2, 0.1, 0.4, -0.3, 0.2, -0.1, 0.3, -0.2])],
                vec![poly2_scalar([-0.1, 0.2, 0.4, -0.3, -0.2, 0.1, 0.3, 0.2, -0.4, 0.1])],
                vec![poly2_scalar([0.2, -0.4, 0.1, 0.3, 0.1, 0.2, -0.3, 0.4, 0.1, -0.1])],
            ])),
            "trig" => Some(field_from_components(vec![
                vec![trig_scalar(0.8, [1.1, -0.6, 0.4], 0.3)],
                vec![trig_scalar(-0.5, [0.5, 0.9, -0.7], -0.8)],
                vec![trig_scalar(0.6, [-0.4, 0.7, 1.2], 1.1)],
            ])),
            _ => None,
        }
    }

    /// Named 3×3 matrix fields with the same preset names.
    pub fn matrix_field(name: &str) -> Option<FieldExpr> {
        match name {
            "rotation" => {
                let rows: Vec<Vec<Arc<dyn C2Scalar>>> = vec![
                    vec![
                        Arc::new(SmoothScalar::linear(0.0, [0.0, -1.0, 0.0])) as Arc<dyn C2Scalar>,
                        Arc::new(SmoothScalar::linear(0.0, [1.0, 0.0, 0.0])),
                        Arc::new(SmoothScalar::constant(0.0)),
                    ],
                    vec![
                        Arc::new(SmoothScalar::constant(0.0)),
                        Arc::new(SmoothScalar::linear(0.0, [0.0, 0.0, -1.0])),
                        Arc::new(SmoothScalar::linear(0.0, [0.0, 1.0, 0.0])),
                    ],
                    vec![
                        Arc::new(SmoothScalar::linear(0.0, [0.0, 0.0, 1.0])),
                        Arc::new(SmoothScalar::constant(0.0)),
                        Arc::new(SmoothScalar::linear(0.0, [-1.0, 0.0, 0.0])),
                    ],
                ];
                Some(field_from_components(rows))
            }
            "poly2" => {
                let seeds: [[f64; 10]; 9] = [
                    [0.2, 0.3, -0.1, 0.4, 0.1, -0.2, 0.3, 0.2, -0.1, 0.1],
                    [-0.3, 0.1, 0.2, -0.4, 0.2, 0.1, -0.1, 0.3, 0.2, -0.2],
                    [0.1, -0.2, 0.3, 0.1, -0.3, 0.2, 0.1, -0.2, 0.4, 0.3],
                    [0.4, 0.2, -0.3, 0.2, 0.1, 0.3, -0.2, 0.1, -0.3, 0.2],
                    [-0.2, 0.4, 0.1, -0.1, 0.2, -0.3, 0.1, 0.4, 0.2, -0.1],
                    [0.3, -0.1, 0.2, 0.3, -0.2, 0.1, 0.4, -0.3, 0.1, 0.2],
                    [0.1, 0.2, 0.3, -0.2, 0.3, 0.2, -0.1, 0.2, -0.4, 0.1],
                    [-0.4, 0.3, -0.2, 0.1, -0.1, 0.4, 0.2, -0.3, 0.3, -0.2],
                    [0.2, -0.3, 0.4, 0.2, 0.4, -0.1, 0.3, 0.1, -0.2, 0.3],
                ];
                let rows = (0..3)
                    .map(|i| (0..3).map(|j| poly2_scalar(seeds[3 * i + j])).collect())
                    .collect();
                Some(field_from_components(rows))
            }
            "trig" => {
                let rows = (0..3)
                    .map(|i| {
                        (0..3)
                            .map(|j| {
                                let k = (3 * i + j) as f64;
                                trig_scalar(
                                    0.4 + 0.05 * k,
                                    [0.8 - 0.1 * k, 0.5 + 0.08 * k, -0.6 + 0.12 * k],
                                    0.25 * k,
                                )
                            })
                            .collect()
                    })
                    .collect();
                Some(field_from_components(rows))
            }
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&str; 3] = ["rotation", "poly2", "trig"];
}

/// Deterministic random smooth fields for the identity suites. Coefficients
/// stay small so finite-difference cross checks keep headroom below 1e-10.
pub mod random_fields {
    use super::*;
    use rand::Rng;

    fn random_scalar(rng: &mut impl Rng, kind: RandomFieldKind) -> Arc<dyn C2Scalar> {
        let mut coef = |s: f64| rng.gen_range(-s..s);
        let poly = matches!(kind, RandomFieldKind::Poly2 | RandomFieldKind::Mixed);
        let trig = matches!(kind, RandomFieldKind::Trig | RandomFieldKind::Mixed);
        let mut sc = SmoothScalar::zero();
        if poly {
            sc.c0 = coef(0.4);
            sc.c1 = [coef(0.4), coef(0.4), coef(0.4)];
            let mut c2 = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in i..3 {
                    let v = coef(0.3);
                    c2[i][j] = v * 0.5;
                    c2[j][i] = v * 0.5;
                }
            }
            sc.c2 = c2;
        }
        if trig {
            sc.trig = Some(TrigTerm {
                amp: coef(0.5),
                wave: [coef(1.2), coef(1.2), coef(1.2)],
                phase: coef(std::f64::consts::PI),
            });
        }
        Arc::new(sc)
    }

    #[derive(Clone, Copy, Debug)]
    pub enum RandomFieldKind {
        Poly2,
        Trig,
        Mixed,
    }

    pub fn vector(rng: &mut impl Rng, m: usize, kind: RandomFieldKind) -> FieldExpr {
        field_from_components((0..m).map(|_| vec![random_scalar(rng, kind)]).collect())
    }

    pub fn matrix(rng: &mut impl Rng, n: usize, kind: RandomFieldKind) -> FieldExpr {
        field_from_components(
            (0..n).map(|_| (0..3).map(|_| random_scalar(rng, kind)).collect()).collect(),
        )
    }

    pub fn scalar(rng: &mut impl Rng, kind: RandomFieldKind) -> FieldExpr {
        field_from_components(vec![vec![random_scalar(rng, kind)]])
    }

    pub fn matmn(rng: &mut impl Rng, m: usize, n: usize) -> MatMN {
        MatMN::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    pub fn sample_points(rng: &mut impl Rng, domain: &CubeDomain, count: usize) -> Vec<Point3> {
        (0..count)
            .map(|_| {
                let c = domain.center.coords;
                let r = domain.half_side;
                Point3::new(
                    c[0] + rng.gen_range(-r..r),
                    c[1] + rng.gen_range(-r..r),
                    c[2] + rng.gen_range(-r..r),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::random_fields::{self, RandomFieldKind};
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn frobenius_identity_and_zero() {
        let id = MatMN::identity(3);
        assert_abs_diff_eq!(frobenius(&id, &id), 3.0);
        let z = MatMN::zeros(3, 3);
        let mut r = rng(1);
        let p = random_fields::matmn(&mut r, 3, 3);
        assert_abs_diff_eq!(frobenius(&p, &z), 0.0);
    }

    #[test]
    fn frobenius_three_way_rule() {
        // ⟨PQ,R⟩ = ⟨P, RQᵀ⟩ = ⟨Q, PᵀR⟩ for conforming shapes.
        let mut r = rng(2);
        for _ in 0..200 {
            let p = random_fields::matmn(&mut r, 3, 2);
            let q = random_fields::matmn(&mut r, 2, 3);
            let rr = random_fields::matmn(&mut r, 3, 3);
            let a = frobenius(&p.matmul(&q), &rr);
            let b = frobenius(&p, &rr.matmul(&q.transpose()));
            let c = frobenius(&q, &p.transpose().matmul(&rr));
            let scale = a.abs().max(1.0);
            assert!((a - b).abs() / scale < 1e-13);
            assert!((a - c).abs() / scale < 1e-13);
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn frobenius_shape_mismatch_panics() {
        let a = MatMN::zeros(2, 3);
        let b = MatMN::zeros(3, 2);
        frobenius(&a, &b);
    }

    #[test]
    fn sym_examples() {
        let id = MatMN::identity(3);
        assert_eq!(sym(&id), id);
        let w = MatMN::from_rows(&[&[0.0, 1.0, 0.0], &[-1.0, 0.0, 2.0], &[0.0, -2.0, 0.0]]);
        assert!(sym(&w).frob_norm() < 1e-15);
        let p = MatMN::from_rows(&[&[0.0, 2.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        let expect = MatMN::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(sym(&p), expect);
    }

    #[test]
    fn sym_is_idempotent_and_frobenius_orthogonal_to_skew() {
        let mut r = rng(3);
        for _ in 0..50 {
            let p = random_fields::matmn(&mut r, 3, 3);
            let s = sym(&p);
            assert!(sym(&s).sub(&s).frob_norm() < 1e-15);
            let w = skew(&random_fields::matmn(&mut r, 3, 3));
            assert!(frobenius(&s, &w).abs() < 1e-13);
        }
    }

    #[test]
    fn curl_of_rotation_field() {
        let w = presets::vector_field("rotation").unwrap();
        let mut r = rng(4);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 20) {
            let c = curl_vec_at(&w, &x, CurlConvention::Standard);
            assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(c[2], 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn curl_of_constant_vanishes() {
        let w = FieldExpr::constant(MatMN::from_fn(3, 1, |i, _| i as f64 + 1.0));
        let c = curl_vec_at(&w, &Point3::new(0.3, -0.2, 0.5), CurlConvention::Standard);
        assert_eq!(c, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn curl_of_gradient_vanishes_analytically() {
        // u(x) = x1² x3 + sin(x2), gradient taken with analytic second
        // derivatives, so the curl residual is pure roundoff.
        let u = field_from_components(vec![vec![Arc::new(SmoothScalar {
            c0: 0.0,
            c1: [0.0; 3],
            c2: [[0.0, 0.0, 0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]],
            trig: Some(TrigTerm { amp: 1.0, wave: [0.0, 1.0, 0.0], phase: 0.0 }),
        }) as Arc<dyn C2Scalar>]]);
        let g = grad_field(&u); // 1×3 field
        let mut r = rng(5);
        let dom = CubeDomain::centered(1.0);
        for x in random_fields::sample_points(&mut r, &dom, 100) {
            let c = curl_mat_at(&g, &x, CurlConvention::Standard);
            assert!(c.max_abs() < 1e-10, "curl grad residual {}", c.max_abs());
        }
    }

    #[test]
    fn curl_mat_fixed_rows_oracle() {
        // Rows (0,0,x1 x2), (x3,0,0), (0,x1,0) have curls
        // (x1,−x2,0), (0,1,0), (0,0,1).
        let x1x2 = Arc::new(SmoothScalar {
            c2: [[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ..SmoothScalar::zero()
        }) as Arc<dyn C2Scalar>;
        let zero = || Arc::new(SmoothScalar::zero()) as Arc<dyn C2Scalar>;
        let x3 = Arc::new(SmoothScalar::linear(0.0, [0.0, 0.0, 1.0])) as Arc<dyn C2Scalar>;
        let x1 = Arc::new(SmoothScalar::linear(0.0, [1.0, 0.0, 0.0])) as Arc<dyn C2Scalar>;
        let q = field_from_components(vec![
            vec![zero(), zero(), x1x2],
            vec![x3, zero(), zero()],
            vec![zero(), x1, zero()],
        ]);
        let x = Point3::new(0.7, -0.4, 0.2);
        let c = curl_mat_at(&q, &x, CurlConvention::Standard);
        let expect = MatMN::from_rows(&[&[0.7, 0.4, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(c.sub(&expect).max_abs() < 1e-14);
    }

    #[test]
    fn constant_matrix_field_has_zero_curl_and_div() {
        let q = FieldExpr::constant(MatMN::from_fn(3, 3, |i, j| (i * 3 + j) as f64));
        let x = Point3::new(0.1, 0.2, 0.3);
        assert_eq!(curl_mat_at(&q, &x, CurlConvention::Standard).max_abs(), 0.0);
        assert!(div_mat_at(&q, &x).iter().all(|d| *d == 0.0));
    }

    #[test]
    fn product_rules_reduce_for_constant_inputs() {
        let one = field_from_components(vec![vec![
            Arc::new(SmoothScalar::constant(1.0)) as Arc<dyn C2Scalar>
        ]]);
        let mut r = rng(6);
        let f = random_fields::vector(&mut r, 3, RandomFieldKind::Poly2);
        let a_const = FieldExpr::constant(random_fields::matmn(&mut r, 3, 3));
        let dom = CubeDomain::centered(1.0);
        let pts = random_fields::sample_points(&mut r, &dom, 30);
        let res = div_product_rules_residual(&one, &f, &a_const, &pts);
        assert!(res < 1e-11, "residual {}", res);
    }

    #[test]
    fn product_rules_random_polynomials() {
        let mut r = rng(7);
        let dom = CubeDomain::centered(1.0);
        for _ in 0..50 {
            let v = random_fields::scalar(&mut r, RandomFieldKind::Poly2);
            let f = random_fields::vector(&mut r, 3, RandomFieldKind::Poly2);
            let a = random_fields::matrix(&mut r, 3, RandomFieldKind::Poly2);
            let pts = random_fields::sample_points(&mut r, &dom, 10);
            let res = div_product_rules_residual(&v, &f, &a, &pts);
            assert!(res < 1e-10, "residual {}", res);
        }
    }

    #[test]
    fn product_rule_hand_derived_case() {
        // v = x1 x2, f = (x3², x1, x2 x3):
        // div(v f) = ⟨grad v, f⟩ + v div f = x2 x3² + x1² + x1 x2².
        let v = field_from_components(vec![vec![Arc::new(SmoothScalar {
            c2: [[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ..SmoothScalar::zero()
        }) as Arc<dyn C2Scalar>]]);
        let f = field_from_components(vec![
            vec![Arc::new(SmoothScalar {
                c2: [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
                ..SmoothScalar::zero()
            }) as Arc<dyn C2Scalar>],
            vec![Arc::new(SmoothScalar::linear(0.0, [1.0, 0.0, 0.0]))],
            vec![Arc::new(SmoothScalar {
                c2: [[0.0, 0.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.5, 0.0]],
                ..SmoothScalar::zero()
            })],
        ]);
        let x = Point3::new(0.4, -0.7, 0.3);
        let (x1, x2, x3) = (0.4_f64, -0.7_f64, 0.3_f64);
        let expected = x2 * x3 * x3 + x1 * x1 + x1 * x2 * x2;
        let gv = grad_scalar_at(&v, &x);
        let rhs = dot3(gv, f.eval(&x).to_vec3()) + v.eval(&x)[(0, 0)] * div_vec_at(&f, &x);
        assert_abs_diff_eq!(rhs, expected, epsilon = 1e-13);
    }

    #[test]
    fn fd_jacobian_second_order_convergence() {
        // Halving the step should cut the FD error by ~4 on a trig field.
        let w = presets::vector_field("trig").unwrap();
        let fd_coarse = w.value_only().with_fd(FdScheme { step: 2e-3, order: 2 });
        let fd_fine = w.value_only().with_fd(FdScheme { step: 1e-3, order: 2 });
        let mut r = rng(8);
        let dom = CubeDomain::centered(1.0);
        let mut ratios = Vec::new();
        for x in random_fields::sample_points(&mut r, &dom, 25) {
            let exact = w.jacobian_at(&x);
            let err = |f: &FieldExpr| {
                let j = f.jacobian_at(&x);
                (0..3).map(|k| j[k].sub(&exact[k]).max_abs()).fold(0.0_f64, f64::max)
            };
            let (e2, e1) = (err(&fd_coarse), err(&fd_fine));
            if e2 > 1e-12 {
                ratios.push(e2 / e1);
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((3.5..=4.5).contains(&mean), "mean step-halving ratio {}", mean);
    }

    #[test]
    fn product_sine_derivatives_match_fd() {
        let b = ProductSine::new(0.7, 1.0);
        let x = Point3::new(0.3, -0.5, 0.1);
        let h = 1e-5;
        for k in 0..3 {
            let fd = (b.eval(&x.shifted(k, h)) - b.eval(&x.shifted(k, -h))) / (2.0 * h);
            assert_abs_diff_eq!(b.grad(&x)[k], fd, epsilon = 1e-9);
            for l in 0..3 {
                let gp = b.grad(&x.shifted(l, h))[k];
                let gm = b.grad(&x.shifted(l, -h))[k];
                assert_abs_diff_eq!(b.hess(&x)[k][l], (gp - gm) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn flipped_convention_still_annihilates_gradients() {
        let u = presets::vector_field("trig").unwrap();
        let g = grad_field(&u);
        let x = Point3::new(0.2, 0.4, -0.3);
        let c = curl_mat_at(&g, &x, CurlConvention::FlippedThird);
        assert!(c.max_abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn small_matrix(m: usize, n: usize) -> impl Strategy<Value = MatMN> {
            proptest::collection::vec(-1.0..1.0_f64, m * n)
                .prop_map(move |v| MatMN::from_fn(m, n, |i, j| v[i * n + j]))
        }

        proptest! {
            #[test]
            fn frobenius_rule_holds(p in small_matrix(3, 2), q in small_matrix(2, 4), r in small_matrix(3, 4)) {
                let a = frobenius(&p.matmul(&q), &r);
                let b = frobenius(&p, &r.matmul(&q.transpose()));
                let c = frobenius(&q, &p.transpose().matmul(&r));
                let scale = a.abs().max(1.0);
                prop_assert!((a - b).abs() / scale < 1e-13);
                prop_assert!((a - c).abs() / scale < 1e-13);
            }

            #[test]
            fn sym_plus_skew_reconstructs(p in small_matrix(3, 3)) {
                let rec = sym(&p).add(&skew(&p));
                prop_assert!(rec.sub(&p).max_abs() < 1e-15);
            }
        }
    }
}
