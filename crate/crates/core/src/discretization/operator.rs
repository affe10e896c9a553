//! Symmetric sparse operator in block-CSR form (12×12 node blocks) and a
//! Jacobi-preconditioned conjugate gradient solver.

use rayon::prelude::*;
use thiserror::Error;

use super::mesh::NODE_COMPONENTS;

const B: usize = NODE_COMPONENTS;
const B2: usize = B * B;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradients did not converge in {iterations} iterations (residual {residual})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("non-finite value encountered during the solve")]
    NonFinite,
    #[error("dimension mismatch: operator {expected}, vector {got}")]
    Dimension { expected: usize, got: usize },
}

/// Compressed block-row storage over free nodes. Column indices within each
/// row are strictly increasing.
pub struct SparseOperator {
    n_block_rows: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    blocks: Vec<[f64; B2]>,
}

impl SparseOperator {
    /// Builds the zero operator with a fixed sparsity pattern. `neighbors`
    /// yields the sorted block-column indices of each block row.
    pub fn from_pattern(neighbors: &[Vec<u32>]) -> Self {
        let n_block_rows = neighbors.len();
        let mut row_ptr = Vec::with_capacity(n_block_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for cols in neighbors {
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]), "columns must be sorted");
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let blocks = vec![[0.0; B2]; col_idx.len()];
        Self { n_block_rows, row_ptr, col_idx, blocks }
    }

    pub fn dim(&self) -> usize {
        self.n_block_rows * B
    }

    pub fn num_block_rows(&self) -> usize {
        self.n_block_rows
    }

    pub fn nnz(&self) -> usize {
        self.blocks.len() * B2
    }

    fn block_pos(&self, row: usize, col: u32) -> Option<usize> {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi].binary_search(&col).ok().map(|k| lo + k)
    }

    /// Adds `value` at scalar position (row*12+a, col*12+b).
    pub fn add_at(&mut self, row: usize, col: usize, a: usize, b: usize, value: f64) {
        let pos = self
            .block_pos(row, col as u32)
            .expect("block outside the assembled sparsity pattern");
        self.blocks[pos][a * B + b] += value;
    }

    /// Adds a full 12×12 block.
    pub fn add_block(&mut self, row: usize, col: usize, local: &[f64; B2]) {
        let pos = self
            .block_pos(row, col as u32)
            .expect("block outside the assembled sparsity pattern");
        let dst = &mut self.blocks[pos];
        for (d, s) in dst.iter_mut().zip(local.iter()) {
            *d += s;
        }
    }

    /// y = A x. Rows are independent, so the parallel version is bitwise
    /// deterministic.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        y.par_chunks_mut(B).enumerate().for_each(|(row, yr)| {
            let mut acc = [0.0f64; B];
            for pos in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[pos] as usize;
                let blk = &self.blocks[pos];
                let xr = &x[col * B..(col + 1) * B];
                for a in 0..B {
                    let brow = &blk[a * B..(a + 1) * B];
                    let mut s = 0.0;
                    for b in 0..B {
                        s += brow[b] * xr[b];
                    }
                    acc[a] += s;
                }
            }
            yr.copy_from_slice(&acc);
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for row in 0..self.n_block_rows {
            if let Some(pos) = self.block_pos(row, row as u32) {
                for a in 0..B {
                    d[row * B + a] = self.blocks[pos][a * B + a];
                }
            }
        }
        d
    }

    /// max |A − Aᵀ| over stored entries, relative to the largest entry.
    pub fn max_asymmetry_rel(&self) -> f64 {
        let mut max_entry = 0.0f64;
        for blk in &self.blocks {
            for v in blk.iter() {
                max_entry = max_entry.max(v.abs());
            }
        }
        if max_entry == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for row in 0..self.n_block_rows {
            for pos in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[pos] as usize;
                if col < row {
                    continue;
                }
                let blk = &self.blocks[pos];
                match self.block_pos(col, row as u32) {
                    Some(tpos) => {
                        let tblk = &self.blocks[tpos];
                        for a in 0..B {
                            for b in 0..B {
                                worst = worst.max((blk[a * B + b] - tblk[b * B + a]).abs());
                            }
                        }
                    }
                    None => {
                        for v in blk.iter() {
                            worst = worst.max(v.abs());
                        }
                    }
                }
            }
        }
        worst / max_entry
    }

    /// xᵀ A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim()];
        self.matvec(y, &mut ax);
        dot(x, &ax)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50_000 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD operators; stops at
/// ‖b − Ax‖ ≤ tol·‖b‖.
pub fn solve_cg(
    op: &SparseOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    cfg: CgConfig,
) -> Result<(Vec<f64>, CgOutcome), SolveError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(SolveError::Dimension { expected: n, got: rhs.len() });
    }
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], CgOutcome { iterations: 0, relative_residual: 0.0 }));
    }

    let diag = op.diagonal();
    let precond: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(v) => {
            if v.len() != n {
                return Err(SolveError::Dimension { expected: n, got: v.len() });
            }
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ax0 = vec![0.0; n];
    op.matvec(&x, &mut ax0);
    let mut r: Vec<f64> = rhs.iter().zip(&ax0).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut residual = norm(&r) / b_norm;
    if residual <= cfg.tol {
        return Ok((x, CgOutcome { iterations: 0, relative_residual: residual }));
    }

    for iter in 1..=cfg.max_iter {
        op.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(SolveError::NonFinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = norm(&r) / b_norm;
        if !residual.is_finite() {
            return Err(SolveError::NonFinite);
        }
        if residual <= cfg.tol {
            return Ok((x, CgOutcome { iterations: iter, relative_residual: residual }));
        }
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::NotConverged { iterations: cfg.max_iter, residual })
}
