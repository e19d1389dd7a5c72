//! Small structured linear-algebra kernels shared by the stacking and
//! factorization code: unit lower block-bidiagonal substitution and a few
//! block-diagonal helpers. All operators act on multi-column matrices.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Unit lower block-bidiagonal matrix
///
/// ```text
/// [ I             ]
/// [ C0  I         ]
/// [     C1  I     ]
/// [         ..  I ]
/// ```
///
/// with square blocks of size `block`. Only the sub-diagonal blocks are stored.
#[derive(Debug)]
pub struct UnitLowerBidiagonal {
    block: usize,
    sub: Vec<DMatrix<f64>>,
    block_ops: AtomicU64,
}

impl Clone for UnitLowerBidiagonal {
    fn clone(&self) -> Self {
        Self {
            block: self.block,
            sub: self.sub.clone(),
            block_ops: AtomicU64::new(self.block_ops.load(Ordering::Relaxed)),
        }
    }
}

impl UnitLowerBidiagonal {
    pub fn new(block: usize, sub: Vec<DMatrix<f64>>) -> Self {
        debug_assert!(sub.iter().all(|c| c.nrows() == block && c.ncols() == block));
        Self {
            block,
            sub,
            block_ops: AtomicU64::new(0),
        }
    }

    /// Number of block rows.
    pub fn num_blocks(&self) -> usize {
        self.sub.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.block * self.num_blocks()
    }

    pub fn sub_blocks(&self) -> &[DMatrix<f64>] {
        &self.sub
    }

    /// Block multiply-adds performed by substitutions and products so far.
    pub fn block_ops(&self) -> u64 {
        self.block_ops.load(Ordering::Relaxed)
    }

    fn count(&self, k: usize) {
        self.block_ops.fetch_add(k as u64, Ordering::Relaxed);
    }

    /// Solves `self * X = rhs` in place by block forward substitution.
    pub fn solve_in_place(&self, rhs: &mut DMatrix<f64>) {
        let b = self.block;
        assert_eq!(rhs.nrows(), self.dim());
        for (t, c) in self.sub.iter().enumerate() {
            let (prev, mut next) = rhs.rows_range_pair_mut(t * b..(t + 1) * b, (t + 1) * b..(t + 2) * b);
            next.gemm(-1.0, c, &prev, 1.0);
        }
        self.count(self.sub.len());
    }

    /// Solves `self^T * X = rhs` in place by block back substitution.
    pub fn solve_transpose_in_place(&self, rhs: &mut DMatrix<f64>) {
        let b = self.block;
        assert_eq!(rhs.nrows(), self.dim());
        for t in (0..self.sub.len()).rev() {
            let (mut cur, next) = rhs.rows_range_pair_mut(t * b..(t + 1) * b, (t + 1) * b..(t + 2) * b);
            cur.gemm_tr(-1.0, &self.sub[t], &next, 1.0);
        }
        self.count(self.sub.len());
    }

    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.block;
        let mut y = x.clone();
        for (t, c) in self.sub.iter().enumerate() {
            y.rows_mut((t + 1) * b, b)
                .gemm(1.0, c, &x.rows(t * b, b), 1.0);
        }
        self.count(self.sub.len());
        y
    }

    pub fn mul_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.block;
        let mut y = x.clone();
        for (t, c) in self.sub.iter().enumerate() {
            y.rows_mut(t * b, b)
                .gemm_tr(1.0, c, &x.rows((t + 1) * b, b), 1.0);
        }
        self.count(self.sub.len());
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let b = self.block;
        let mut out = DMatrix::identity(self.dim(), self.dim());
        for (t, c) in self.sub.iter().enumerate() {
            out.view_mut(((t + 1) * b, t * b), (b, b)).copy_from(c);
        }
        out
    }
}

/// Applies a block-diagonal operator with (possibly rectangular) blocks.
/// Block `t` maps rows `t*cols..` of `x` to rows `t*rows..` of the output;
/// trailing output blocks beyond `blocks.len()` stay zero.
pub fn block_diag_mul(
    blocks: &[DMatrix<f64>],
    x: &DMatrix<f64>,
    out_rows: usize,
) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(out_rows, x.ncols());
    let (mut r, mut c) = (0, 0);
    for blk in blocks {
        y.rows_mut(r, blk.nrows())
            .gemm(1.0, blk, &x.rows(c, blk.ncols()), 0.0);
        r += blk.nrows();
        c += blk.ncols();
    }
    y
}

/// Applies the transpose of a block-diagonal operator.
pub fn block_diag_mul_transpose(
    blocks: &[DMatrix<f64>],
    x: &DMatrix<f64>,
    out_rows: usize,
) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(out_rows, x.ncols());
    let (mut r, mut c) = (0, 0);
    for blk in blocks {
        y.rows_mut(c, blk.ncols())
            .gemm_tr(1.0, blk, &x.rows(r, blk.nrows()), 0.0);
        r += blk.nrows();
        c += blk.ncols();
    }
    y
}

/// Dense block-diagonal assembly.
pub fn block_diag_dense(blocks: &[DMatrix<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for blk in blocks {
        out.view_mut((r, c), blk.shape()).copy_from(blk);
        r += blk.nrows();
        c += blk.ncols();
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cholesky factorization with a single diagonal-jitter retry.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch);
    }
    let dim = m.nrows().max(1);
    let jitter = 1e-12 * m.trace().abs() / dim as f64;
    let mut shifted = m;
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
