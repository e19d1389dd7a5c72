//! Structured factorization of the per-sub-system Schur complements
//! `Sigma_j`.
//!
//! `Sigma_j` has the saddle-point layout of `D_j` with the state weight
//! replaced by `Qhat_j + K_j`, where `K_j` is the PSD coupling contributed by
//! the downstream neighbour. Eliminating the slack and multiplier rows gives
//!
//! ```text
//! Qbar = Qhat + K + Mhat^T Theta^-1 Lambda Mhat
//! St   = Shat + Lhat^T Theta^-1 Lambda Mhat       (block diagonal)
//! Rt   = Rhat + Lhat^T Theta^-1 Lambda Lhat       (block diagonal, SPD)
//! Qt   = Qbar - St^T Rt^-1 St                     (PSD)
//! At   = Ahat + Bhat Rt^-1 St                     (unit lower block-bidiagonal)
//! G    = Rt + Bhat^T At^-T Qt At^-1 Bhat          (SPD, m T square)
//! ```
//!
//! and the remaining 3x3 saddle system is solved by the congruence
//! `Psi * Omega * Psi^T`, applied as an operator pipeline: block-diagonal
//! scalings, `At` substitutions, `Rt` block solves and one Cholesky solve
//! with `G`. The only dense `O(T^3)` work is forming and factoring `G` and,
//! for `j < N`, products with the dense `Qt`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kkt::PrimalDual;
use crate::linalg::{
    block_diag_dense, block_diag_mul, block_diag_mul_transpose, cholesky_with_jitter, symmetrize,
    UnitLowerBidiagonal,
};
use crate::stacked::{col, StackedSubsystem};

/// State-weight storage: block diagonal for the last sub-system, dense
/// once a downstream coupling has been added.
#[derive(Clone, Debug)]
pub enum StateWeight {
    BlockDiagonal(Vec<DMatrix<f64>>),
    Dense(DMatrix<f64>),
}

impl StateWeight {
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            StateWeight::BlockDiagonal(blocks) => block_diag_mul(blocks, x, x.nrows()),
            StateWeight::Dense(q) => q * x,
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            StateWeight::BlockDiagonal(blocks) => block_diag_dense(blocks, dim, dim),
            StateWeight::Dense(q) => q.clone(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, StateWeight::Dense(_))
    }
}

/// Coupling `K = -Ehat^T (Sigma^-1)_33 Ehat` passed to the upstream
/// neighbour's state weight. Symmetric PSD; its last block row and column
/// vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    pub k: DMatrix<f64>,
}

impl CouplingMatrix {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Number of scalars needed to ship `K` using symmetric storage.
    pub fn packed_len(&self) -> usize {
        let d = self.dim();
        d * (d + 1) / 2
    }
}

/// Multi-column right-hand side or solution of `Sigma_j X = Y`, split into
/// the five row blocks `(x, u, p, lambda, theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktBlocks {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

impl KktBlocks {
    pub fn zeros(sub: &StackedSubsystem, ncols: usize) -> Self {
        Self {
            x: DMatrix::zeros(sub.nx(), ncols),
            u: DMatrix::zeros(sub.nu_dim(), ncols),
            p: DMatrix::zeros(sub.nx(), ncols),
            lambda: DMatrix::zeros(sub.nrows_ineq(), ncols),
            theta: DMatrix::zeros(sub.nrows_ineq(), ncols),
        }
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn from_vector(v: &PrimalDual) -> Self {
        Self {
            x: col(&v.x),
            u: col(&v.u),
            p: col(&v.p),
            lambda: col(&v.lambda),
            theta: col(&v.theta),
        }
    }

    /// Column `j` as a five-block vector.
    pub fn column(&self, j: usize) -> PrimalDual {
        PrimalDual {
            x: self.x.column(j).into_owned(),
            u: self.u.column(j).into_owned(),
            p: self.p.column(j).into_owned(),
            lambda: self.lambda.column(j).into_owned(),
            theta: self.theta.column(j).into_owned(),
        }
    }

    /// Stacks the blocks into a single `block_dim x q` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let rows = self.x.nrows() + self.u.nrows() + self.p.nrows() + self.lambda.nrows() + self.theta.nrows();
        let mut out = DMatrix::zeros(rows, self.ncols());
        let mut off = 0;
        for b in [&self.x, &self.u, &self.p, &self.lambda, &self.theta] {
            out.rows_mut(off, b.nrows()).copy_from(b);
            off += b.nrows();
        }
        out
    }

    pub fn from_dense(sub: &StackedSubsystem, m: &DMatrix<f64>) -> Self {
        let sizes = [sub.nx(), sub.nu_dim(), sub.nx(), sub.nrows_ineq(), sub.nrows_ineq()];
        let mut off = 0;
        let mut take = |k: usize| {
            let out = m.rows(off, k).into_owned();
            off += k;
            out
        };
        Self {
            x: take(sizes[0]),
            u: take(sizes[1]),
            p: take(sizes[2]),
            lambda: take(sizes[3]),
            theta: take(sizes[4]),
        }
    }

    fn matches(&self, sub: &StackedSubsystem) -> bool {
        let q = self.ncols();
        self.x.shape() == (sub.nx(), q)
            && self.u.shape() == (sub.nu_dim(), q)
            && self.p.shape() == (sub.nx(), q)
            && self.lambda.shape() == (sub.nrows_ineq(), q)
            && self.theta.shape() == (sub.nrows_ineq(), q)
    }
}

/// Reusable factorization of `Sigma_j`.
#[derive(Debug)]
pub struct SigmaFactor {
    stacked: Arc<StackedSubsystem>,
    lambda: DVector<f64>,
    theta_inv: DVector<f64>,
    theta_inv_lambda: DVector<f64>,
    qbar: StateWeight,
    qtilde: StateWeight,
    stilde: Vec<DMatrix<f64>>,
    rtilde: Vec<DMatrix<f64>>,
    rtilde_chol: Vec<Cholesky<f64, Dyn>>,
    atilde: UnitLowerBidiagonal,
    g_chol: Cholesky<f64, Dyn>,
    solves: AtomicU64,
    solve_columns: AtomicU64,
}

fn scale_rows(d: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        c.component_mul_assign(d);
    }
    out
}

/// Factors `Sigma_j` at the multipliers `(theta, lambda)`. `coupling` is the
/// downstream contribution `K_j` (absent for the last sub-system).
pub fn build_sigma_factor(
    stacked: Arc<StackedSubsystem>,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
    coupling: Option<&CouplingMatrix>,
) -> Result<SigmaFactor> {
    let sub = &*stacked;
    let fail = |detail: String| Error::Factorization {
        subsystem: sub.index,
        detail,
    };
    let rows = sub.nrows_ineq();
    if theta.len() != rows || lambda.len() != rows {
        return Err(Error::dim(format!("multipliers of sub-system {}", sub.index)));
    }
    if theta.iter().any(|v| !(*v > 0.0)) || lambda.iter().any(|v| !(*v >= 0.0)) {
        return Err(fail("theta must be positive and lambda non-negative".into()));
    }
    if let Some(k) = coupling {
        if k.dim() != sub.nx() {
            return Err(Error::dim(format!("coupling of size {} for sub-system {}", k.dim(), sub.index)));
        }
    }
    let (n, nu, horizon) = (sub.n, sub.nu, sub.horizon);
    let theta_inv = theta.map(|v| 1.0 / v);
    let d = lambda.component_mul(&theta_inv);

    let weighted_m: Vec<DMatrix<f64>> = sub
        .mm
        .iter()
        .enumerate()
        .map(|(t, m)| scale_rows(&d.rows(t * nu, nu).into_owned(), m))
        .collect();
    let qbar_blocks: Vec<DMatrix<f64>> = (0..=horizon)
        .map(|t| {
            let mut q = &sub.q[t] + sub.mm[t].transpose() * &weighted_m[t];
            symmetrize(&mut q);
            q
        })
        .collect();

    let mut stilde = Vec::with_capacity(horizon);
    let mut rtilde = Vec::with_capacity(horizon);
    let mut rtilde_chol = Vec::with_capacity(horizon);
    let mut corrections = Vec::with_capacity(horizon);
    let mut sub_blocks = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let dl = scale_rows(&d.rows(t * nu, nu).into_owned(), &sub.l[t]);
        let st = &sub.s[t] + sub.l[t].transpose() * &weighted_m[t];
        let mut rt = &sub.r[t] + sub.l[t].transpose() * dl;
        symmetrize(&mut rt);
        let ch = Cholesky::new(rt.clone()).ok_or_else(|| fail(format!("R~ block {t} is not positive definite")))?;
        let rinv_s = ch.solve(&st);
        let mut corr = st.transpose() * &rinv_s;
        symmetrize(&mut corr);
        sub_blocks.push(-&sub.a[t] + &sub.b[t] * &rinv_s);
        corrections.push(corr);
        stilde.push(st);
        rtilde.push(rt);
        rtilde_chol.push(ch);
    }

    let (qbar, qtilde) = match coupling {
        None => {
            let qt: Vec<DMatrix<f64>> = qbar_blocks
                .iter()
                .enumerate()
                .map(|(t, q)| if t < horizon { q - &corrections[t] } else { q.clone() })
                .collect();
            (StateWeight::BlockDiagonal(qbar_blocks), StateWeight::BlockDiagonal(qt))
        }
        Some(k) => {
            let mut qb = block_diag_dense(&qbar_blocks, sub.nx(), sub.nx()) + &k.k;
            symmetrize(&mut qb);
            let mut qt = qb.clone();
            for (t, corr) in corrections.iter().enumerate() {
                let mut v = qt.view_mut((t * n, t * n), (n, n));
                v -= corr;
            }
            symmetrize(&mut qt);
            (StateWeight::Dense(qb), StateWeight::Dense(qt))
        }
    };

    let atilde = UnitLowerBidiagonal::new(n, sub_blocks);
    let mut u = sub.dense_bhat();
    atilde.solve_in_place(&mut u);
    let qu = qtilde.mul(&u);
    let mut g = u.transpose() * qu;
    let m = sub.m;
    for (t, rt) in rtilde.iter().enumerate() {
        let mut v = g.view_mut((t * m, t * m), (m, m));
        v += rt;
    }
    symmetrize(&mut g);
    let g_chol = cholesky_with_jitter(g).ok_or_else(|| fail("G is numerically indefinite".into()))?;

    Ok(SigmaFactor {
        lambda: lambda.clone(),
        theta_inv,
        theta_inv_lambda: d,
        qbar,
        qtilde,
        stilde,
        rtilde,
        rtilde_chol,
        atilde,
        g_chol,
        solves: AtomicU64::new(0),
        solve_columns: AtomicU64::new(0),
        stacked,
    })
}

impl SigmaFactor {
    pub fn stacked(&self) -> &Arc<StackedSubsystem> {
        &self.stacked
    }

    pub fn theta_inv_lambda(&self) -> &DVector<f64> {
        &self.theta_inv_lambda
    }

    pub fn atilde(&self) -> &UnitLowerBidiagonal {
        &self.atilde
    }

    pub fn qtilde(&self) -> &StateWeight {
        &self.qtilde
    }

    pub fn qbar(&self) -> &StateWeight {
        &self.qbar
    }

    /// Number of `sigma_solve` calls and total right-hand-side columns.
    pub fn solve_counts(&self) -> (u64, u64) {
        (self.solves.load(Ordering::Relaxed), self.solve_columns.load(Ordering::Relaxed))
    }

    fn rtilde_solve(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.stacked.m;
        let mut out = y.clone();
        for (t, ch) in self.rtilde_chol.iter().enumerate() {
            let mut blk = out.rows(t * m, m).into_owned();
            ch.solve_mut(&mut blk);
            out.rows_mut(t * m, m).copy_from(&blk);
        }
        out
    }

    fn stilde_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.stilde, x, self.stacked.nu_dim())
    }

    fn stilde_t_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul_transpose(&self.stilde, u, self.stacked.nx())
    }

    /// `Zt v = At^-1 Bhat G^-1 Bhat^T At^-T v`.
    pub fn z_tilde(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = v.clone();
        self.atilde.solve_transpose_in_place(&mut w);
        let mut g = self.stacked.bhat_t_mul(&w);
        self.g_chol.solve_mut(&mut g);
        let mut out = self.stacked.bhat_mul(&g);
        self.atilde.solve_in_place(&mut out);
        out
    }

    /// Solves `Sigma_j X = Y` for a multi-column right-hand side.
    pub fn sigma_solve(&self, y: &KktBlocks) -> Result<KktBlocks> {
        let sub = &*self.stacked;
        if !y.matches(sub) {
            return Err(Error::dim(format!("right-hand side for Sigma_{}", sub.index)));
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.solve_columns.fetch_add(y.ncols() as u64, Ordering::Relaxed);

        // Eliminate the slack and multiplier rows.
        let t4 = scale_rows(&self.theta_inv_lambda, &y.lambda) - scale_rows(&self.theta_inv, &y.theta);
        let y1 = &y.x + sub.mhat_t_mul(&t4);
        let y2 = &y.u + sub.lhat_t_mul(&t4);

        // Psi^T
        let r2 = self.rtilde_solve(&y2);
        let a = y1 - self.stilde_t_mul(&r2);
        let mut h = &y.p - sub.bhat_mul(&r2);
        self.atilde.solve_in_place(&mut h);

        // Omega
        let g = &a + self.qtilde.mul(&h);
        let zg = self.z_tilde(&g);
        let o1 = &zg - &h;
        let o3 = self.qtilde.mul(&zg) - g;

        // Psi
        let mut x3 = o3;
        self.atilde.solve_transpose_in_place(&mut x3);
        let x2 = &r2 - self.rtilde_solve(&(self.stilde_mul(&o1) + sub.bhat_t_mul(&x3)));
        let x1 = o1;

        let x5 = &y.lambda - sub.mhat_mul(&x1) - sub.lhat_mul(&x2);
        let x4 = scale_rows(&self.theta_inv, &(&y.theta - scale_rows(&self.lambda, &x5)));
        Ok(KktBlocks {
            x: x1,
            u: x2,
            p: x3,
            lambda: x4,
            theta: x5,
        })
    }

    /// Single right-hand-side convenience wrapper.
    pub fn solve_vector(&self, y: &PrimalDual) -> Result<PrimalDual> {
        Ok(self.sigma_solve(&KktBlocks::from_vector(y))?.column(0))
    }

    /// Coupling `K = -Ehat_j^T (Sigma_j^-1)_33 Ehat_j` for the upstream
    /// neighbour, or `None` for the first sub-system.
    ///
    /// With only the p-block of the right-hand side nonzero the solve
    /// pipeline collapses to `(Sigma^-1)_33 = -At^-T (Qt - Qt Zt Qt) At^-1`,
    /// so with `F = At^-1 Ehat` and `V = Lg^-1 Bhat^T At^-T Qt F` (`G = Lg Lg^T`)
    ///
    /// ```text
    /// K = F^T Qt F - V^T V,
    /// ```
    ///
    /// evaluated on the `n_{j-1} T` nonzero columns of `Ehat_j` only.
    pub fn coupling_for_upstream(&self) -> Result<Option<CouplingMatrix>> {
        let sub = &*self.stacked;
        if sub.e.is_none() {
            return Ok(None);
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        let cols = sub.n_up * sub.horizon;
        self.solve_columns.fetch_add(cols as u64, Ordering::Relaxed);
        let mut f = sub.dense_ehat().columns(0, cols).into_owned();
        self.atilde.solve_in_place(&mut f);
        let qf = self.qtilde.mul(&f);
        let mut w = qf.clone();
        self.atilde.solve_transpose_in_place(&mut w);
        let mut v = sub.bhat_t_mul(&w);
        self.g_chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let mut small = f.transpose() * qf;
        small.gemm_tr(-1.0, &v, &v, 1.0);
        let mut k = DMatrix::zeros(sub.nx_up(), sub.nx_up());
        k.view_mut((0, 0), (cols, cols)).copy_from(&small);
        symmetrize(&mut k);
        Ok(Some(CouplingMatrix { k }))
    }

    /// Closed form of `(Sigma_j^-1)_33`,
    /// `-At^-T Qt^1/2 (I + Qt^1/2 At^-1 Bhat Rt^-1 Bhat^T At^-T Qt^1/2)^-1 Qt^1/2 At^-1`.
    /// Used for verification only.
    pub fn d33_closed_form(&self) -> Result<DMatrix<f64>> {
        let sub = &*self.stacked;
        let nx = sub.nx();
        let qt = self.qtilde.to_dense(nx);
        let eig = SymmetricEigen::try_new(qt, f64::EPSILON, 0).ok_or_else(|| Error::Factorization {
            subsystem: sub.index,
            detail: "eigendecomposition of Q~ did not converge".into(),
        })?;
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let q_half = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();

        let mut a_inv = DMatrix::identity(nx, nx);
        self.atilde.solve_in_place(&mut a_inv);
        let u = &a_inv * sub.dense_bhat();
        let v = &u * self.rtilde_solve(&u.transpose());
        let inner = DMatrix::identity(nx, nx) + &q_half * v * &q_half;
        let inner_inv = inner.try_inverse().ok_or(Error::SingularMatrix)?;
        let mut out = -(a_inv.transpose() * &q_half * inner_inv * &q_half * a_inv);
        symmetrize(&mut out);
        Ok(out)
    }

    /// Dense `[[Qbar, St^T], [St, Rt]]`.
    pub fn htilde_dense(&self) -> DMatrix<f64> {
        let sub = &*self.stacked;
        let (nx, nu) = (sub.nx(), sub.nu_dim());
        let mut h = DMatrix::zeros(nx + nu, nx + nu);
        h.view_mut((0, 0), (nx, nx)).copy_from(&self.qbar.to_dense(nx));
        let st = block_diag_dense(&self.stilde, nu, nx);
        h.view_mut((nx, 0), (nu, nx)).copy_from(&st);
        h.view_mut((0, nx), (nx, nu)).copy_from(&st.transpose());
        h.view_mut((nx, nx), (nu, nu)).copy_from(&block_diag_dense(&self.rtilde, nu, nu));
        h
    }

    pub fn rtilde_dense(&self) -> DMatrix<f64> {
        let nu = self.stacked.nu_dim();
        block_diag_dense(&self.rtilde, nu, nu)
    }

    /// `G` reassembled from its Cholesky factor.
    pub fn g_dense(&self) -> DMatrix<f64> {
        let l = self.g_chol.l();
        &l * l.transpose()
    }

    /// Dense `Sigma_j`, for oracle checks.
    pub fn sigma_dense(&self) -> DMatrix<f64> {
        let sub = &*self.stacked;
        let theta = self.theta_inv.map(|v| 1.0 / v);
        let mut d = crate::kkt::dense_d(sub, &self.lambda, &theta);
        if let StateWeight::Dense(qb) = &self.qbar {
            let nx = sub.nx();
            let k = qb - block_diag_dense(&self.qbar_blocks_without_coupling(), nx, nx);
            let mut v = d.view_mut((0, 0), (nx, nx));
            v += k;
        }
        d
    }

    fn qbar_blocks_without_coupling(&self) -> Vec<DMatrix<f64>> {
        let sub = &*self.stacked;
        let nu = sub.nu;
        (0..=sub.horizon)
            .map(|t| {
                let dm = scale_rows(&self.theta_inv_lambda.rows(t * nu, nu).into_owned(), &sub.mm[t]);
                &sub.q[t] + sub.mm[t].transpose() * dm
            })
            .collect()
    }
}

/// Dense product `Sigma_j * X` for a multi-column block right-hand side.
pub fn sigma_apply(factor: &SigmaFactor, x: &KktBlocks) -> KktBlocks {
    let sub = factor.stacked();
    let y = factor.sigma_dense() * x.to_dense();
    KktBlocks::from_dense(sub, &y)
}
