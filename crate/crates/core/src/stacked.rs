//! Horizon-stacked representation of each sub-system.
//!
//! The stacked matrices are stored as typed block sequences indexed by
//! stage; every operator is applied matrix-free and accepts multi-column
//! inputs. Block layout (state blocks have `n` rows, `T+1` of them; input
//! blocks have `m` rows, `T` of them; constraint blocks have `nu` rows):
//!
//! ```text
//! Ahat: identity diagonal, -A(t) at block (t+1, t)
//! Ehat: E(t) at block (t+1, t), zero first block row and last block column
//! Bhat: B(t) at block (t+1, t)
//! Qhat = diag(Q(0..T-1), P)     Rhat = diag(R(0..T-1))
//! Shat = [diag(S(0..T-1)) 0]    Lhat = [diag(L(0..T-1)); 0]
//! Mhat = diag(M(0..T-1), M_T)
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag_dense, block_diag_mul, block_diag_mul_transpose};
use crate::problem::{CascadeProblem, SubsystemModel};

#[derive(Clone, Debug)]
pub struct StackedSubsystem {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub nu: usize,
    pub horizon: usize,
    /// State dimension of the upstream neighbour (0 for the first sub-system).
    pub n_up: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub e: Option<Vec<DMatrix<f64>>>,
    /// `T+1` blocks; the last one is the terminal weight `P`.
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    /// `T+1` blocks; the last one is the terminal constraint matrix.
    pub mm: Vec<DMatrix<f64>>,
    pub l: Vec<DMatrix<f64>>,
    pub c: DVector<f64>,
    pub xi: DVector<f64>,
}

pub fn stack(model: &SubsystemModel, n_up: usize) -> StackedSubsystem {
    let horizon = model.stages.len();
    let mut q: Vec<_> = model.stages.iter().map(|s| s.q.clone()).collect();
    q.push(model.terminal.p.clone());
    let mut mm: Vec<_> = model.stages.iter().map(|s| s.m.clone()).collect();
    mm.push(model.terminal.m.clone());
    let mut c = DVector::zeros(model.nu * (horizon + 1));
    for (t, st) in model.stages.iter().enumerate() {
        c.rows_mut(t * model.nu, model.nu).copy_from(&st.c);
    }
    c.rows_mut(horizon * model.nu, model.nu).copy_from(&model.terminal.c);
    let e = if model.stages.iter().all(|s| s.e.is_some()) && !model.stages.is_empty() {
        Some(model.stages.iter().map(|s| s.e.clone().unwrap()).collect())
    } else {
        None
    };
    StackedSubsystem {
        index: model.index,
        n: model.n,
        m: model.m,
        nu: model.nu,
        horizon,
        n_up: if e.is_some() { n_up } else { 0 },
        a: model.stages.iter().map(|s| s.a.clone()).collect(),
        b: model.stages.iter().map(|s| s.b.clone()).collect(),
        e,
        q,
        r: model.stages.iter().map(|s| s.r.clone()).collect(),
        s: model.stages.iter().map(|s| s.s.clone()).collect(),
        mm,
        l: model.stages.iter().map(|s| s.l.clone()).collect(),
        c,
        xi: model.xi.clone(),
    }
}

impl StackedSubsystem {
    /// Length of `xhat` (and of the equality multiplier `p`).
    pub fn nx(&self) -> usize {
        self.n * (self.horizon + 1)
    }

    /// Length of `uhat`.
    pub fn nu_dim(&self) -> usize {
        self.m * self.horizon
    }

    /// Number of stacked inequality rows.
    pub fn nrows_ineq(&self) -> usize {
        self.nu * (self.horizon + 1)
    }

    pub fn nx_up(&self) -> usize {
        self.n_up * (self.horizon + 1)
    }

    pub fn block_dim(&self) -> usize {
        2 * self.nx() + self.nu_dim() + 2 * self.nrows_ineq()
    }

    fn check_rows(&self, x: &DMatrix<f64>, rows: usize, what: &str) -> Result<()> {
        if x.nrows() != rows {
            return Err(Error::dim(format!(
                "{what} of sub-system {} has {} rows, expected {rows}",
                self.index,
                x.nrows()
            )));
        }
        Ok(())
    }

    pub fn ahat_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut y = x.clone();
        for (t, a) in self.a.iter().enumerate() {
            y.rows_mut((t + 1) * n, n).gemm(-1.0, a, &x.rows(t * n, n), 1.0);
        }
        y
    }

    pub fn ahat_t_mul(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut y = p.clone();
        for (t, a) in self.a.iter().enumerate() {
            y.rows_mut(t * n, n).gemm_tr(-1.0, a, &p.rows((t + 1) * n, n), 1.0);
        }
        y
    }

    /// Forward substitution with `Ahat`.
    pub fn ahat_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut y = rhs.clone();
        for (t, a) in self.a.iter().enumerate() {
            let prev = y.rows(t * n, n).into_owned();
            y.rows_mut((t + 1) * n, n).gemm(1.0, a, &prev, 1.0);
        }
        y
    }

    /// `Ehat * x_up`; zero when this sub-system has no upstream neighbour.
    pub fn ehat_mul(&self, x_up: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut y = DMatrix::zeros(self.nx(), x_up.ncols());
        if let Some(e) = &self.e {
            let nup = self.n_up;
            for (t, et) in e.iter().enumerate() {
                y.rows_mut((t + 1) * n, n).gemm(1.0, et, &x_up.rows(t * nup, nup), 0.0);
            }
        }
        y
    }

    /// `Ehat^T * p`, a vector of the upstream neighbour's state dimension.
    pub fn ehat_t_mul(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let nup = self.n_up;
        let mut y = DMatrix::zeros(self.nx_up(), p.ncols());
        if let Some(e) = &self.e {
            for (t, et) in e.iter().enumerate() {
                y.rows_mut(t * nup, nup).gemm_tr(1.0, et, &p.rows((t + 1) * n, n), 0.0);
            }
        }
        y
    }

    pub fn bhat_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut y = DMatrix::zeros(self.nx(), u.ncols());
        for (t, b) in self.b.iter().enumerate() {
            y.rows_mut((t + 1) * n, n).gemm(1.0, b, &u.rows(t * m, m), 0.0);
        }
        y
    }

    pub fn bhat_t_mul(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut y = DMatrix::zeros(self.nu_dim(), p.ncols());
        for (t, b) in self.b.iter().enumerate() {
            y.rows_mut(t * m, m).gemm_tr(1.0, b, &p.rows((t + 1) * n, n), 0.0);
        }
        y
    }

    pub fn qhat_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.q, x, self.nx())
    }

    pub fn rhat_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.r, u, self.nu_dim())
    }

    /// `Shat * x` (the terminal state block does not contribute).
    pub fn shat_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.s, x, self.nu_dim())
    }

    pub fn shat_t_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul_transpose(&self.s, u, self.nx())
    }

    pub fn mhat_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.mm, x, self.nrows_ineq())
    }

    pub fn mhat_t_mul(&self, lam: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul_transpose(&self.mm, lam, self.nx())
    }

    /// `Lhat * u`; the terminal constraint block has no input term.
    pub fn lhat_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul(&self.l, u, self.nrows_ineq())
    }

    pub fn lhat_t_mul(&self, lam: &DMatrix<f64>) -> DMatrix<f64> {
        block_diag_mul_transpose(&self.l, lam, self.nu_dim())
    }

    /// Adds `scale * Hhat * xi` to the first state block of every column.
    pub fn inject_xi(&self, y: &mut DMatrix<f64>, scale: f64) {
        for mut col in y.column_iter_mut() {
            for i in 0..self.n {
                col[i] += scale * self.xi[i];
            }
        }
    }

    pub fn dense_ahat(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::identity(self.nx(), self.nx());
        for (t, a) in self.a.iter().enumerate() {
            out.view_mut(((t + 1) * n, t * n), (n, n)).copy_from(&(-a));
        }
        out
    }

    pub fn dense_ehat(&self) -> DMatrix<f64> {
        let (n, nup) = (self.n, self.n_up);
        let mut out = DMatrix::zeros(self.nx(), self.nx_up());
        if let Some(e) = &self.e {
            for (t, et) in e.iter().enumerate() {
                out.view_mut(((t + 1) * n, t * nup), (n, nup)).copy_from(et);
            }
        }
        out
    }

    pub fn dense_bhat(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = DMatrix::zeros(self.nx(), self.nu_dim());
        for (t, b) in self.b.iter().enumerate() {
            out.view_mut(((t + 1) * n, t * m), (n, m)).copy_from(b);
        }
        out
    }

    pub fn dense_qhat(&self) -> DMatrix<f64> {
        block_diag_dense(&self.q, self.nx(), self.nx())
    }

    pub fn dense_rhat(&self) -> DMatrix<f64> {
        block_diag_dense(&self.r, self.nu_dim(), self.nu_dim())
    }

    pub fn dense_shat(&self) -> DMatrix<f64> {
        block_diag_dense(&self.s, self.nu_dim(), self.nx())
    }

    pub fn dense_mhat(&self) -> DMatrix<f64> {
        block_diag_dense(&self.mm, self.nrows_ineq(), self.nx())
    }

    pub fn dense_lhat(&self) -> DMatrix<f64> {
        block_diag_dense(&self.l, self.nrows_ineq(), self.nu_dim())
    }

    /// `Hhat * xi` as a stacked state-sized vector.
    pub fn hhat_xi(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.nx());
        v.rows_mut(0, self.n).copy_from(&self.xi);
        v
    }
}

/// Stacked form of a whole cascade. Sub-systems are shared through `Arc`
/// so factors and agents can hold a handle to their own data.
#[derive(Clone, Debug)]
pub struct StackedCascade {
    pub horizon: usize,
    pub subs: Vec<Arc<StackedSubsystem>>,
}

impl StackedCascade {
    pub fn new(problem: &CascadeProblem) -> Self {
        let mut subs = Vec::with_capacity(problem.subsystems.len());
        let mut n_up = 0;
        for model in &problem.subsystems {
            subs.push(Arc::new(stack(model, n_up)));
            n_up = model.n;
        }
        Self {
            horizon: problem.horizon,
            subs,
        }
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn total_ineq_rows(&self) -> usize {
        self.subs.iter().map(|s| s.nrows_ineq()).sum()
    }

    pub fn total_block_dim(&self) -> usize {
        self.subs.iter().map(|s| s.block_dim()).sum()
    }

    /// Infinity norm of the problem data entering the residuals (`c`, `xi`).
    pub fn data_norm(&self) -> f64 {
        self.subs
            .iter()
            .flat_map(|s| s.c.iter().chain(s.xi.iter()))
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// State and input trajectories of every sub-system.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xhat: Vec<DVector<f64>>,
    pub uhat: Vec<DVector<f64>>,
}

pub(crate) fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub(crate) fn vec_of(m: DMatrix<f64>) -> DVector<f64> {
    debug_assert_eq!(m.ncols(), 1);
    m.column(0).into_owned()
}

/// Simulates the cascade dynamics stage by stage, sweeping the sub-systems
/// in cascade order so the upstream state is available.
pub fn simulate(problem: &CascadeProblem, controls: &[DVector<f64>]) -> Result<Trajectory> {
    if controls.len() != problem.subsystems.len() {
        return Err(Error::dim(format!(
            "{} control vectors for {} sub-systems",
            controls.len(),
            problem.subsystems.len()
        )));
    }
    let horizon = problem.horizon;
    let mut xhat: Vec<DVector<f64>> = Vec::with_capacity(controls.len());
    for (pos, (sub, u)) in problem.subsystems.iter().zip(controls).enumerate() {
        let (n, m) = (sub.n, sub.m);
        if u.len() != m * horizon {
            return Err(Error::dim(format!(
                "control of sub-system {} has length {}, expected {}",
                pos + 1,
                u.len(),
                m * horizon
            )));
        }
        let mut x = DVector::zeros(n * (horizon + 1));
        x.rows_mut(0, n).copy_from(&sub.xi);
        for (t, st) in sub.stages.iter().enumerate() {
            let mut next = &st.a * x.rows(t * n, n) + &st.b * u.rows(t * m, m);
            if let (Some(e), Some(up)) = (&st.e, pos.checked_sub(1).map(|p| &xhat[p])) {
                let nup = e.ncols();
                next += e * up.rows(t * nup, nup);
            }
            x.rows_mut((t + 1) * n, n).copy_from(&next);
        }
        xhat.push(x);
    }
    Ok(Trajectory {
        xhat,
        uhat: controls.to_vec(),
    })
}

/// Left-hand side of the stacked dynamics,
/// `-Ahat x + Ehat x_up + Bhat u + Hhat xi`.
pub fn dynamics_residual(
    stacked: &StackedSubsystem,
    xhat: &DVector<f64>,
    xhat_up: Option<&DVector<f64>>,
    uhat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let x = col(xhat);
    let u = col(uhat);
    stacked.check_rows(&x, stacked.nx(), "xhat")?;
    stacked.check_rows(&u, stacked.nu_dim(), "uhat")?;
    let mut r = -stacked.ahat_mul(&x) + stacked.bhat_mul(&u);
    if let (Some(up), true) = (xhat_up, stacked.e.is_some()) {
        let up = col(up);
        stacked.check_rows(&up, stacked.nx_up(), "upstream xhat")?;
        r += stacked.ehat_mul(&up);
    }
    stacked.inject_xi(&mut r, 1.0);
    Ok(vec_of(r))
}

/// `Mhat x + Lhat u - chat`; feasible iff every entry is non-positive.
pub fn inequality_residual(stacked: &StackedSubsystem, xhat: &DVector<f64>, uhat: &DVector<f64>) -> Result<DVector<f64>> {
    let x = col(xhat);
    let u = col(uhat);
    stacked.check_rows(&x, stacked.nx(), "xhat")?;
    stacked.check_rows(&u, stacked.nu_dim(), "uhat")?;
    let r = stacked.mhat_mul(&x) + stacked.lhat_mul(&u);
    Ok(vec_of(r) - &stacked.c)
}

/// Quadratic objective evaluated with the stacked block operators.
pub fn objective(cascade: &StackedCascade, traj: &Trajectory) -> Result<f64> {
    if traj.xhat.len() != cascade.len() || traj.uhat.len() != cascade.len() {
        return Err(Error::dim("trajectory does not match the number of sub-systems"));
    }
    let mut total = 0.0;
    for (sub, (xv, uv)) in cascade.subs.iter().zip(traj.xhat.iter().zip(&traj.uhat)) {
        let x = col(xv);
        let u = col(uv);
        sub.check_rows(&x, sub.nx(), "xhat")?;
        sub.check_rows(&u, sub.nu_dim(), "uhat")?;
        let qx = sub.qhat_mul(&x);
        let ru = sub.rhat_mul(&u);
        let sx = sub.shat_mul(&x);
        total += x.dot(&qx) + u.dot(&ru) + 2.0 * u.dot(&sx);
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{random_cascade, Dims, StageData, SubsystemModel, TerminalData};

    fn scalar_problem(a: f64, b: f64, horizon: usize) -> CascadeProblem {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        CascadeProblem {
            horizon,
            subsystems: vec![SubsystemModel {
                index: 1,
                n: 1,
                m: 1,
                nu: 1,
                stages: (0..horizon)
                    .map(|_| StageData {
                        a: one(a),
                        b: one(b),
                        e: None,
                        q: one(1.0),
                        s: one(0.0),
                        r: one(1.0),
                        m: one(0.0),
                        l: one(1.0),
                        c: DVector::from_element(1, 10.0),
                    })
                    .collect(),
                terminal: TerminalData {
                    p: one(0.0),
                    m: one(1.0),
                    c: DVector::from_element(1, 10.0),
                },
                xi: DVector::zeros(1),
            }],
        }
    }

    #[test]
    fn scalar_block_pattern() {
        let p = scalar_problem(0.7, 2.0, 1);
        let s = stack(&p.subsystems[0], 0);
        assert_eq!(s.dense_ahat(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.7, 1.0]));
        assert_eq!(s.dense_bhat(), DMatrix::from_row_slice(2, 1, &[0.0, 2.0]));
        assert_eq!(s.hhat_xi().len(), 2);
        assert!(s.e.is_none());
        assert_eq!(s.dense_ehat().ncols(), 0);
    }

    #[test]
    fn hand_simulation() {
        let p = scalar_problem(1.0, 1.0, 2);
        let traj = simulate(&p, &[DVector::from_row_slice(&[1.0, 1.0])]).unwrap();
        assert_eq!(traj.xhat[0].as_slice(), &[0.0, 1.0, 2.0]);
        let zero = simulate(&p, &[DVector::zeros(2)]).unwrap();
        assert!(zero.xhat[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulated_trajectory_satisfies_stacked_dynamics() {
        let p = random_cascade(11, 3, 5, Dims::new(3, 2, 2)).unwrap();
        let cascade = StackedCascade::new(&p);
        let controls: Vec<_> = (0..3).map(|j| DVector::from_fn(10, |i, _| ((i + j) as f64).sin())).collect();
        let traj = simulate(&p, &controls).unwrap();
        for j in 0..3 {
            let up = (j > 0).then(|| &traj.xhat[j - 1]);
            let r = dynamics_residual(&cascade.subs[j], &traj.xhat[j], up, &traj.uhat[j]).unwrap();
            assert!(r.amax() <= 1e-12 * (1.0 + traj.xhat[j].norm()));
        }
    }

    #[test]
    fn last_block_perturbation_is_local() {
        let p = random_cascade(2, 1, 4, Dims::new(2, 1, 2)).unwrap();
        let s = stack(&p.subsystems[0], 0);
        let traj = simulate(&p, &[DVector::zeros(4)]).unwrap();
        let mut x = traj.xhat[0].clone();
        let last = x.len() - 1;
        x[last] += 1.0;
        let r = dynamics_residual(&s, &x, None, &traj.uhat[0]).unwrap();
        let nonzero: Vec<_> = (0..r.len()).filter(|&i| r[i].abs() > 1e-12).collect();
        assert_eq!(nonzero, vec![last]);
    }

    #[test]
    fn objective_by_hand() {
        let mut p = scalar_problem(0.0, 1.0, 1);
        p.subsystems[0].xi = DVector::from_element(1, 2.0);
        let cascade = StackedCascade::new(&p);
        let traj = Trajectory {
            xhat: vec![DVector::from_row_slice(&[2.0, 5.0])],
            uhat: vec![DVector::from_element(1, 3.0)],
        };
        assert!((objective(&cascade, &traj).unwrap() - 6.5).abs() < 1e-15);
        let zero = Trajectory {
            xhat: vec![DVector::zeros(2)],
            uhat: vec![DVector::zeros(1)],
        };
        assert_eq!(objective(&cascade, &zero).unwrap(), 0.0);
    }

    #[test]
    fn terminal_constraint_rows_ignore_inputs() {
        let p = random_cascade(5, 1, 3, Dims::new(2, 2, 3)).unwrap();
        let s = stack(&p.subsystems[0], 0);
        let x = DVector::from_fn(s.nx(), |i, _| i as f64 * 0.1);
        let r0 = inequality_residual(&s, &x, &DVector::zeros(s.nu_dim())).unwrap();
        let r1 = inequality_residual(&s, &x, &DVector::from_element(s.nu_dim(), 3.0)).unwrap();
        let tail = s.nu * s.horizon;
        assert_eq!(r0.rows(tail, s.nu), r1.rows(tail, s.nu));
        let zero = inequality_residual(&s, &DVector::zeros(s.nx()), &DVector::zeros(s.nu_dim())).unwrap();
        assert!(zero.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = random_cascade(5, 1, 3, Dims::new(2, 1, 1)).unwrap();
        let s = stack(&p.subsystems[0], 0);
        assert!(dynamics_residual(&s, &DVector::zeros(3), None, &DVector::zeros(3)).is_err());
        assert!(inequality_residual(&s, &DVector::zeros(s.nx()), &DVector::zeros(1)).is_err());
        assert!(simulate(&p, &[]).is_err());
    }

    #[test]
    fn operators_match_dense_assembly() {
        let p = random_cascade(9, 2, 3, Dims::new(2, 2, 3)).unwrap();
        let c = StackedCascade::new(&p);
        let s = &c.subs[1];
        let x = DMatrix::from_fn(s.nx(), 2, |i, j| ((i * 3 + j) as f64).cos());
        let u = DMatrix::from_fn(s.nu_dim(), 2, |i, j| ((i + 5 * j) as f64).sin());
        let lam = DMatrix::from_fn(s.nrows_ineq(), 2, |i, j| (i as f64 - j as f64) * 0.1);
        let xu = DMatrix::from_fn(s.nx_up(), 2, |i, j| (i + j) as f64);
        let close = |a: DMatrix<f64>, b: DMatrix<f64>| assert!((a - b).amax() < 1e-12);
        close(s.ahat_mul(&x), s.dense_ahat() * &x);
        close(s.ahat_t_mul(&x), s.dense_ahat().transpose() * &x);
        close(s.ahat_solve(&x), s.dense_ahat().try_inverse().unwrap() * &x);
        close(s.ehat_mul(&xu), s.dense_ehat() * &xu);
        close(s.ehat_t_mul(&x), s.dense_ehat().transpose() * &x);
        close(s.bhat_mul(&u), s.dense_bhat() * &u);
        close(s.bhat_t_mul(&x), s.dense_bhat().transpose() * &x);
        close(s.shat_mul(&x), s.dense_shat() * &x);
        close(s.shat_t_mul(&u), s.dense_shat().transpose() * &u);
        close(s.mhat_t_mul(&lam), s.dense_mhat().transpose() * &lam);
        close(s.lhat_mul(&u), s.dense_lhat() * &u);
        close(s.lhat_t_mul(&lam), s.dense_lhat().transpose() * &lam);
        // Shat's last block column and Lhat's last block row vanish.
        let sh = s.dense_shat();
        assert_eq!(sh.columns(s.n * s.horizon, s.n).amax(), 0.0);
        let lh = s.dense_lhat();
        assert_eq!(lh.rows(s.nu * s.horizon, s.nu).amax(), 0.0);
    }
}
