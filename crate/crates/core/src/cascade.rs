//! Newton-system solvers for the whole cascade: the structured
//! backward/forward recursion and a dense LU oracle.
//!
//! The linearized KKT system is block tridiagonal in the sub-system index,
//!
//! ```text
//! -Upsilon_j d_{j-1} + D_j d_j - Upsilon_{j+1}^T d_{j+1} = rho_j,
//! ```
//!
//! with `Upsilon_j` carrying only `-Ehat_j` in its (p, x) block. Eliminating
//! from the last sub-system upwards gives the Schur complements `Sigma_j`
//! (`D_j` with `Qhat_j` replaced by `Qhat_j + K_j`), a backward sweep on the
//! right-hand side and a forward sweep for the direction.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kkt::{dense_d, dense_upsilon, Iterate, NewtonStep, PrimalDual};
use crate::sigma::{build_sigma_factor, CouplingMatrix, SigmaFactor};
use crate::stacked::{col, vec_of, StackedCascade};

/// Default bound on the dense oracle's system dimension.
pub const DEFAULT_DENSE_CAP: usize = 5000;

/// Factorizations `Sigma_1 .. Sigma_N` at one iterate.
#[derive(Debug)]
pub struct CascadeFactorization {
    factors: Vec<SigmaFactor>,
    couplings: Vec<Option<CouplingMatrix>>,
    newton_solves: AtomicU64,
    coupling_solves: u64,
    elapsed_s: f64,
}

/// Per-step counts of `Sigma_j` solves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveCounts {
    /// Single right-hand-side solves in the sweeps.
    pub sweep: u64,
    /// Multi-column solves used to form the couplings `K_j`.
    pub coupling: u64,
}

/// Factors every `Sigma_j` from `j = N` down to `j = 1`.
pub fn factor_cascade(cascade: &StackedCascade, iterate: &Iterate) -> Result<CascadeFactorization> {
    iterate.check_dims(cascade)?;
    let start = Instant::now();
    let n = cascade.len();
    let mut factors: Vec<Option<SigmaFactor>> = (0..n).map(|_| None).collect();
    let mut couplings: Vec<Option<CouplingMatrix>> = vec![None; n];
    let mut coupling_solves = 0;
    for j in (0..n).rev() {
        let s = &iterate.parts[j];
        let f = build_sigma_factor(cascade.subs[j].clone(), &s.theta, &s.lambda, couplings[j].as_ref())?;
        if j > 0 {
            couplings[j - 1] = f.coupling_for_upstream()?;
            coupling_solves += 1;
        }
        factors[j] = Some(f);
    }
    Ok(CascadeFactorization {
        factors: factors.into_iter().map(|f| f.expect("every factor is built")).collect(),
        couplings,
        newton_solves: AtomicU64::new(0),
        coupling_solves,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

impl CascadeFactorization {
    pub fn factors(&self) -> &[SigmaFactor] {
        &self.factors
    }

    /// Coupling `K_j` added to sub-system `j` (0-based); `None` for the last.
    pub fn coupling(&self, j: usize) -> Option<&CouplingMatrix> {
        self.couplings.get(j).and_then(Option::as_ref)
    }

    pub fn factor_seconds(&self) -> f64 {
        self.elapsed_s
    }

    pub fn solve_counts(&self) -> SolveCounts {
        SolveCounts {
            sweep: self.newton_solves.load(Ordering::Relaxed),
            coupling: self.coupling_solves,
        }
    }

    fn solve_one(&self, j: usize, rhs: &PrimalDual) -> Result<PrimalDual> {
        self.newton_solves.fetch_add(1, Ordering::Relaxed);
        self.factors[j].solve_vector(rhs)
    }

    /// Solves the block-tridiagonal Newton system for right-hand sides
    /// `rho_1 .. rho_N`.
    pub fn solve_newton(&self, rhs: &[PrimalDual]) -> Result<NewtonStep> {
        let n = self.factors.len();
        if rhs.len() != n {
            return Err(Error::dim(format!("{} right-hand sides for {} sub-systems", rhs.len(), n)));
        }
        for (j, (r, f)) in rhs.iter().zip(&self.factors).enumerate() {
            if !r.matches(f.stacked()) {
                return Err(Error::dim(format!("right-hand side {} has wrong dimensions", j + 1)));
            }
        }

        // Backward sweep: rho~_{j-1} = rho_{j-1} + Upsilon_j^T Sigma_j^-1 rho~_j.
        let mut tilde: Vec<PrimalDual> = rhs.to_vec();
        for j in (1..n).rev() {
            let w = self.solve_one(j, &tilde[j])?;
            let sub = self.factors[j].stacked();
            let ex = sub.ehat_t_mul(&col(&w.p));
            tilde[j - 1].x -= vec_of(ex);
        }

        // Forward sweep: d_j = Sigma_j^-1 (rho~_j + Upsilon_j d_{j-1}).
        let mut parts: Vec<PrimalDual> = Vec::with_capacity(n);
        for j in 0..n {
            let mut r = tilde[j].clone();
            if j > 0 {
                let sub = self.factors[j].stacked();
                let ex = sub.ehat_mul(&col(&parts[j - 1].x));
                r.p -= vec_of(ex);
            }
            parts.push(self.solve_one(j, &r)?);
        }
        Ok(NewtonStep { parts })
    }
}

/// Offsets of each sub-system's block in the stacked Newton system.
pub fn block_offsets(cascade: &StackedCascade) -> Vec<usize> {
    let mut off = Vec::with_capacity(cascade.len() + 1);
    let mut acc = 0;
    off.push(0);
    for sub in &cascade.subs {
        acc += sub.block_dim();
        off.push(acc);
    }
    off
}

/// Dense block-tridiagonal Newton matrix at `iterate`.
pub fn dense_assemble(cascade: &StackedCascade, iterate: &Iterate, cap: usize) -> Result<DMatrix<f64>> {
    iterate.check_dims(cascade)?;
    let dim = cascade.total_block_dim();
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap });
    }
    let off = block_offsets(cascade);
    let mut m = DMatrix::zeros(dim, dim);
    for (j, sub) in cascade.subs.iter().enumerate() {
        let s = &iterate.parts[j];
        let d = dense_d(sub, &s.lambda, &s.theta);
        m.view_mut((off[j], off[j]), d.shape()).copy_from(&d);
        if j > 0 {
            let up = -dense_upsilon(sub, off[j] - off[j - 1]);
            m.view_mut((off[j], off[j - 1]), up.shape()).copy_from(&up);
            m.view_mut((off[j - 1], off[j]), (up.ncols(), up.nrows())).copy_from(&up.transpose());
        }
    }
    Ok(m)
}

/// Solves `m x = b` with faer's partial-pivot LU on a single thread.
pub fn dense_lu_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n || b.len() != n {
        return Err(Error::dim("dense LU needs a square system"));
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let a = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let lu = a.partial_piv_lu();
    lu.solve_in_place(&mut rhs);
    let x = DVector::from_fn(n, |i, _| rhs[(i, 0)]);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularMatrix)
    }
}

/// Newton direction from the dense assembled system. Refuses systems larger
/// than `cap`.
pub fn dense_newton_solve(
    cascade: &StackedCascade,
    iterate: &Iterate,
    rhs: &[PrimalDual],
    cap: usize,
) -> Result<NewtonStep> {
    let m = dense_assemble(cascade, iterate, cap)?;
    if rhs.len() != cascade.len() {
        return Err(Error::dim(format!("{} right-hand sides for {} sub-systems", rhs.len(), cascade.len())));
    }
    let flat: Vec<f64> = rhs.iter().flat_map(|r| r.to_flat().data.as_vec().clone()).collect();
    if flat.len() != m.nrows() {
        return Err(Error::dim("right-hand side length"));
    }
    let x = dense_lu_solve(&m, &DVector::from_vec(flat))?;
    Ok(split_flat(cascade, &x))
}

/// Splits a stacked vector into per-sub-system blocks.
pub fn split_flat(cascade: &StackedCascade, x: &DVector<f64>) -> NewtonStep {
    let off = block_offsets(cascade);
    let parts = cascade
        .subs
        .iter()
        .enumerate()
        .map(|(j, sub)| PrimalDual::from_flat(sub, &x.as_slice()[off[j]..off[j + 1]]))
        .collect();
    NewtonStep { parts }
}
