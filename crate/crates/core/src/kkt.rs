//! Interior-point iterate, KKT residuals, duality gap and the Newton
//! right-hand side, together with matrix-free application of the diagonal
//! blocks `D_j` and the coupling blocks `Upsilon_j` of the linearized system.
//!
//! Sign convention: the right-hand side is the negated, centred KKT
//! residual, so the Newton direction `delta` solving the linearized system
//! is applied as `s + alpha * delta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stacked::{col, vec_of, StackedCascade, StackedSubsystem};

/// One sub-system's slice of a primal-dual vector, ordered
/// `(xhat, uhat, p, lambda, theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDual {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub lambda: DVector<f64>,
    pub theta: DVector<f64>,
}

impl PrimalDual {
    pub fn zeros(sub: &StackedSubsystem) -> Self {
        Self {
            x: DVector::zeros(sub.nx()),
            u: DVector::zeros(sub.nu_dim()),
            p: DVector::zeros(sub.nx()),
            lambda: DVector::zeros(sub.nrows_ineq()),
            theta: DVector::zeros(sub.nrows_ineq()),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.u.len() + self.p.len() + self.lambda.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, sub: &StackedSubsystem) -> bool {
        self.x.len() == sub.nx()
            && self.u.len() == sub.nu_dim()
            && self.p.len() == sub.nx()
            && self.lambda.len() == sub.nrows_ineq()
            && self.theta.len() == sub.nrows_ineq()
    }

    /// Concatenation `[x; u; p; lambda; theta]`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        let mut off = 0;
        for part in [&self.x, &self.u, &self.p, &self.lambda, &self.theta] {
            v.rows_mut(off, part.len()).copy_from(part);
            off += part.len();
        }
        v
    }

    pub fn from_flat(sub: &StackedSubsystem, v: &[f64]) -> Self {
        let sizes = [sub.nx(), sub.nu_dim(), sub.nx(), sub.nrows_ineq(), sub.nrows_ineq()];
        let mut off = 0;
        let mut take = |k: usize| {
            let out = DVector::from_column_slice(&v[off..off + k]);
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

    pub fn axpy(&mut self, alpha: f64, d: &PrimalDual) {
        self.x.axpy(alpha, &d.x, 1.0);
        self.u.axpy(alpha, &d.u, 1.0);
        self.p.axpy(alpha, &d.p, 1.0);
        self.lambda.axpy(alpha, &d.lambda, 1.0);
        self.theta.axpy(alpha, &d.theta, 1.0);
    }

    pub fn amax(&self) -> f64 {
        [&self.x, &self.u, &self.p, &self.lambda, &self.theta]
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}

/// Primal-dual iterate of the whole cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub parts: Vec<PrimalDual>,
}

/// Newton direction, one block per sub-system.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonStep {
    pub parts: Vec<PrimalDual>,
}

impl NewtonStep {
    pub fn amax(&self) -> f64 {
        self.parts.iter().map(PrimalDual::amax).fold(0.0, f64::max)
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let v: Vec<f64> = self.parts.iter().flat_map(|p| p.to_flat().data.as_vec().clone()).collect();
        DVector::from_vec(v)
    }
}

impl Iterate {
    /// `lambda >= 0` and `theta > 0` componentwise.
    pub fn is_interior(&self) -> bool {
        self.parts
            .iter()
            .all(|s| s.lambda.iter().all(|v| *v >= 0.0) && s.theta.iter().all(|v| *v > 0.0))
    }

    pub fn check_dims(&self, cascade: &StackedCascade) -> Result<()> {
        if self.parts.len() != cascade.len() {
            return Err(Error::dim(format!(
                "iterate has {} blocks for {} sub-systems",
                self.parts.len(),
                cascade.len()
            )));
        }
        for (j, (s, sub)) in self.parts.iter().zip(&cascade.subs).enumerate() {
            if !s.matches(sub) {
                return Err(Error::dim(format!("iterate block {} has wrong dimensions", j + 1)));
            }
        }
        Ok(())
    }

    pub fn apply_step(&mut self, alpha: f64, step: &NewtonStep) {
        for (s, d) in self.parts.iter_mut().zip(&step.parts) {
            s.axpy(alpha, d);
        }
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let v: Vec<f64> = self.parts.iter().flat_map(|p| p.to_flat().data.as_vec().clone()).collect();
        DVector::from_vec(v)
    }
}

/// Residuals of the five KKT equation groups for one sub-system.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualParts {
    pub stat_x: DVector<f64>,
    pub stat_u: DVector<f64>,
    pub dynamics: DVector<f64>,
    pub ineq: DVector<f64>,
    pub comp: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual {
    pub parts: Vec<ResidualParts>,
}

/// Infinity norms of the residual groups, maximised over sub-systems.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualNorms {
    pub stat: f64,
    pub dynamics: f64,
    pub ineq: f64,
    pub comp: f64,
}

impl ResidualNorms {
    /// Largest of the equality-type residuals (stationarity, dynamics, slack).
    pub fn primal_dual(&self) -> f64 {
        self.stat.max(self.dynamics).max(self.ineq)
    }
}

impl ResidualParts {
    pub fn norms(&self) -> ResidualNorms {
        ResidualNorms {
            stat: self.stat_x.amax().max(self.stat_u.amax()),
            dynamics: self.dynamics.amax(),
            ineq: self.ineq.amax(),
            comp: self.comp.amax(),
        }
    }
}

impl ResidualNorms {
    /// Componentwise maximum.
    pub fn max(self, o: Self) -> Self {
        Self {
            stat: self.stat.max(o.stat),
            dynamics: self.dynamics.max(o.dynamics),
            ineq: self.ineq.max(o.ineq),
            comp: self.comp.max(o.comp),
        }
    }
}

impl KktResidual {
    /// Flattened residual in the block order of the Newton system.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = Vec::new();
        for r in &self.parts {
            for g in [&r.stat_x, &r.stat_u, &r.dynamics, &r.ineq, &r.comp] {
                v.extend_from_slice(g.as_slice());
            }
        }
        DVector::from_vec(v)
    }

    pub fn norms(&self) -> ResidualNorms {
        self.parts.iter().fold(ResidualNorms::default(), |acc, r| acc.max(r.norms()))
    }
}

/// Local part of the stationarity, dynamics, slack and complementarity
/// residuals of sub-system `j`, i.e. everything except the two neighbour
/// terms `Ehat_{j+1}^T p_{j+1}` and `Ehat_j xhat_{j-1}`.
pub fn local_residual(sub: &StackedSubsystem, s: &PrimalDual) -> ResidualParts {
    let x = col(&s.x);
    let u = col(&s.u);
    let p = col(&s.p);
    let lam = col(&s.lambda);
    let stat_x = sub.qhat_mul(&x) + sub.shat_t_mul(&u) - sub.ahat_t_mul(&p) + sub.mhat_t_mul(&lam);
    let stat_u = sub.shat_mul(&x) + sub.rhat_mul(&u) + sub.bhat_t_mul(&p) + sub.lhat_t_mul(&lam);
    let mut dynamics = -sub.ahat_mul(&x) + sub.bhat_mul(&u);
    sub.inject_xi(&mut dynamics, 1.0);
    let ineq = vec_of(sub.mhat_mul(&x) + sub.lhat_mul(&u)) - &sub.c + &s.theta;
    ResidualParts {
        stat_x: vec_of(stat_x),
        stat_u: vec_of(stat_u),
        dynamics: vec_of(dynamics),
        ineq,
        comp: s.lambda.component_mul(&s.theta),
    }
}

/// Evaluates the KKT conditions at `iterate`, with `xhat_0 = 0` and
/// `Ehat_{N+1} = 0` at the cascade boundaries.
pub fn kkt_residual(cascade: &StackedCascade, iterate: &Iterate) -> Result<KktResidual> {
    iterate.check_dims(cascade)?;
    let nsub = cascade.len();
    let mut parts = Vec::with_capacity(nsub);
    for j in 0..nsub {
        let sub = &cascade.subs[j];
        let s = &iterate.parts[j];
        let mut r = local_residual(sub, s);
        if j + 1 < nsub {
            let down = &cascade.subs[j + 1];
            r.stat_x += vec_of(down.ehat_t_mul(&col(&iterate.parts[j + 1].p)));
        }
        if j > 0 {
            r.dynamics += vec_of(sub.ehat_mul(&col(&iterate.parts[j - 1].x)));
        }
        parts.push(r);
    }
    Ok(KktResidual { parts })
}

/// Average complementarity product over all stacked inequality rows.
pub fn duality_gap(iterate: &Iterate) -> f64 {
    let rows: usize = iterate.parts.iter().map(|s| s.lambda.len()).sum();
    if rows == 0 {
        return 0.0;
    }
    let total: f64 = iterate.parts.iter().map(|s| s.lambda.dot(&s.theta)).sum();
    total / rows as f64
}

/// Matrix-free product of `D_j` (evaluated at the multipliers `lambda`,
/// `theta` of the current iterate) with a five-block vector.
pub fn apply_d(sub: &StackedSubsystem, lambda: &DVector<f64>, theta: &DVector<f64>, v: &PrimalDual) -> Result<PrimalDual> {
    if !v.matches(sub) || lambda.len() != sub.nrows_ineq() || theta.len() != sub.nrows_ineq() {
        return Err(Error::dim(format!("apply_D on sub-system {}", sub.index)));
    }
    let x = col(&v.x);
    let u = col(&v.u);
    let p = col(&v.p);
    let lam = col(&v.lambda);
    let r1 = sub.qhat_mul(&x) + sub.shat_t_mul(&u) - sub.ahat_t_mul(&p) + sub.mhat_t_mul(&lam);
    let r2 = sub.shat_mul(&x) + sub.rhat_mul(&u) + sub.bhat_t_mul(&p) + sub.lhat_t_mul(&lam);
    let r3 = -sub.ahat_mul(&x) + sub.bhat_mul(&u);
    let r4 = vec_of(sub.mhat_mul(&x) + sub.lhat_mul(&u)) + &v.theta;
    let r5 = theta.component_mul(&v.lambda) + lambda.component_mul(&v.theta);
    Ok(PrimalDual {
        x: vec_of(r1),
        u: vec_of(r2),
        p: vec_of(r3),
        lambda: r4,
        theta: r5,
    })
}

/// `Upsilon_j v_{j-1}`: the only nonzero block is `-Ehat_j` mapping the
/// upstream state block into sub-system `j`'s dynamics rows.
pub fn apply_upsilon(sub: &StackedSubsystem, v_up: &PrimalDual) -> Result<PrimalDual> {
    if v_up.x.len() != sub.nx_up() {
        return Err(Error::dim(format!("apply_Upsilon on sub-system {}", sub.index)));
    }
    let mut out = PrimalDual::zeros(sub);
    out.p = -vec_of(sub.ehat_mul(&col(&v_up.x)));
    Ok(out)
}

/// `Upsilon_j^T v_j`, a vector shaped like the upstream sub-system's block;
/// only its state block (`-Ehat_j^T p_j`) is nonzero.
pub fn apply_upsilon_t(sub: &StackedSubsystem, up: &StackedSubsystem, v: &PrimalDual) -> Result<PrimalDual> {
    if v.p.len() != sub.nx() || up.nx() != sub.nx_up() {
        return Err(Error::dim(format!("apply_Upsilon^T on sub-system {}", sub.index)));
    }
    let mut out = PrimalDual::zeros(up);
    out.x = -vec_of(sub.ehat_t_mul(&col(&v.p)));
    Ok(out)
}

/// Centring term `-Theta lambda - Lambda theta + Lambda Theta 1 - sigma_bar mu 1`.
pub fn centring_term(lambda: &DVector<f64>, theta: &DVector<f64>, sigma_bar: f64, mu: f64) -> DVector<f64> {
    let prod = lambda.component_mul(theta);
    -theta.component_mul(lambda) - lambda.component_mul(theta) + &prod - DVector::from_element(prod.len(), sigma_bar * mu)
}

/// Newton right-hand side for every sub-system,
///
/// `rho_j = -( -Upsilon_j s_{j-1} + D_j s_j - Upsilon_{j+1}^T s_{j+1}
///             + [0; 0; Hhat xi; -chat; sigma_j] )`,
///
/// which equals the negated KKT residual with the complementarity rows
/// shifted by `sigma_bar * mu`.
pub fn newton_rhs(cascade: &StackedCascade, iterate: &Iterate, sigma_bar: f64) -> Result<Vec<PrimalDual>> {
    iterate.check_dims(cascade)?;
    let mu = duality_gap(iterate);
    let nsub = cascade.len();
    let mut out = Vec::with_capacity(nsub);
    for j in 0..nsub {
        let sub = &cascade.subs[j];
        let s = &iterate.parts[j];
        let mut acc = apply_d(sub, &s.lambda, &s.theta, s)?;
        if j > 0 {
            let ups = apply_upsilon(sub, &iterate.parts[j - 1])?;
            acc.axpy(-1.0, &ups);
        }
        if j + 1 < nsub {
            let down = &cascade.subs[j + 1];
            let ups_t = apply_upsilon_t(down, sub, &iterate.parts[j + 1])?;
            acc.axpy(-1.0, &ups_t);
        }
        let mut pcol = col(&acc.p);
        sub.inject_xi(&mut pcol, 1.0);
        acc.p = vec_of(pcol);
        acc.lambda -= &sub.c;
        acc.theta += centring_term(&s.lambda, &s.theta, sigma_bar, mu);
        acc.x.neg_mut();
        acc.u.neg_mut();
        acc.p.neg_mut();
        acc.lambda.neg_mut();
        acc.theta.neg_mut();
        out.push(acc);
    }
    Ok(out)
}

/// Largest `a` with `v + a * dv >= 0`, or infinity when `dv >= 0`.
pub(crate) fn max_feasible_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Fraction-to-boundary step length shared by all sub-systems.
pub fn step_length(iterate: &Iterate, step: &NewtonStep, tau: f64) -> f64 {
    let mut ratio = f64::INFINITY;
    for (s, d) in iterate.parts.iter().zip(&step.parts) {
        ratio = ratio.min(max_feasible_step(&s.lambda, &d.lambda));
        ratio = ratio.min(max_feasible_step(&s.theta, &d.theta));
    }
    step_from_ratio(ratio, tau)
}

pub(crate) fn step_from_ratio(ratio: f64, tau: f64) -> f64 {
    if ratio.is_finite() {
        (tau * ratio).min(1.0)
    } else {
        1.0
    }
}

/// Dense assembly of `D_j` used by the oracle code and tests.
pub fn dense_d(sub: &StackedSubsystem, lambda: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let (nx, nu, ni) = (sub.nx(), sub.nu_dim(), sub.nrows_ineq());
    let dim = sub.block_dim();
    let mut d = DMatrix::zeros(dim, dim);
    let (ox, ou, op, ol, ot) = (0, nx, nx + nu, 2 * nx + nu, 2 * nx + nu + ni);
    let a = sub.dense_ahat();
    let b = sub.dense_bhat();
    let s = sub.dense_shat();
    let m = sub.dense_mhat();
    let l = sub.dense_lhat();
    d.view_mut((ox, ox), (nx, nx)).copy_from(&sub.dense_qhat());
    d.view_mut((ox, ou), (nx, nu)).copy_from(&s.transpose());
    d.view_mut((ox, op), (nx, nx)).copy_from(&(-a.transpose()));
    d.view_mut((ox, ol), (nx, ni)).copy_from(&m.transpose());
    d.view_mut((ou, ox), (nu, nx)).copy_from(&s);
    d.view_mut((ou, ou), (nu, nu)).copy_from(&sub.dense_rhat());
    d.view_mut((ou, op), (nu, nx)).copy_from(&b.transpose());
    d.view_mut((ou, ol), (nu, ni)).copy_from(&l.transpose());
    d.view_mut((op, ox), (nx, nx)).copy_from(&(-a));
    d.view_mut((op, ou), (nx, nu)).copy_from(&b);
    d.view_mut((ol, ox), (ni, nx)).copy_from(&m);
    d.view_mut((ol, ou), (ni, nu)).copy_from(&l);
    for i in 0..ni {
        d[(ol + i, ot + i)] = 1.0;
        d[(ot + i, ol + i)] = theta[i];
        d[(ot + i, ot + i)] = lambda[i];
    }
    d
}

/// Dense `Upsilon_j` (rows: sub-system `j`'s block, columns: `j-1`'s block).
pub fn dense_upsilon(sub: &StackedSubsystem, up_dim: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(sub.block_dim(), up_dim);
    let op = sub.nx() + sub.nu_dim();
    let e = sub.dense_ehat();
    u.view_mut((op, 0), e.shape()).copy_from(&(-e));
    u
}
