//! Reference computations written directly from the per-stage problem data.
//! None of them go through the stacked operators or the structured solver.

#![allow(dead_code)]

use cascade_qp::ipm::{initialize, iterate_once, SolverOptions};
use cascade_qp::cascade::factor_cascade;
use cascade_qp::kkt::{kkt_residual, Iterate, PrimalDual};
use cascade_qp::problem::{random_cascade, CascadeProblem, Dims};
use cascade_qp::stacked::{objective, StackedCascade, Trajectory};
use nalgebra::{DMatrix, DVector};

/// Small random instance whose shape is derived from `i`.
pub fn small_instance(i: u64, max_n: usize, max_t: usize, max_dim: usize) -> CascadeProblem {
    let k = i as usize;
    let nsub = 1 + k % max_n;
    let horizon = 1 + (k * 7 + 3) % max_t;
    let dims = Dims::new(1 + k % max_dim, 1 + (k / 3) % max_dim, 1 + (k / 2 + 1) % max_dim);
    random_cascade(1000 + i, nsub, horizon, dims).unwrap()
}

/// Iterate after `k` interior-point steps from the standard start.
pub fn iterate_after(cascade: &StackedCascade, k: usize) -> Iterate {
    let opts = SolverOptions::default();
    let mut it = initialize(cascade);
    for step in 1..=k {
        it = iterate_once(cascade, &it, &opts, step).unwrap().0;
    }
    it
}

pub fn unflatten(cascade: &StackedCascade, v: &DVector<f64>) -> Iterate {
    let mut off = 0;
    let parts = cascade
        .subs
        .iter()
        .map(|sub| {
            let len = sub.block_dim();
            let p = PrimalDual::from_flat(sub, &v.as_slice()[off..off + len]);
            off += len;
            p
        })
        .collect();
    Iterate { parts }
}

fn residual_at(cascade: &StackedCascade, v: &DVector<f64>) -> DVector<f64> {
    kkt_residual(cascade, &unflatten(cascade, v)).unwrap().to_flat()
}

/// Jacobian of the KKT residual map. The map is affine apart from the
/// bilinear complementarity rows, so a central difference with unit step is
/// exact up to rounding.
pub fn jacobian(cascade: &StackedCascade, it: &Iterate) -> DMatrix<f64> {
    let s = it.to_flat();
    let n = s.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut plus = s.clone();
        let mut minus = s.clone();
        plus[k] += 1.0;
        minus[k] -= 1.0;
        let col = (residual_at(cascade, &plus) - residual_at(cascade, &minus)) * 0.5;
        jac.set_column(k, &col);
    }
    jac
}

/// Newton step from a dense LU of the Jacobian: `J d = -F + sigma mu e_comp`.
pub fn dense_newton_step(cascade: &StackedCascade, it: &Iterate, sigma_bar: f64) -> DVector<f64> {
    let jac = jacobian(cascade, it);
    let mut rhs = -kkt_residual(cascade, it).unwrap().to_flat();
    let rows: usize = it.parts.iter().map(|p| p.lambda.len()).sum();
    let gap: f64 = it.parts.iter().map(|p| p.lambda.dot(&p.theta)).sum();
    let mu = gap / rows as f64;
    let mut off = 0;
    for (sub, p) in cascade.subs.iter().zip(&it.parts) {
        let comp = off + sub.block_dim() - p.theta.len();
        for i in 0..p.theta.len() {
            rhs[comp + i] += sigma_bar * mu;
        }
        off += sub.block_dim();
    }
    jac.lu().solve(&rhs).expect("Jacobian is nonsingular")
}

/// Per-stage states of every sub-system for stacked inputs `u[j]`.
pub fn simulate(problem: &CascadeProblem, u: &[DVector<f64>]) -> Vec<Vec<DVector<f64>>> {
    let horizon = problem.horizon;
    let mut out: Vec<Vec<DVector<f64>>> = Vec::new();
    for (j, sub) in problem.subsystems.iter().enumerate() {
        let mut xs = vec![sub.xi.clone()];
        for t in 0..horizon {
            let st = &sub.stages[t];
            let ut = u[j].rows(t * sub.m, sub.m);
            let mut next = &st.a * &xs[t] + &st.b * ut;
            if let Some(e) = &st.e {
                next += e * &out[j - 1][t];
            }
            xs.push(next);
        }
        out.push(xs);
    }
    out
}

/// Objective summed stage by stage.
pub fn stage_objective(problem: &CascadeProblem, traj: &Trajectory) -> f64 {
    let horizon = problem.horizon;
    let mut total = 0.0;
    for (j, sub) in problem.subsystems.iter().enumerate() {
        let x = |t: usize| traj.xhat[j].rows(t * sub.n, sub.n).into_owned();
        for (t, st) in sub.stages.iter().enumerate() {
            let xt = x(t);
            let ut = traj.uhat[j].rows(t * sub.m, sub.m).into_owned();
            total += 0.5 * (xt.dot(&(&st.q * &xt)) + ut.dot(&(&st.r * &ut))) + ut.dot(&(&st.s * &xt));
        }
        let xt = x(horizon);
        total += 0.5 * xt.dot(&(&sub.terminal.p * &xt));
    }
    total
}

/// Input-space QP `min 0.5 U^T H U + g^T U + k0` s.t. `G U <= h`, obtained
/// by eliminating the states.
pub struct ReducedQp {
    pub h_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub k0: f64,
    pub g_mat: DMatrix<f64>,
    pub h: DVector<f64>,
    pub input_dims: Vec<usize>,
}

impl ReducedQp {
    pub fn split(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut off = 0;
        self.input_dims
            .iter()
            .map(|&d| {
                let v = u.rows(off, d).into_owned();
                off += d;
                v
            })
            .collect()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h_mat * u)) + self.g.dot(u) + self.k0
    }

    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        self.h_mat.clone().cholesky().expect("reduced Hessian is positive definite").solve(&(-&self.g))
    }

    /// Exhaustive active-set search: the KKT point of the equality QP of
    /// every candidate set that is primal and dual feasible. Returns the
    /// minimiser and its objective.
    pub fn enumerate(&self) -> (DVector<f64>, f64) {
        let nu = self.g.len();
        let rows: Vec<usize> = (0..self.h.len()).filter(|&i| self.g_mat.row(i).amax() > 0.0).collect();
        assert!(rows.len() <= 16, "too many rows to enumerate");
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << rows.len()) {
            let active: Vec<usize> = rows.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &r)| r).collect();
            if active.len() > nu {
                continue;
            }
            let k = active.len();
            let mut kkt = DMatrix::zeros(nu + k, nu + k);
            kkt.view_mut((0, 0), (nu, nu)).copy_from(&self.h_mat);
            let mut rhs = DVector::zeros(nu + k);
            rhs.rows_mut(0, nu).copy_from(&(-&self.g));
            for (a, &r) in active.iter().enumerate() {
                let row = self.g_mat.row(r);
                kkt.view_mut((nu + a, 0), (1, nu)).copy_from(&row);
                kkt.view_mut((0, nu + a), (nu, 1)).copy_from(&row.transpose());
                rhs[nu + a] = self.h[r];
            }
            let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
            if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                continue;
            }
            let u = sol.rows(0, nu).into_owned();
            let primal = (&self.g_mat * &u - &self.h).max() <= 1e-9;
            let dual = sol.rows(nu, k).iter().all(|&y| y >= -1e-9);
            if primal && dual {
                let f = self.objective(&u);
                if best.as_ref().is_none_or(|(_, b)| f < *b) {
                    best = Some((u, f));
                }
            }
        }
        best.expect("a feasible KKT point exists")
    }
}

pub fn reduced_qp(problem: &CascadeProblem) -> ReducedQp {
    let horizon = problem.horizon;
    let input_dims: Vec<usize> = problem.subsystems.iter().map(|s| s.m * horizon).collect();
    let nu: usize = input_dims.iter().sum();
    let split = |v: &DVector<f64>| {
        let mut off = 0;
        input_dims
            .iter()
            .map(|&d| {
                let p = v.rows(off, d).into_owned();
                off += d;
                p
            })
            .collect::<Vec<_>>()
    };
    let base = simulate(problem, &split(&DVector::zeros(nu)));
    // Column k of the state map is the response to the k-th unit input.
    let responses: Vec<_> = (0..nu)
        .map(|k| {
            let mut e = DVector::zeros(nu);
            e[k] = 1.0;
            simulate(problem, &split(&e))
        })
        .collect();
    let mut h_mat = DMatrix::zeros(nu, nu);
    let mut g = DVector::zeros(nu);
    let mut k0 = 0.0;
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut u_off = 0;
    for (j, sub) in problem.subsystems.iter().enumerate() {
        for t in 0..=horizon {
            let mut fx = DMatrix::zeros(sub.n, nu);
            for k in 0..nu {
                fx.set_column(k, &(&responses[k][j][t] - &base[j][t]));
            }
            let f0 = &base[j][t];
            let mut sel = DMatrix::zeros(sub.m, nu);
            if t < horizon {
                for i in 0..sub.m {
                    sel[(i, u_off + t * sub.m + i)] = 1.0;
                }
            }
            let (q, s, r, mm, l, c) = if t < horizon {
                let st = &sub.stages[t];
                (&st.q, st.s.clone(), st.r.clone(), &st.m, st.l.clone(), &st.c)
            } else {
                (
                    &sub.terminal.p,
                    DMatrix::zeros(sub.m, sub.n),
                    DMatrix::zeros(sub.m, sub.m),
                    &sub.terminal.m,
                    DMatrix::zeros(sub.nu, sub.m),
                    &sub.terminal.c,
                )
            };
            let cross = sel.transpose() * &s * &fx;
            h_mat += fx.transpose() * q * &fx + &cross + cross.transpose() + sel.transpose() * &r * &sel;
            g += fx.transpose() * (q * f0) + sel.transpose() * (&s * f0);
            k0 += 0.5 * f0.dot(&(q * f0));
            let gm = mm * &fx + &l * &sel;
            let hv = c - mm * f0;
            for i in 0..sub.nu {
                g_rows.push(gm.row(i).transpose());
                h.push(hv[i]);
            }
        }
        u_off += sub.m * horizon;
    }
    let g_mat = DMatrix::from_fn(g_rows.len(), nu, |i, k| g_rows[i][k]);
    ReducedQp {
        h_mat: (&h_mat + h_mat.transpose()) * 0.5,
        g,
        k0,
        g_mat,
        h: DVector::from_vec(h),
        input_dims,
    }
}

/// Replaces every constraint bound by `value(row)` in stage order.
pub fn set_bounds(problem: &mut CascadeProblem, bounds: &DVector<f64>) {
    let mut off = 0;
    for sub in &mut problem.subsystems {
        for st in &mut sub.stages {
            st.c.copy_from(&bounds.rows(off, sub.nu));
            off += sub.nu;
        }
        sub.terminal.c.copy_from(&bounds.rows(off, sub.nu));
        off += sub.nu;
    }
}

/// Equality-constrained QP over all states and inputs, solved from its
/// dense KKT system. Returns the stacked trajectory.
pub fn equality_kkt(problem: &CascadeProblem) -> Trajectory {
    let horizon = problem.horizon;
    let mut xoff = Vec::new();
    let mut uoff = Vec::new();
    let mut nz = 0;
    for sub in &problem.subsystems {
        xoff.push(nz);
        nz += sub.n * (horizon + 1);
        uoff.push(nz);
        nz += sub.m * horizon;
    }
    let neq: usize = problem.subsystems.iter().map(|s| s.n * (horizon + 1)).sum();
    let mut kkt = DMatrix::zeros(nz + neq, nz + neq);
    let mut rhs = DVector::zeros(nz + neq);
    let mut row = nz;
    for (j, sub) in problem.subsystems.iter().enumerate() {
        let (n, m) = (sub.n, sub.m);
        for t in 0..=horizon {
            let xi = xoff[j] + t * n;
            let q = if t < horizon { &sub.stages[t].q } else { &sub.terminal.p };
            kkt.view_mut((xi, xi), (n, n)).copy_from(q);
            if t < horizon {
                let st = &sub.stages[t];
                let ui = uoff[j] + t * m;
                kkt.view_mut((ui, ui), (m, m)).copy_from(&st.r);
                kkt.view_mut((ui, xi), (m, n)).copy_from(&st.s);
                kkt.view_mut((xi, ui), (n, m)).copy_from(&st.s.transpose());
            }
        }
        // x(0) = xi
        let put = |kkt: &mut DMatrix<f64>, r: usize, c: usize, blk: &DMatrix<f64>| {
            kkt.view_mut((r, c), blk.shape()).copy_from(blk);
            kkt.view_mut((c, r), (blk.ncols(), blk.nrows())).copy_from(&blk.transpose());
        };
        put(&mut kkt, row, xoff[j], &DMatrix::identity(n, n));
        rhs.rows_mut(row, n).copy_from(&sub.xi);
        row += n;
        for t in 0..horizon {
            let st = &sub.stages[t];
            put(&mut kkt, row, xoff[j] + (t + 1) * n, &DMatrix::identity(n, n));
            put(&mut kkt, row, xoff[j] + t * n, &(-&st.a));
            put(&mut kkt, row, uoff[j] + t * m, &(-&st.b));
            if let Some(e) = &st.e {
                let nup = problem.subsystems[j - 1].n;
                put(&mut kkt, row, xoff[j - 1] + t * nup, &(-e));
            }
            row += n;
        }
    }
    let sol = kkt.lu().solve(&rhs).expect("equality KKT is nonsingular");
    Trajectory {
        xhat: problem
            .subsystems
            .iter()
            .enumerate()
            .map(|(j, s)| sol.rows(xoff[j], s.n * (horizon + 1)).into_owned())
            .collect(),
        uhat: problem
            .subsystems
            .iter()
            .enumerate()
            .map(|(j, s)| sol.rows(uoff[j], s.m * horizon).into_owned())
            .collect(),
    }
}

/// Stacked trajectory from inputs via the per-stage simulation.
pub fn trajectory_from_inputs(problem: &CascadeProblem, u: &[DVector<f64>]) -> Trajectory {
    let xs = simulate(problem, u);
    Trajectory {
        xhat: xs
            .iter()
            .map(|v| DVector::from_iterator(v.iter().map(|x| x.len()).sum(), v.iter().flat_map(|x| x.iter().copied())))
            .collect(),
        uhat: u.to_vec(),
    }
}

pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

fn random_inputs(p: &CascadeProblem, seed: u64) -> Vec<DVector<f64>> {
    p.subsystems
        .iter()
        .enumerate()
        .map(|(j, s)| {
            DVector::from_fn(s.m * p.horizon, |i, _| ((seed as f64 + 1.0) * (i as f64 + 0.3) * (j as f64 + 1.7)).sin())
        })
        .collect()
}

/// Objective of the stacked form against a stage-by-stage sum.
pub fn objective_gap(p: &CascadeProblem, seed: u64) -> f64 {
    let cascade = StackedCascade::new(p);
    let traj = trajectory_from_inputs(p, &random_inputs(p, seed));
    let a = objective(&cascade, &traj).unwrap();
    let b = stage_objective(p, &traj);
    (a - b).abs() / b.abs().max(1.0)
}

/// Stacked dynamics and inequality residuals against per-stage formulas at
/// an arbitrary (non-dynamic) point.
pub fn residual_gap(p: &CascadeProblem, seed: u64) -> f64 {
    let cascade = StackedCascade::new(p);
    let wave = |k: usize, i: usize| ((seed as f64 + 2.0) * (k as f64 + 1.1) * (i as f64 + 0.7)).cos();
    let it = Iterate {
        parts: cascade
            .subs
            .iter()
            .enumerate()
            .map(|(j, sub)| {
                let mut s = PrimalDual::zeros(sub);
                s.x = DVector::from_fn(sub.nx(), |i, _| wave(j, i));
                s.u = DVector::from_fn(sub.nu_dim(), |i, _| wave(j + 10, i));
                s.theta = DVector::from_fn(sub.nrows_ineq(), |i, _| 1.0 + wave(j + 20, i).abs());
                s
            })
            .collect(),
    };
    let res = kkt_residual(&cascade, &it).unwrap();
    let horizon = p.horizon;
    let mut worst: f64 = 0.0;
    for (j, sub) in p.subsystems.iter().enumerate() {
        let (n, m, nu) = (sub.n, sub.m, sub.nu);
        let x = |jj: usize, t: usize| {
            let nn = p.subsystems[jj].n;
            it.parts[jj].x.rows(t * nn, nn).into_owned()
        };
        let u = |t: usize| it.parts[j].u.rows(t * m, m).into_owned();
        let dynamics = &res.parts[j].dynamics;
        // x(0) = xi and x(t+1) = A x + B u + E x_up, written as lhs - rhs = 0
        // with the sign used by the solver: rhs - lhs.
        worst = worst.max((dynamics.rows(0, n) - (&sub.xi - x(j, 0))).amax());
        for t in 0..horizon {
            let st = &sub.stages[t];
            let mut rhs = &st.a * x(j, t) + &st.b * u(t);
            if let Some(e) = &st.e {
                rhs += e * x(j - 1, t);
            }
            worst = worst.max((dynamics.rows((t + 1) * n, n) - (rhs - x(j, t + 1))).amax());
        }
        let theta = &it.parts[j].theta;
        for t in 0..=horizon {
            let g = if t < horizon {
                &sub.stages[t].m * x(j, t) + &sub.stages[t].l * u(t) - &sub.stages[t].c
            } else {
                &sub.terminal.m * x(j, t) - &sub.terminal.c
            };
            let expect = g + theta.rows(t * nu, nu);
            worst = worst.max((res.parts[j].ineq.rows(t * nu, nu) - expect).amax());
        }
    }
    // a dynamically consistent trajectory has zero dynamics residual
    let traj = trajectory_from_inputs(p, &random_inputs(p, seed));
    let consistent = Iterate {
        parts: cascade
            .subs
            .iter()
            .enumerate()
            .map(|(j, sub)| {
                let mut s = PrimalDual::zeros(sub);
                s.x = traj.xhat[j].clone();
                s.u = traj.uhat[j].clone();
                s
            })
            .collect(),
    };
    let r = kkt_residual(&cascade, &consistent).unwrap();
    worst.max(r.norms().dynamics)
}

/// `(I - Qt Zt)(I + Qt At^-1 Bhat Rt^-1 Bhat^T At^-T) - I`, max-abs, over
/// every factor of the cascade.
pub fn w_identity_gap(cascade: &StackedCascade, it: &Iterate) -> f64 {
    let fac = factor_cascade(cascade, it).unwrap();
    let mut worst: f64 = 0.0;
    for (sub, f) in cascade.subs.iter().zip(fac.factors()) {
        let nx = sub.nx();
        let id = DMatrix::<f64>::identity(nx, nx);
        let qt = f.qtilde().to_dense(nx);
        let at_inv = f.atilde().to_dense().try_inverse().unwrap();
        let rt_inv = f.rtilde_dense().try_inverse().unwrap();
        let bh = sub.dense_bhat();
        let zt = f.z_tilde(&id);
        let right = &id + &qt * &at_inv * &bh * rt_inv * bh.transpose() * at_inv.transpose();
        let prod = (&id - &qt * zt) * right;
        worst = worst.max((prod - &id).amax());
    }
    worst
}

/// Smallest eigenvalue of each coupling matrix relative to its norm.
pub fn coupling_min_eig(cascade: &StackedCascade, it: &Iterate) -> f64 {
    let fac = factor_cascade(cascade, it).unwrap();
    (0..cascade.len())
        .filter_map(|j| fac.coupling(j))
        .map(|k| symmetric_eigen_range(&k.k).0 / k.k.norm().max(1e-300))
        .fold(f64::INFINITY, f64::min)
}

/// Runs the iteration and reports whether every iterate stays strictly
/// positive with a step in (0, 1].
pub fn positivity_holds(cascade: &StackedCascade, steps: usize) -> bool {
    let opts = SolverOptions::default();
    let mut it = initialize(cascade);
    for k in 1..=steps {
        let (next, rec) = iterate_once(cascade, &it, &opts, k).unwrap();
        let positive = next.parts.iter().all(|s| s.lambda.min() > 0.0 && s.theta.min() > 0.0);
        if !positive || !(rec.alpha > 0.0 && rec.alpha <= 1.0) {
            return false;
        }
        it = next;
    }
    true
}
