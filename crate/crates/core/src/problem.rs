//! Cascade optimal-control problem instances: data types, validation and
//! deterministic instance generators.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, symmetrize};

/// Absolute tolerance for the strict positive-definiteness of `R`.
pub const TOL_PD: f64 = 1e-10;
/// Relative slack for positive semi-definiteness checks.
pub const TOL_PSD_REL: f64 = 1e-8;

/// Model, cost and constraint data of one sub-system at one stage `t < T`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Coupling from the upstream neighbour's state; `None` for the first sub-system.
    pub e: Option<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Terminal stage: cost `P`, state constraint rows `M_T x(T) <= c_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalData {
    pub p: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemModel {
    /// 1-based position in the cascade.
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub nu: usize,
    pub stages: Vec<StageData>,
    pub terminal: TerminalData,
    pub xi: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeProblem {
    pub horizon: usize,
    pub subsystems: Vec<SubsystemModel>,
}

impl CascadeProblem {
    pub fn num_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    /// Dimension of the per-sub-system Newton block, `(2n + 2nu)(T+1) + mT`.
    pub fn block_dim(&self, j: usize) -> usize {
        let s = &self.subsystems[j];
        (2 * s.n + 2 * s.nu) * (self.horizon + 1) + s.m * self.horizon
    }

    pub fn total_block_dim(&self) -> usize {
        (0..self.subsystems.len()).map(|j| self.block_dim(j)).sum()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyProblem,
    HorizonMismatch,
    IndexMismatch,
    Dimension,
    NonFinite,
    NotSymmetric,
    RNotPositiveDefinite,
    CostNotPsd,
    SchurNotPsd,
    TerminalNotPsd,
    InitialStateConstraint,
    CouplingForbidden,
    CouplingMissing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// 1-based sub-system index (0 for problem-level violations).
    pub subsystem: usize,
    /// Stage index; `Some(T)` denotes the terminal stage.
    pub stage: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidProblem {
                count: self.violations.len(),
                first: v.message.clone(),
            }),
        }
    }

    fn push(&mut self, subsystem: usize, stage: Option<usize>, kind: ViolationKind, message: String) {
        self.violations.push(Violation {
            subsystem,
            stage,
            kind,
            message,
        });
    }
}

fn psd_slack(m: &DMatrix<f64>) -> f64 {
    TOL_PSD_REL * (1.0 + m.norm())
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let tol = psd_slack(m);
    (m - m.transpose()).amax() <= tol
}

fn shape_ok(m: &DMatrix<f64>, rows: usize, cols: usize) -> bool {
    m.nrows() == rows && m.ncols() == cols
}

/// Checks every structural and definiteness invariant and reports all
/// violations found.
pub fn validate(problem: &CascadeProblem) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let horizon = problem.horizon;
    if horizon == 0 || problem.subsystems.is_empty() {
        rep.push(0, None, ViolationKind::EmptyProblem, "problem needs T >= 1 and at least one sub-system".into());
        return rep;
    }
    for (pos, sub) in problem.subsystems.iter().enumerate() {
        let j = pos + 1;
        let (n, m, nu) = (sub.n, sub.m, sub.nu);
        if sub.index != j {
            rep.push(j, None, ViolationKind::IndexMismatch, format!("sub-system at position {j} declares index {}", sub.index));
        }
        if n == 0 || m == 0 {
            rep.push(j, None, ViolationKind::Dimension, format!("n and m must be positive at j={j}"));
            continue;
        }
        if sub.stages.len() != horizon {
            rep.push(j, None, ViolationKind::HorizonMismatch, format!("sub-system {j} has {} stages, expected T={horizon}", sub.stages.len()));
            continue;
        }
        if sub.xi.len() != n {
            rep.push(j, None, ViolationKind::Dimension, format!("xi has length {} at j={j}, expected {n}", sub.xi.len()));
        }
        if sub.xi.iter().any(|v| !v.is_finite()) {
            rep.push(j, None, ViolationKind::NonFinite, format!("non-finite initial state at j={j}"));
        }
        let n_up = if pos > 0 { Some(problem.subsystems[pos - 1].n) } else { None };

        for (t, st) in sub.stages.iter().enumerate() {
            let at = format!("({j},{t})");
            let shapes = [
                ("A", shape_ok(&st.a, n, n)),
                ("B", shape_ok(&st.b, n, m)),
                ("Q", shape_ok(&st.q, n, n)),
                ("S", shape_ok(&st.s, m, n)),
                ("R", shape_ok(&st.r, m, m)),
                ("M", shape_ok(&st.m, nu, n)),
                ("L", shape_ok(&st.l, nu, m)),
                ("c", st.c.len() == nu),
            ];
            let bad: Vec<&str> = shapes.iter().filter(|(_, ok)| !ok).map(|(k, _)| *k).collect();
            if !bad.is_empty() {
                rep.push(j, Some(t), ViolationKind::Dimension, format!("wrong shape of {} at {at}", bad.join(",")));
                continue;
            }
            match (&st.e, n_up) {
                (Some(_), None) => rep.push(j, Some(t), ViolationKind::CouplingForbidden, format!("E forbidden at j=1 (stage {t})")),
                (None, Some(_)) => rep.push(j, Some(t), ViolationKind::CouplingMissing, format!("E missing at {at}")),
                (Some(e), Some(nu_up)) if !shape_ok(e, n, nu_up) => {
                    rep.push(j, Some(t), ViolationKind::Dimension, format!("E at {at} must be {n}x{nu_up}"))
                }
                _ => {}
            }
            let finite = [&st.a, &st.b, &st.q, &st.s, &st.r, &st.m, &st.l]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
                && st.c.iter().all(|v| v.is_finite())
                && st.e.as_ref().is_none_or(|e| e.iter().all(|v| v.is_finite()));
            if !finite {
                rep.push(j, Some(t), ViolationKind::NonFinite, format!("non-finite data at {at}"));
                continue;
            }
            if !is_symmetric(&st.q) || !is_symmetric(&st.r) {
                rep.push(j, Some(t), ViolationKind::NotSymmetric, format!("Q or R not symmetric at {at}"));
            }
            let r_min = min_symmetric_eigenvalue(&st.r);
            if r_min <= TOL_PD {
                rep.push(j, Some(t), ViolationKind::RNotPositiveDefinite, format!("R not positive definite at {at}"));
            }
            let mut h = DMatrix::zeros(n + m, n + m);
            h.view_mut((0, 0), (n, n)).copy_from(&st.q);
            h.view_mut((n, 0), (m, n)).copy_from(&st.s);
            h.view_mut((0, n), (n, m)).copy_from(&st.s.transpose());
            h.view_mut((n, n), (m, m)).copy_from(&st.r);
            if min_symmetric_eigenvalue(&h) < -psd_slack(&h) {
                rep.push(j, Some(t), ViolationKind::CostNotPsd, format!("[[Q, S^T], [S, R]] not positive semi-definite at {at}"));
            } else if r_min > TOL_PD {
                if let Some(rinv) = st.r.clone().try_inverse() {
                    let schur = &st.q - st.s.transpose() * rinv * &st.s;
                    if min_symmetric_eigenvalue(&schur) < -psd_slack(&schur) {
                        rep.push(j, Some(t), ViolationKind::SchurNotPsd, format!("Q - S^T R^-1 S not positive semi-definite at {at}"));
                    }
                }
            }
            if t == 0 && st.m.amax() != 0.0 {
                rep.push(j, Some(0), ViolationKind::InitialStateConstraint, format!("M at t=0 must be zero (j={j})"));
            }
        }

        let term = &sub.terminal;
        let at = format!("({j},T)");
        if !shape_ok(&term.p, n, n) || !shape_ok(&term.m, nu, n) || term.c.len() != nu {
            rep.push(j, Some(horizon), ViolationKind::Dimension, format!("wrong terminal shapes at {at}"));
            continue;
        }
        if term.p.iter().chain(term.m.iter()).chain(term.c.iter()).any(|v| !v.is_finite()) {
            rep.push(j, Some(horizon), ViolationKind::NonFinite, format!("non-finite terminal data at {at}"));
            continue;
        }
        if !is_symmetric(&term.p) {
            rep.push(j, Some(horizon), ViolationKind::NotSymmetric, format!("P not symmetric at {at}"));
        }
        if min_symmetric_eigenvalue(&term.p) < -psd_slack(&term.p) {
            rep.push(j, Some(horizon), ViolationKind::TerminalNotPsd, format!("P not positive semi-definite at {at}"));
        }
    }
    rep
}

/// Per-sub-system dimensions `(n, m, nu)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub nu: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, nu: usize) -> Self {
        Self { n, m, nu }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Deterministic random cascade. Costs are built as `G^T G + S^T R^-1 S`
/// so the stage Hessian is PSD by construction, `A` is rescaled to a
/// spectral radius of at most 1.2 and every constraint leaves the
/// zero-input trajectory a slack of at least one.
pub fn random_cascade(seed: u64, num_subsystems: usize, horizon: usize, dims: Dims) -> Result<CascadeProblem> {
    if num_subsystems == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("N and T must be at least 1".into()));
    }
    if dims.n == 0 || dims.m == 0 || dims.nu == 0 {
        return Err(Error::InvalidArgument("n, m and nu must be at least 1".into()));
    }
    let Dims { n, m, nu } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsystems = Vec::with_capacity(num_subsystems);
    for j in 1..=num_subsystems {
        let mut stages = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut a = uniform(&mut rng, n, n, 1.0);
            let target = rng.random_range(0.5..1.2);
            let rho = spectral_radius(&a);
            if rho > 1e-12 {
                a *= target / rho;
            }
            let b = uniform(&mut rng, n, m, 1.0);
            let e = (j > 1).then(|| uniform(&mut rng, n, n, 0.5));
            let w = uniform(&mut rng, m, m, 1.0);
            let mut r = w.transpose() * &w + DMatrix::identity(m, m) * (0.5 * m as f64);
            symmetrize(&mut r);
            let s = uniform(&mut rng, m, n, 0.5);
            let g = uniform(&mut rng, n, n, 1.0);
            let rinv = r.clone().try_inverse().expect("R is positive definite by construction");
            let mut q = g.transpose() * &g * 0.5 + s.transpose() * rinv * &s;
            symmetrize(&mut q);
            let mm = if t == 0 {
                DMatrix::zeros(nu, n)
            } else {
                uniform(&mut rng, nu, n, 1.0)
            };
            let l = uniform(&mut rng, nu, m, 1.0);
            stages.push(StageData {
                a,
                b,
                e,
                q,
                s,
                r,
                m: mm,
                l,
                c: DVector::zeros(nu),
            });
        }
        let g = uniform(&mut rng, n, n, 1.0);
        let mut p = g.transpose() * g;
        symmetrize(&mut p);
        let term_m = uniform(&mut rng, nu, n, 1.0);
        let xi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        subsystems.push(SubsystemModel {
            index: j,
            n,
            m,
            nu,
            stages,
            terminal: TerminalData {
                p,
                m: term_m,
                c: DVector::zeros(nu),
            },
            xi,
        });
    }

    // Constraint levels from the zero-input trajectory.
    let mut upstream: Option<Vec<DVector<f64>>> = None;
    for sub in subsystems.iter_mut() {
        let traj = zero_input_states(sub, upstream.as_deref());
        for (t, st) in sub.stages.iter_mut().enumerate() {
            let mx = &st.m * &traj[t];
            st.c = DVector::from_fn(nu, |i, _| {
                let row_norm = (st.m.row(i).norm_squared() + st.l.row(i).norm_squared()).sqrt();
                mx[i].max(0.0) + row_norm + 1.0
            });
        }
        let mx = &sub.terminal.m * &traj[horizon];
        let tm = &sub.terminal.m;
        sub.terminal.c = DVector::from_fn(nu, |i, _| mx[i].max(0.0) + tm.row(i).norm() + 1.0);
        upstream = Some(traj);
    }

    Ok(CascadeProblem {
        horizon,
        subsystems,
    })
}

fn zero_input_states(sub: &SubsystemModel, upstream: Option<&[DVector<f64>]>) -> Vec<DVector<f64>> {
    let mut xs = Vec::with_capacity(sub.stages.len() + 1);
    xs.push(sub.xi.clone());
    for (t, st) in sub.stages.iter().enumerate() {
        let mut next = &st.a * &xs[t];
        if let (Some(e), Some(up)) = (&st.e, upstream) {
            next += e * &up[t];
        }
        xs.push(next);
    }
    xs
}

/// Synthetic irrigation-channel cascade with four states, one input and six
/// constraint rows per pool.
///
/// Each pool has a water-level deviation `h`, a transport-delayed inflow `d`,
/// and a PI controller (integrator `z`, flow command `q`) tracking the
/// water-level reference `r`, which is the decision input:
///
/// ```text
/// h+ = 0.97 h + a_j d + e_j q_{j-1}
/// d+ = q
/// z+ = z + (r - h)
/// q+ = 0.5 q + kp (r - h) + ki z
/// ```
///
/// Box constraints bound `h`, `q` and `r`. Parameter values are
/// illustrative; they vary smoothly along the channel and involve no
/// randomness. Initial offsets are kept small enough that every pool can
/// stay inside its level bound for any channel length.
pub fn irrigation_like(num_subsystems: usize, horizon: usize) -> Result<CascadeProblem> {
    if num_subsystems == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("N and T must be at least 1".into()));
    }
    let (n, m, nu) = (4, 1, 6);
    let (kp, ki) = (0.3, 0.05);
    let mut subsystems = Vec::with_capacity(num_subsystems);
    for j in 1..=num_subsystems {
        let jf = j as f64;
        let phi = 1.0 + 0.15 * (0.7 * jf).sin();
        let gain = 0.5 * phi;
        let coupling = 0.2 * (1.0 + 0.1 * (1.3 * jf).cos());
        let h_max = 0.15 * (1.0 + 0.1 * (0.9 * jf).sin());
        let q_max = 0.5 * (1.0 + 0.1 * (0.5 * jf).cos());
        let r_max = 0.2;

        let a = DMatrix::from_row_slice(
            n,
            n,
            &[
                0.97, gain, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                -1.0, 0.0, 1.0, 0.0, //
                -kp, 0.0, ki, 0.5,
            ],
        );
        let b = DMatrix::from_column_slice(n, m, &[0.0, 0.0, 1.0, kp]);
        let e = (j > 1).then(|| {
            let mut e = DMatrix::zeros(n, n);
            e[(0, 3)] = coupling;
            e
        });
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[10.0 * phi, 0.1, 0.1, 1.0]));
        let r = DMatrix::from_element(1, 1, 1.0);
        let s = DMatrix::zeros(m, n);
        let mut state_rows = DMatrix::zeros(nu, n);
        state_rows[(0, 0)] = 1.0;
        state_rows[(1, 0)] = -1.0;
        state_rows[(2, 3)] = 1.0;
        state_rows[(3, 3)] = -1.0;
        let mut input_rows = DMatrix::zeros(nu, m);
        input_rows[(4, 0)] = 1.0;
        input_rows[(5, 0)] = -1.0;
        let c = DVector::from_row_slice(&[h_max, h_max, q_max, q_max, r_max, r_max]);

        let stages = (0..horizon)
            .map(|t| StageData {
                a: a.clone(),
                b: b.clone(),
                e: e.clone(),
                q: q.clone(),
                s: s.clone(),
                r: r.clone(),
                m: if t == 0 { DMatrix::zeros(nu, n) } else { state_rows.clone() },
                l: input_rows.clone(),
                c: c.clone(),
            })
            .collect();
        let xi = DVector::from_row_slice(&[0.05 * (0.8 * jf).cos(), 0.0, 0.0, 0.04 * (0.6 * jf).sin()]);
        subsystems.push(SubsystemModel {
            index: j,
            n,
            m,
            nu,
            stages,
            terminal: TerminalData {
                p: &q * 5.0,
                m: state_rows,
                c,
            },
            xi,
        });
    }
    Ok(CascadeProblem {
        horizon,
        subsystems,
    })
}
