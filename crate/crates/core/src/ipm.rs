//! Primal-dual interior-point driver with a fixed centring parameter and a
//! fraction-to-boundary step shared by all sub-systems.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cascade::{dense_assemble, dense_lu_solve, factor_cascade, split_flat, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::kkt::{duality_gap, kkt_residual, newton_rhs, step_length, Iterate, NewtonStep, PrimalDual, ResidualNorms};
use crate::problem::CascadeProblem;
use crate::stacked::{col, objective, vec_of, StackedCascade, Trajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    Structured,
    DenseOracle,
}

impl std::str::FromStr for LinearSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Self::Structured),
            "dense" | "dense_oracle" | "dense-oracle" => Ok(Self::DenseOracle),
            other => Err(Error::InvalidArgument(format!("unknown linear solver '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub sigma_bar: f64,
    pub tau: f64,
    pub max_iterations: usize,
    /// Run exactly this many iterations, ignoring the tolerances.
    pub fixed_iterations: Option<usize>,
    pub tol_gap: f64,
    pub tol_residual: f64,
    pub linear_solver: LinearSolver,
    pub dense_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            sigma_bar: 0.1,
            tau: 0.995,
            max_iterations: 50,
            fixed_iterations: None,
            tol_gap: 1e-6,
            tol_residual: 1e-8,
            linear_solver: LinearSolver::Structured,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.sigma_bar > 0.0 && self.sigma_bar < 1.0) {
            return bad("sigma_bar must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.tol_gap >= 0.0 && self.tol_residual >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        Ok(())
    }
}

/// One row of the iteration log. `k = 0` describes the initial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub mu: f64,
    pub alpha: f64,
    pub r_stat: f64,
    pub r_dyn: f64,
    pub r_comp: f64,
    pub r_ineq: f64,
    pub t_factor_s: f64,
    pub t_solve_s: f64,
}

impl IterationRecord {
    fn at(k: usize, iterate: &Iterate, norms: ResidualNorms, alpha: f64, t_factor_s: f64, t_solve_s: f64) -> Self {
        Self {
            k,
            mu: duality_gap(iterate),
            alpha,
            r_stat: norms.stat,
            r_dyn: norms.dynamics,
            r_comp: norms.comp,
            r_ineq: norms.ineq,
            t_factor_s,
            t_solve_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    FactorizationFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub p: DVector<f64>,
    pub lambda: DVector<f64>,
    pub theta: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub trajectory: Trajectory,
    pub multipliers: Vec<Multipliers>,
    pub iterations: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub final_mu: f64,
    pub objective: f64,
    pub iterate: Iterate,
    /// Diagnostic for `FactorizationFailure`.
    pub failure: Option<String>,
}

impl SolveReport {
    pub fn from_iterate(
        cascade: &StackedCascade,
        iterate: Iterate,
        iterations: Vec<IterationRecord>,
        status: SolveStatus,
        failure: Option<String>,
    ) -> Result<Self> {
        let trajectory = Trajectory {
            xhat: iterate.parts.iter().map(|s| s.x.clone()).collect(),
            uhat: iterate.parts.iter().map(|s| s.u.clone()).collect(),
        };
        let multipliers = iterate
            .parts
            .iter()
            .map(|s| Multipliers {
                p: s.p.clone(),
                lambda: s.lambda.clone(),
                theta: s.theta.clone(),
            })
            .collect();
        Ok(Self {
            objective: objective(cascade, &trajectory)?,
            final_mu: duality_gap(&iterate),
            trajectory,
            multipliers,
            iterations,
            status,
            iterate,
            failure,
        })
    }

    /// Number of Newton steps taken.
    pub fn newton_steps(&self) -> usize {
        self.iterations.iter().filter(|r| r.k > 0).count()
    }
}

/// Standard starting point: zero-input simulation, `p = 0`, `lambda = 1`,
/// `theta = max(chat - Mhat xhat, 1)`.
pub fn initialize(cascade: &StackedCascade) -> Iterate {
    let mut parts: Vec<PrimalDual> = Vec::with_capacity(cascade.len());
    for (j, sub) in cascade.subs.iter().enumerate() {
        let mut rhs = col(&DVector::zeros(sub.nx()));
        sub.inject_xi(&mut rhs, 1.0);
        if j > 0 {
            rhs += sub.ehat_mul(&col(&parts[j - 1].x));
        }
        let x = vec_of(sub.ahat_solve(&rhs));
        let slack = &sub.c - vec_of(sub.mhat_mul(&col(&x)));
        let mut s = PrimalDual::zeros(sub);
        s.theta = slack.map(|v| v.max(1.0));
        s.lambda.fill(1.0);
        s.x = x;
        parts.push(s);
    }
    Iterate { parts }
}

/// Timings of one Newton direction computation.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepTimes {
    pub factor_s: f64,
    pub solve_s: f64,
}

/// Newton direction at `iterate` with the requested linear solver.
pub fn newton_direction(
    cascade: &StackedCascade,
    iterate: &Iterate,
    options: &SolverOptions,
) -> Result<(NewtonStep, StepTimes)> {
    let rhs = newton_rhs(cascade, iterate, options.sigma_bar)?;
    match options.linear_solver {
        LinearSolver::Structured => {
            let t0 = Instant::now();
            let fac = factor_cascade(cascade, iterate)?;
            let t1 = Instant::now();
            let step = fac.solve_newton(&rhs)?;
            Ok((
                step,
                StepTimes {
                    factor_s: (t1 - t0).as_secs_f64(),
                    solve_s: t1.elapsed().as_secs_f64(),
                },
            ))
        }
        LinearSolver::DenseOracle => {
            let t0 = Instant::now();
            let m = dense_assemble(cascade, iterate, options.dense_cap)?;
            let t1 = Instant::now();
            let flat: Vec<f64> = rhs.iter().flat_map(|r| r.to_flat().data.as_vec().clone()).collect();
            let x = dense_lu_solve(&m, &DVector::from_vec(flat))?;
            Ok((
                split_flat(cascade, &x),
                StepTimes {
                    factor_s: (t1 - t0).as_secs_f64(),
                    solve_s: t1.elapsed().as_secs_f64(),
                },
            ))
        }
    }
}

/// One interior-point iteration: direction, step length, update.
pub fn iterate_once(
    cascade: &StackedCascade,
    iterate: &Iterate,
    options: &SolverOptions,
    k: usize,
) -> Result<(Iterate, IterationRecord)> {
    let (step, times) = newton_direction(cascade, iterate, options)?;
    let alpha = step_length(iterate, &step, options.tau);
    let mut next = iterate.clone();
    next.apply_step(alpha, &step);
    let norms = kkt_residual(cascade, &next)?.norms();
    let rec = IterationRecord::at(k, &next, norms, alpha, times.factor_s, times.solve_s);
    Ok((next, rec))
}

fn converged(cascade: &StackedCascade, iterate: &Iterate, norms: &ResidualNorms, options: &SolverOptions) -> bool {
    let tol = options.tol_residual * (1.0 + cascade.data_norm());
    duality_gap(iterate) <= options.tol_gap && norms.primal_dual() <= tol
}

/// Validates `problem` and runs the interior-point loop.
pub fn solve(problem: &CascadeProblem, options: &SolverOptions) -> Result<SolveReport> {
    problem.validate().into_result()?;
    solve_stacked(&StackedCascade::new(problem), options)
}

/// Interior-point loop on an already stacked problem.
pub fn solve_stacked(cascade: &StackedCascade, options: &SolverOptions) -> Result<SolveReport> {
    options.check()?;
    let mut iterate = initialize(cascade);
    let norms = kkt_residual(cascade, &iterate)?.norms();
    let mut records = vec![IterationRecord::at(0, &iterate, norms, 0.0, 0.0, 0.0)];
    let mut last_norms = norms;
    let limit = options.fixed_iterations.unwrap_or(options.max_iterations);
    for k in 1..=limit {
        if options.fixed_iterations.is_none() && converged(cascade, &iterate, &last_norms, options) {
            break;
        }
        match iterate_once(cascade, &iterate, options, k) {
            Ok((next, rec)) => {
                iterate = next;
                last_norms = kkt_residual(cascade, &iterate)?.norms();
                records.push(rec);
            }
            Err(e @ (Error::Factorization { .. } | Error::SingularMatrix)) => {
                return SolveReport::from_iterate(
                    cascade,
                    iterate,
                    records,
                    SolveStatus::FactorizationFailure,
                    Some(e.to_string()),
                );
            }
            Err(e) => return Err(e),
        }
    }
    let status = if converged(cascade, &iterate, &last_norms, options) {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    SolveReport::from_iterate(cascade, iterate, records, status, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{irrigation_like, random_cascade, Dims};
    use crate::stacked::{dynamics_residual, inequality_residual};

    #[test]
    fn initial_point_is_interior_and_dynamically_feasible() {
        let p = random_cascade(7, 3, 4, Dims::new(2, 1, 3)).unwrap();
        let c = StackedCascade::new(&p);
        let it = initialize(&c);
        assert!(it.is_interior());
        let r = kkt_residual(&c, &it).unwrap().norms();
        assert!(r.dynamics < 1e-12);
        assert!(it.parts.iter().all(|s| s.lambda.iter().all(|v| *v == 1.0)));
    }

    #[test]
    fn converges_on_random_instance() {
        let p = random_cascade(3, 3, 4, Dims::new(2, 1, 3)).unwrap();
        let rep = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged, "{:?}", rep.iterations.last());
        let c = StackedCascade::new(&p);
        for (j, sub) in c.subs.iter().enumerate() {
            let up = (j > 0).then(|| &rep.trajectory.xhat[j - 1]);
            let d = dynamics_residual(sub, &rep.trajectory.xhat[j], up, &rep.trajectory.uhat[j]).unwrap();
            assert!(d.amax() < 1e-8 * (1.0 + rep.trajectory.xhat[j].amax()));
            let g = inequality_residual(sub, &rep.trajectory.xhat[j], &rep.trajectory.uhat[j]).unwrap();
            assert!(g.max() < 1e-6);
        }
    }

    #[test]
    fn dense_and_structured_agree() {
        let p = random_cascade(12, 2, 3, Dims::new(2, 1, 2)).unwrap();
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let opts = SolverOptions {
            linear_solver: LinearSolver::DenseOracle,
            ..SolverOptions::default()
        };
        let b = solve(&p, &opts).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()));
    }

    #[test]
    fn fixed_iterations_equal_repeated_steps() {
        let p = irrigation_like(3, 4).unwrap();
        let c = StackedCascade::new(&p);
        let opts = SolverOptions {
            fixed_iterations: Some(5),
            ..SolverOptions::default()
        };
        let rep = solve_stacked(&c, &opts).unwrap();
        assert_eq!(rep.newton_steps(), 5);
        let mut it = initialize(&c);
        for k in 1..=5 {
            let (next, rec) = iterate_once(&c, &it, &opts, k).unwrap();
            assert_eq!(rec.alpha, rep.iterations[k].alpha);
            it = next;
        }
        assert_eq!(it, rep.iterate);
    }

    #[test]
    fn irrigation_gap_after_sixteen_steps() {
        let p = irrigation_like(10, 5).unwrap();
        let opts = SolverOptions {
            fixed_iterations: Some(16),
            ..SolverOptions::default()
        };
        let rep = solve(&p, &opts).unwrap();
        assert!(rep.final_mu < 1e-3, "mu = {}", rep.final_mu);
        assert!(rep.iterations[1].mu < rep.iterations[0].mu);
    }

    #[test]
    fn rejects_bad_options() {
        let p = irrigation_like(1, 1).unwrap();
        for opts in [
            SolverOptions {
                sigma_bar: 1.0,
                ..SolverOptions::default()
            },
            SolverOptions {
                tau: 0.0,
                ..SolverOptions::default()
            },
        ] {
            assert!(matches!(solve(&p, &opts), Err(Error::InvalidArgument(_))));
        }
        assert!("bogus".parse::<LinearSolver>().is_err());
        assert_eq!("dense".parse::<LinearSolver>().unwrap(), LinearSolver::DenseOracle);
    }
}
