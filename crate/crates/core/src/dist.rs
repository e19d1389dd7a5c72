//! In-process simulation of the solver running on a chain of agents, one per
//! sub-system, that only talk to their immediate neighbours.
//!
//! Agent `j` owns the stacked data of sub-system `j` (including `Ehat_j`,
//! the coupling from its upstream neighbour), its slice `s_j` of the iterate
//! and its factor of `Sigma_j`. It also keeps a copy of the upstream state
//! `xhat_{j-1}`, updated from the down-sweep messages. Each Newton iteration
//! runs six sequential chain passes:
//!
//! 1. up-sweep: `K_{j-1}` and `-Ehat_j^T (Sigma_j^-1 rho~_j)_p` go to `j-1`;
//! 2. down-sweep: `dxhat_j` goes to `j+1`;
//! 3. step-length reduction up the chain and broadcast of `alpha` down;
//! 4. gap/residual reduction up the chain and broadcast of `mu` down.
//!
//! The gap reduction also carries `Ehat_j^T p_j`, the only term of agent
//! `j-1`'s residual that depends on downstream data.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ipm::{initialize, iterate_once, IterationRecord, SolveReport, SolveStatus, SolverOptions};
use crate::kkt::{local_residual, max_feasible_step, step_from_ratio, Iterate, PrimalDual, ResidualNorms};
use crate::problem::CascadeProblem;
use crate::sigma::{build_sigma_factor, CouplingMatrix, SigmaFactor};
use crate::stacked::{col, vec_of, StackedCascade, StackedSubsystem};

/// Bytes charged per transmitted scalar.
pub const BYTES_PER_SCALAR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    UpCoupling,
    UpVector,
    DownVector,
    ReduceGap,
    ReduceAlpha,
    Broadcast,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::UpCoupling,
        MessageKind::UpVector,
        MessageKind::DownVector,
        MessageKind::ReduceGap,
        MessageKind::ReduceAlpha,
        MessageKind::Broadcast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::UpCoupling => "UpCoupling",
            MessageKind::UpVector => "UpVector",
            MessageKind::DownVector => "DownVector",
            MessageKind::ReduceGap => "ReduceGap",
            MessageKind::ReduceAlpha => "ReduceAlpha",
            MessageKind::Broadcast => "Broadcast",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Partial reduction of the gap and residual norms over agents `j..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GapPartial {
    pub lambda_theta: f64,
    pub rows: usize,
    pub norms: ResidualNorms,
    pub data_norm: f64,
    /// `Ehat_j^T p_j` for the receiving agent's stationarity residual.
    pub coupling_term: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    UpCoupling(CouplingMatrix),
    UpVector(DVector<f64>),
    DownVector(DVector<f64>),
    ReduceGap(GapPartial),
    ReduceAlpha(f64),
    /// `mu` and the stop flag.
    BroadcastGap(f64, bool),
    BroadcastAlpha(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::UpCoupling(_) => MessageKind::UpCoupling,
            Payload::UpVector(_) => MessageKind::UpVector,
            Payload::DownVector(_) => MessageKind::DownVector,
            Payload::ReduceGap(_) => MessageKind::ReduceGap,
            Payload::ReduceAlpha(_) => MessageKind::ReduceAlpha,
            Payload::BroadcastGap(..) | Payload::BroadcastAlpha(_) => MessageKind::Broadcast,
        }
    }

    /// Scalars on the wire; the coupling uses symmetric packed storage.
    pub fn scalars(&self) -> usize {
        match &self.payload {
            Payload::UpCoupling(k) => k.packed_len(),
            Payload::UpVector(v) | Payload::DownVector(v) => v.len(),
            Payload::ReduceGap(g) => 7 + g.coupling_term.len(),
            Payload::ReduceAlpha(_) | Payload::BroadcastAlpha(_) => 1,
            Payload::BroadcastGap(..) => 2,
        }
    }

    pub fn byte_size(&self) -> usize {
        BYTES_PER_SCALAR * self.scalars()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub bytes: usize,
}

/// Per-iteration message counts and byte totals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageLog {
    /// `(iteration, kind) -> (count, bytes)`.
    pub counts: BTreeMap<(usize, MessageKind), (usize, usize)>,
    /// Sequential communication rounds per iteration.
    pub rounds: BTreeMap<usize, usize>,
    /// Individual messages, kept when detailed logging is requested.
    pub entries: Vec<LogEntry>,
}

impl MessageLog {
    pub fn count(&self, iteration: usize, kind: MessageKind) -> usize {
        self.counts.get(&(iteration, kind)).map_or(0, |c| c.0)
    }

    pub fn total_count(&self, kind: MessageKind) -> usize {
        self.counts.iter().filter(|((_, k), _)| *k == kind).map(|(_, c)| c.0).sum()
    }

    pub fn iterations(&self) -> usize {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    pub fn total_rounds(&self) -> usize {
        self.rounds.values().sum()
    }

    /// Writes the detailed log as CSV (`iteration,from,to,kind,bytes`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Parse(format!("message csv: {e}"));
        wr.write_record(["iteration", "from", "to", "kind", "bytes"]).map_err(csv_err)?;
        for e in &self.entries {
            wr.write_record([
                e.iteration.to_string(),
                e.from.to_string(),
                e.to.to_string(),
                e.kind.name().to_string(),
                e.bytes.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Parse(format!("message csv: {e}")))?;
        Ok(())
    }
}

/// Aggregate communication statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessageStats {
    pub links: usize,
    pub newton_iterations: usize,
    /// Bytes per link per Newton iteration, maximised over links.
    pub max_link_bytes_per_iteration: f64,
    /// Bytes per link per Newton iteration, averaged over links.
    pub mean_link_bytes_per_iteration: f64,
    pub max_message_bytes: usize,
    pub rounds_per_iteration: f64,
    pub bytes_by_kind: BTreeMap<MessageKind, usize>,
}

/// Summarises a detailed log. Iteration 0 (start-up traffic) is excluded
/// from the per-iteration figures.
pub fn message_stats(log: &MessageLog, num_agents: usize) -> MessageStats {
    let links = num_agents.saturating_sub(1);
    let iters = log.iterations();
    let mut per_link = vec![0usize; links];
    let mut stats = MessageStats {
        links,
        newton_iterations: iters,
        ..Default::default()
    };
    for e in &log.entries {
        *stats.bytes_by_kind.entry(e.kind).or_default() += e.bytes;
        stats.max_message_bytes = stats.max_message_bytes.max(e.bytes);
        if e.iteration > 0 {
            per_link[e.from.min(e.to) - 1] += e.bytes;
        }
    }
    if links > 0 && iters > 0 {
        let it = iters as f64;
        stats.max_link_bytes_per_iteration = per_link.iter().copied().max().unwrap_or(0) as f64 / it;
        stats.mean_link_bytes_per_iteration = per_link.iter().sum::<usize>() as f64 / (links as f64 * it);
        let r: usize = log.rounds.iter().filter(|(k, _)| **k > 0).map(|(_, r)| r).sum();
        stats.rounds_per_iteration = r as f64 / it;
    }
    stats
}

/// Simulated linear network with per-agent inboxes. Agents are 1-based.
#[derive(Debug)]
pub struct Network {
    agents: usize,
    inbox: Vec<VecDeque<Message>>,
    log: MessageLog,
    detail: bool,
    iteration: usize,
}

impl Network {
    pub fn new(agents: usize, detail: bool) -> Self {
        Self {
            agents,
            inbox: vec![VecDeque::new(); agents + 1],
            log: MessageLog::default(),
            detail,
            iteration: 0,
        }
    }

    pub fn set_iteration(&mut self, k: usize) {
        self.iteration = k;
        self.log.rounds.entry(k).or_insert(0);
    }

    pub fn round(&mut self) {
        *self.log.rounds.entry(self.iteration).or_insert(0) += 1;
    }

    /// Delivers a message; only chain neighbours may communicate.
    pub fn send(&mut self, msg: Message) -> Result<()> {
        let (from, to) = (msg.from, msg.to);
        if from == 0 || to == 0 || from > self.agents || to > self.agents || from.abs_diff(to) != 1 {
            return Err(Error::NonNeighborMessage { from, to });
        }
        let kind = msg.kind();
        let bytes = msg.byte_size();
        let c = self.log.counts.entry((self.iteration, kind)).or_insert((0, 0));
        c.0 += 1;
        c.1 += bytes;
        if self.detail {
            self.log.entries.push(LogEntry {
                iteration: self.iteration,
                from,
                to,
                kind,
                bytes,
            });
        }
        self.inbox[to].push_back(msg);
        Ok(())
    }

    /// Takes the oldest message of `kind` addressed to `to`.
    pub fn receive(&mut self, to: usize, kind: MessageKind) -> Option<Message> {
        let q = self.inbox.get_mut(to)?;
        let pos = q.iter().position(|m| m.kind() == kind)?;
        q.remove(pos)
    }

    pub fn pending(&self) -> usize {
        self.inbox.iter().map(VecDeque::len).sum()
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }
}

/// One agent of the chain.
#[derive(Debug)]
pub struct Agent {
    pub j: usize,
    sub: Arc<StackedSubsystem>,
    state: PrimalDual,
    x_up: Option<DVector<f64>>,
    coupling_term: Option<DVector<f64>>,
    factor: Option<SigmaFactor>,
    rho_tilde: Option<PrimalDual>,
    step: Option<PrimalDual>,
    dx_up: Option<DVector<f64>>,
}

impl Agent {
    fn new(sub: Arc<StackedSubsystem>) -> Self {
        Self {
            j: sub.index,
            state: PrimalDual::zeros(&sub),
            sub,
            x_up: None,
            coupling_term: None,
            factor: None,
            rho_tilde: None,
            step: None,
            dx_up: None,
        }
    }

    /// Indices of the sub-systems whose model data this agent holds.
    pub fn model_indices(&self) -> Vec<usize> {
        vec![self.sub.index]
    }

    pub fn state(&self) -> &PrimalDual {
        &self.state
    }

    fn ensure_dims(&self, v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
        if v.len() != len {
            return Err(Error::dim(format!("agent {}: {what} has length {}, expected {len}", self.j, v.len())));
        }
        Ok(())
    }

    fn initialize(&mut self, x_up: Option<DVector<f64>>) -> Result<()> {
        let sub = &self.sub;
        let mut rhs = col(&DVector::zeros(sub.nx()));
        sub.inject_xi(&mut rhs, 1.0);
        if let Some(up) = &x_up {
            self.ensure_dims(up, sub.nx_up(), "upstream state")?;
            rhs += sub.ehat_mul(&col(up));
        }
        let x = vec_of(sub.ahat_solve(&rhs));
        let slack = &sub.c - vec_of(sub.mhat_mul(&col(&x)));
        self.state.theta = slack.map(|v| v.max(1.0));
        self.state.lambda.fill(1.0);
        self.state.x = x;
        self.x_up = x_up;
        Ok(())
    }

    /// Local residual including both neighbour terms.
    fn residual(&self) -> crate::kkt::ResidualParts {
        let mut r = local_residual(&self.sub, &self.state);
        if let Some(ct) = &self.coupling_term {
            r.stat_x += ct;
        }
        if let Some(up) = &self.x_up {
            r.dynamics += vec_of(self.sub.ehat_mul(&col(up)));
        }
        r
    }

    fn gap_partial(&self, downstream: Option<GapPartial>) -> GapPartial {
        let r = self.residual();
        let mut g = GapPartial {
            lambda_theta: self.state.lambda.dot(&self.state.theta),
            rows: self.state.lambda.len(),
            norms: r.norms(),
            data_norm: self.sub.c.iter().chain(self.sub.xi.iter()).fold(0.0, |a, v| a.max(v.abs())),
            coupling_term: vec_of(self.sub.ehat_t_mul(&col(&self.state.p))),
        };
        if let Some(d) = downstream {
            g.lambda_theta = d.lambda_theta + g.lambda_theta;
            g.rows += d.rows;
            g.norms = g.norms.max(d.norms);
            g.data_norm = g.data_norm.max(d.data_norm);
        }
        g
    }

    /// `rho_j`: negated residual with the complementarity rows shifted.
    fn newton_rhs(&self, sigma_bar: f64, mu: f64) -> PrimalDual {
        let r = self.residual();
        let shift = DVector::from_element(r.comp.len(), sigma_bar * mu);
        PrimalDual {
            x: -r.stat_x,
            u: -r.stat_u,
            p: -r.dynamics,
            lambda: -r.ineq,
            theta: shift - r.comp,
        }
    }
}

/// Result of a distributed run with optional per-iteration snapshots.
#[derive(Debug)]
pub struct DistributedRun {
    pub report: SolveReport,
    pub log: MessageLog,
    /// Iterate after initialization and after every Newton step.
    pub iterates: Vec<Iterate>,
}

/// Runs the distributed simulation and returns the gathered solution and
/// message log.
pub fn run_distributed(
    problem: &CascadeProblem,
    options: &SolverOptions,
    log_detail: bool,
) -> Result<(SolveReport, MessageLog)> {
    let run = run_distributed_traced(problem, options, log_detail, false)?;
    Ok((run.report, run.log))
}

fn expect<T>(v: Option<T>, j: usize, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("agent {j} is missing {what}")))
}

pub fn run_distributed_traced(
    problem: &CascadeProblem,
    options: &SolverOptions,
    log_detail: bool,
    keep_iterates: bool,
) -> Result<DistributedRun> {
    problem.validate().into_result()?;
    options.check()?;
    let cascade = StackedCascade::new(problem);
    let n = cascade.len();
    let mut agents: Vec<Agent> = cascade.subs.iter().cloned().map(Agent::new).collect();
    let mut net = Network::new(n, log_detail);
    let gather = |agents: &[Agent]| Iterate {
        parts: agents.iter().map(|a| a.state.clone()).collect(),
    };

    // Iteration 0: start-up simulation down the chain, then the first gap
    // reduction.
    net.set_iteration(0);
    for idx in 0..n {
        let x_up = match idx {
            0 => None,
            _ => match expect(net.receive(idx + 1, MessageKind::DownVector), idx + 1, "upstream state")?.payload {
                Payload::DownVector(v) => Some(v),
                _ => unreachable!(),
            },
        };
        agents[idx].initialize(x_up)?;
        if idx + 1 < n {
            net.send(Message {
                from: idx + 1,
                to: idx + 2,
                payload: Payload::DownVector(agents[idx].state.x.clone()),
            })?;
            net.round();
        }
    }
    let limit = options.fixed_iterations.unwrap_or(options.max_iterations);
    let (mut mu, mut stop, mut norms, mut data_norm) = gap_pass(&mut agents, &mut net, options, 0, limit)?;
    let mut records = vec![IterationRecord {
        k: 0,
        mu,
        alpha: 0.0,
        r_stat: norms.stat,
        r_dyn: norms.dynamics,
        r_comp: norms.comp,
        r_ineq: norms.ineq,
        t_factor_s: 0.0,
        t_solve_s: 0.0,
    }];
    let mut iterates = Vec::new();
    if keep_iterates {
        iterates.push(gather(&agents));
    }

    let mut k = 0;
    let mut failure = None;
    while !stop {
        k += 1;
        net.set_iteration(k);
        let mut t_factor = 0.0;
        let mut t_solve = 0.0;

        // Up-sweep: factor, backward solve, coupling for the upstream agent.
        let mut sweep_failed = None;
        for idx in (0..n).rev() {
            let j = idx + 1;
            let (coupling, upvec) = if idx + 1 < n {
                let k_msg = expect(net.receive(j, MessageKind::UpCoupling), j, "coupling")?;
                let v_msg = expect(net.receive(j, MessageKind::UpVector), j, "up vector")?;
                match (k_msg.payload, v_msg.payload) {
                    (Payload::UpCoupling(kc), Payload::UpVector(v)) => (Some(kc), Some(v)),
                    _ => unreachable!(),
                }
            } else {
                (None, None)
            };
            let agent = &mut agents[idx];
            let mut rho = agent.newton_rhs(options.sigma_bar, mu);
            if let Some(v) = upvec {
                agent.ensure_dims(&v, agent.sub.nx(), "up vector")?;
                rho.x += v;
            }
            let t0 = Instant::now();
            let factor = match build_sigma_factor(agent.sub.clone(), &agent.state.theta, &agent.state.lambda, coupling.as_ref()) {
                Ok(f) => f,
                Err(e) => {
                    sweep_failed = Some(e);
                    break;
                }
            };
            let upstream = if idx > 0 {
                let kc = factor.coupling_for_upstream()?.expect("agent above the first has a coupling");
                t_factor += t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let w = factor.solve_vector(&rho)?;
                let v = -vec_of(agent.sub.ehat_t_mul(&col(&w.p)));
                t_solve += t1.elapsed().as_secs_f64();
                Some((kc, v))
            } else {
                t_factor += t0.elapsed().as_secs_f64();
                None
            };
            agent.factor = Some(factor);
            agent.rho_tilde = Some(rho);
            if let Some((kc, v)) = upstream {
                net.send(Message {
                    from: j,
                    to: j - 1,
                    payload: Payload::UpCoupling(kc),
                })?;
                net.send(Message {
                    from: j,
                    to: j - 1,
                    payload: Payload::UpVector(v),
                })?;
                net.round();
            }
        }
        if let Some(e) = sweep_failed {
            match e {
                Error::Factorization { .. } => {
                    failure = Some(e.to_string());
                    break;
                }
                other => return Err(other),
            }
        }

        // Down-sweep.
        let t0 = Instant::now();
        for idx in 0..n {
            let j = idx + 1;
            let agent = &mut agents[idx];
            let mut r = expect(agent.rho_tilde.take(), j, "backward right-hand side")?;
            if idx > 0 {
                let msg = expect(net.receive(j, MessageKind::DownVector), j, "upstream step")?;
                let Payload::DownVector(dx) = msg.payload else { unreachable!() };
                agent.ensure_dims(&dx, agent.sub.nx_up(), "upstream step")?;
                r.p -= vec_of(agent.sub.ehat_mul(&col(&dx)));
                agent.dx_up = Some(dx);
            }
            let step = expect(agent.factor.as_ref(), j, "factor")?.solve_vector(&r)?;
            if idx + 1 < n {
                net.send(Message {
                    from: j,
                    to: j + 1,
                    payload: Payload::DownVector(step.x.clone()),
                })?;
                net.round();
            }
            agent.step = Some(step);
        }
        t_solve += t0.elapsed().as_secs_f64();

        // Step length: min-reduction up, broadcast down.
        let mut ratio = f64::INFINITY;
        for idx in (0..n).rev() {
            let j = idx + 1;
            if idx + 1 < n {
                let msg = expect(net.receive(j, MessageKind::ReduceAlpha), j, "step-length partial")?;
                let Payload::ReduceAlpha(r) = msg.payload else { unreachable!() };
                ratio = r;
            }
            let agent = &agents[idx];
            let d = expect(agent.step.as_ref(), j, "step")?;
            let local = max_feasible_step(&agent.state.lambda, &d.lambda).min(max_feasible_step(&agent.state.theta, &d.theta));
            ratio = ratio.min(local);
            if idx > 0 {
                net.send(Message {
                    from: j,
                    to: j - 1,
                    payload: Payload::ReduceAlpha(ratio),
                })?;
                net.round();
            }
        }
        let alpha = step_from_ratio(ratio, options.tau);
        broadcast(&mut net, n, Payload::BroadcastAlpha(alpha))?;
        for agent in agents.iter_mut() {
            let d = agent.step.take().expect("step computed in the down-sweep");
            agent.state.axpy(alpha, &d);
            if let (Some(x_up), Some(dx)) = (agent.x_up.as_mut(), agent.dx_up.take()) {
                x_up.axpy(alpha, &dx, 1.0);
            }
            agent.factor = None;
        }

        (mu, stop, norms, data_norm) = gap_pass(&mut agents, &mut net, options, k, limit)?;
        records.push(IterationRecord {
            k,
            mu,
            alpha,
            r_stat: norms.stat,
            r_dyn: norms.dynamics,
            r_comp: norms.comp,
            r_ineq: norms.ineq,
            t_factor_s: t_factor,
            t_solve_s: t_solve,
        });
        if keep_iterates {
            iterates.push(gather(&agents));
        }
    }
    debug_assert_eq!(net.pending(), 0);

    let converged = mu <= options.tol_gap && norms.primal_dual() <= options.tol_residual * (1.0 + data_norm);
    let status = if failure.is_some() {
        SolveStatus::FactorizationFailure
    } else if converged {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    let report = SolveReport::from_iterate(&cascade, gather(&agents), records, status, failure)?;
    Ok(DistributedRun {
        report,
        log: net.into_log(),
        iterates,
    })
}

fn broadcast(net: &mut Network, n: usize, payload: Payload) -> Result<()> {
    for j in 1..n {
        if j > 1 {
            net.receive(j, MessageKind::Broadcast);
        }
        net.send(Message {
            from: j,
            to: j + 1,
            payload: payload.clone(),
        })?;
        net.round();
    }
    if n > 1 {
        net.receive(n, MessageKind::Broadcast);
    }
    Ok(())
}

/// Gap and residual reduction up the chain, then broadcast of `mu` and the
/// stop decision taken by agent 1.
fn gap_pass(
    agents: &mut [Agent],
    net: &mut Network,
    options: &SolverOptions,
    k: usize,
    limit: usize,
) -> Result<(f64, bool, ResidualNorms, f64)> {
    let n = agents.len();
    let mut partial: Option<GapPartial> = None;
    for idx in (0..n).rev() {
        let j = idx + 1;
        if idx + 1 < n {
            let msg = expect(net.receive(j, MessageKind::ReduceGap), j, "gap partial")?;
            let Payload::ReduceGap(g) = msg.payload else { unreachable!() };
            agents[idx].ensure_dims(&g.coupling_term, agents[idx].sub.nx(), "coupling term")?;
            agents[idx].coupling_term = Some(g.coupling_term.clone());
            partial = Some(g);
        }
        let g = agents[idx].gap_partial(partial.take());
        if idx > 0 {
            net.send(Message {
                from: j,
                to: j - 1,
                payload: Payload::ReduceGap(g),
            })?;
            net.round();
        } else {
            partial = Some(g);
        }
    }
    let g = partial.expect("agent 1 holds the full reduction");
    let mu = if g.rows == 0 { 0.0 } else { g.lambda_theta / g.rows as f64 };
    let converged = mu <= options.tol_gap && g.norms.primal_dual() <= options.tol_residual * (1.0 + g.data_norm);
    let stop = k >= limit || (options.fixed_iterations.is_none() && converged);
    broadcast(net, n, Payload::BroadcastGap(mu, stop))?;
    Ok((mu, stop, g.norms, g.data_norm))
}

/// Distributed run checked against the centralized solver.
#[derive(Debug)]
pub struct Equivalence {
    pub run: DistributedRun,
    /// Max-abs iterate difference after initialization and after each step.
    pub per_iteration: Vec<f64>,
}

impl Equivalence {
    pub fn max_abs_diff(&self) -> f64 {
        self.per_iteration.iter().copied().fold(0.0, f64::max)
    }
}

/// Runs the simulation with iterate snapshots and replays the same number of
/// steps with the centralized solver.
pub fn check_equivalence(problem: &CascadeProblem, options: &SolverOptions) -> Result<Equivalence> {
    let run = run_distributed_traced(problem, options, true, true)?;
    let cascade = StackedCascade::new(problem);
    let mut it = initialize(&cascade);
    let diff = |a: &Iterate, b: &Iterate| (a.to_flat() - b.to_flat()).amax();
    let mut per_iteration = Vec::with_capacity(run.iterates.len());
    for (k, dist_it) in run.iterates.iter().enumerate() {
        if k > 0 {
            it = iterate_once(&cascade, &it, options, k)?.0;
        }
        per_iteration.push(diff(&it, dist_it));
    }
    Ok(Equivalence { run, per_iteration })
}
