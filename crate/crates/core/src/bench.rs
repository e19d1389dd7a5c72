//! Scaling benchmarks: 16-iteration solves over a range of cascade lengths
//! or horizons, CSV output with `#` metadata lines, log-log slope fits and
//! gnuplot script emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{solve_stacked, LinearSolver, SolveReport, SolverOptions};
use crate::problem::irrigation_like;
use crate::stacked::StackedCascade;

/// Newton iterations per benchmark run.
pub const BENCH_ITERATIONS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchCase {
    Structured,
    Dense,
}

impl BenchCase {
    pub fn name(self) -> &'static str {
        match self {
            BenchCase::Structured => "structured",
            BenchCase::Dense => "dense",
        }
    }

    fn solver(self) -> LinearSolver {
        match self {
            BenchCase::Structured => LinearSolver::Structured,
            BenchCase::Dense => LinearSolver::DenseOracle,
        }
    }
}

impl std::fmt::Display for BenchCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BenchCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(BenchCase::Structured),
            "dense" => Ok(BenchCase::Dense),
            other => Err(Error::InvalidArgument(format!("unknown benchmark case '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    T,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::T => "T",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub t: usize,
    pub case: BenchCase,
    /// Whole-solve wall time for the fixed iteration count, minimum over repeats.
    pub wall_s: f64,
    /// Time spent factoring and solving the Newton systems in the same run.
    pub linear_s: f64,
    pub iterations: usize,
    pub final_mu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchMeta {
    pub machine: String,
    pub threads: usize,
    pub timestamp: u64,
    pub repeats: usize,
    pub axis: Axis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub meta: BenchMeta,
    pub rows: Vec<BenchRow>,
    /// Runs that were not performed, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub cases: Vec<BenchCase>,
    pub repeats: usize,
    pub dense_cap: usize,
    pub options: SolverOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cases: vec![BenchCase::Structured, BenchCase::Dense],
            repeats: 3,
            dense_cap: crate::cascade::DEFAULT_DENSE_CAP,
            options: SolverOptions::default(),
        }
    }
}

fn machine_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!("{cpu} ({}-{})", std::env::consts::ARCH, std::env::consts::OS)
}

fn point_options(case: BenchCase, config: &BenchConfig) -> SolverOptions {
    SolverOptions {
        fixed_iterations: Some(BENCH_ITERATIONS),
        linear_solver: case.solver(),
        dense_cap: config.dense_cap,
        ..config.options.clone()
    }
}

fn timed_solve(cascade: &StackedCascade, options: &SolverOptions) -> Result<(f64, SolveReport)> {
    let t0 = Instant::now();
    let rep = solve_stacked(cascade, options)?;
    Ok((t0.elapsed().as_secs_f64(), rep))
}

fn row_from(cascade: &StackedCascade, case: BenchCase, wall_s: f64, rep: &SolveReport) -> BenchRow {
    BenchRow {
        n: cascade.len(),
        t: cascade.horizon,
        case,
        wall_s,
        linear_s: rep.iterations.iter().map(|r| r.t_factor_s + r.t_solve_s).sum(),
        iterations: rep.newton_steps(),
        final_mu: rep.final_mu,
    }
}

/// Times one configuration, keeping the fastest of `config.repeats` solves.
pub fn run_point(cascade: &StackedCascade, case: BenchCase, config: &BenchConfig) -> Result<BenchRow> {
    let options = point_options(case, config);
    let mut best: Option<(f64, SolveReport)> = None;
    for _ in 0..config.repeats.max(1) {
        let (wall, rep) = timed_solve(cascade, &options)?;
        if best.as_ref().is_none_or(|(w, _)| wall < *w) {
            best = Some((wall, rep));
        }
    }
    let (wall_s, rep) = best.expect("at least one repeat");
    Ok(row_from(cascade, case, wall_s, &rep))
}

// Repeats go round-robin over the whole sweep rather than back to back, so a
// slow stretch on a shared machine is spread over all sizes instead of
// inflating one of them.
fn run_sweep(points: &[(usize, usize)], axis: Axis, config: &BenchConfig) -> Result<BenchResult> {
    faer::set_global_parallelism(faer::Par::Seq);
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for &(n, t) in points {
        let cascade = StackedCascade::new(&irrigation_like(n, t)?);
        for &case in &config.cases {
            let dim = cascade.total_block_dim();
            if case == BenchCase::Dense && dim > config.dense_cap {
                skipped.push(format!("dense N={n} T={t}: dimension {dim} exceeds cap {}", config.dense_cap));
                continue;
            }
            jobs.push((cascade.clone(), case, point_options(case, config), None::<BenchRow>));
        }
    }
    for _ in 0..config.repeats.max(1) {
        for (cascade, case, options, best) in &mut jobs {
            let (wall, rep) = timed_solve(cascade, options)?;
            if best.as_ref().is_none_or(|b| wall < b.wall_s) {
                *best = Some(row_from(cascade, *case, wall, &rep));
            }
        }
    }
    Ok(BenchResult {
        meta: BenchMeta {
            machine: machine_description(),
            threads: 1,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            repeats: config.repeats.max(1),
            axis,
        },
        rows: jobs.into_iter().map(|j| j.3.expect("at least one repeat")).collect(),
        skipped,
    })
}

/// Sweep over the cascade length at fixed horizon.
pub fn bench_n(horizon: usize, n_list: &[usize], config: &BenchConfig) -> Result<BenchResult> {
    let pts: Vec<_> = n_list.iter().map(|&n| (n, horizon)).collect();
    run_sweep(&pts, Axis::N, config)
}

/// Sweep over the horizon at fixed cascade length.
pub fn bench_t(num_subsystems: usize, t_list: &[usize], config: &BenchConfig) -> Result<BenchResult> {
    let pts: Vec<_> = t_list.iter().map(|&t| (num_subsystems, t)).collect();
    run_sweep(&pts, Axis::T, config)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two points".into()));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs positive data".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

/// Which points of a sweep enter a slope fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitRange {
    All,
    /// Points at or above the log-scale midpoint `sqrt(x_min * x_max)`.
    UpperHalf,
}

impl BenchResult {
    fn x_of(&self, r: &BenchRow) -> usize {
        match self.meta.axis {
            Axis::N => r.n,
            Axis::T => r.t,
        }
    }

    pub fn cases(&self) -> Vec<BenchCase> {
        let mut c: Vec<_> = self.rows.iter().map(|r| r.case).collect();
        c.sort();
        c.dedup();
        c
    }

    /// `(x, wall_s)` points for one case, sorted by `x`.
    pub fn points(&self, case: BenchCase) -> Vec<(f64, f64)> {
        let mut p: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.case == case)
            .map(|r| (self.x_of(r) as f64, r.wall_s))
            .collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        p
    }

    pub fn slope(&self, case: BenchCase, range: FitRange) -> Result<f64> {
        let p = self.points(case);
        let used = match range {
            FitRange::All => &p[..],
            FitRange::UpperHalf => match (p.first(), p.last()) {
                (Some(lo), Some(hi)) => {
                    let mid = (lo.0 * hi.0).sqrt() * (1.0 - 1e-12);
                    let start = p.partition_point(|q| q.0 < mid);
                    &p[start..]
                }
                _ => &p[..],
            },
        };
        loglog_slope(used)
    }

    pub fn slopes(&self, range: FitRange) -> BTreeMap<BenchCase, f64> {
        self.cases()
            .into_iter()
            .filter_map(|c| self.slope(c, range).ok().map(|s| (c, s)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ioe = |e: std::io::Error| Error::Parse(format!("benchmark csv: {e}"));
        writeln!(w, "# machine: {}", self.meta.machine).map_err(ioe)?;
        writeln!(w, "# threads: {}", self.meta.threads).map_err(ioe)?;
        writeln!(w, "# timestamp: {}", self.meta.timestamp).map_err(ioe)?;
        writeln!(w, "# repeats: {}", self.meta.repeats).map_err(ioe)?;
        writeln!(w, "# varying: {}", self.meta.axis.label()).map_err(ioe)?;
        for s in &self.skipped {
            writeln!(w, "# skipped: {s}").map_err(ioe)?;
        }
        let err = |e: csv::Error| Error::Parse(format!("benchmark csv: {e}"));
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["N", "T", "case", "wall_s", "linear_s", "iterations", "final_mu"])
            .map_err(err)?;
        for r in &self.rows {
            wr.write_record([
                r.n.to_string(),
                r.t.to_string(),
                r.case.name().to_string(),
                r.wall_s.to_string(),
                r.linear_s.to_string(),
                r.iterations.to_string(),
                r.final_mu.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(ioe)
    }

    /// Parses a file written by [`BenchResult::write_csv`]. The varied
    /// column is taken from the metadata, or inferred from the data.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = BenchMeta {
            machine: String::new(),
            threads: 1,
            timestamp: 0,
            repeats: 1,
            axis: Axis::N,
        };
        let mut axis_given = false;
        let mut skipped = Vec::new();
        let mut body = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::Parse(format!("benchmark csv: {e}")))?;
            if let Some(m) = line.strip_prefix('#') {
                let m = m.trim();
                let (key, val) = m.split_once(':').map_or((m, ""), |(k, v)| (k.trim(), v.trim()));
                let num = |v: &str| v.parse::<u64>().map_err(|_| Error::Parse(format!("benchmark csv: bad metadata '{m}'")));
                match key {
                    "machine" => meta.machine = val.to_string(),
                    "threads" => meta.threads = num(val)? as usize,
                    "timestamp" => meta.timestamp = num(val)?,
                    "repeats" => meta.repeats = num(val)? as usize,
                    "varying" => {
                        meta.axis = match val {
                            "N" => Axis::N,
                            "T" => Axis::T,
                            _ => return Err(Error::Parse(format!("benchmark csv: bad axis '{val}'"))),
                        };
                        axis_given = true;
                    }
                    "skipped" => skipped.push(val.to_string()),
                    _ => {}
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let headers = rd.headers().map_err(|e| Error::Parse(format!("benchmark csv: {e}")))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("benchmark csv: missing column '{name}'")))
        };
        let idx = [col("N")?, col("T")?, col("case")?, col("wall_s")?, col("linear_s")?, col("iterations")?, col("final_mu")?];
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("benchmark csv: {e}")))?;
            let field = |k: usize| rec.get(idx[k]).unwrap_or("");
            let bad = |name: &str| Error::Parse(format!("benchmark csv: row {}: bad '{name}'", line + 1));
            rows.push(BenchRow {
                n: field(0).parse().map_err(|_| bad("N"))?,
                t: field(1).parse().map_err(|_| bad("T"))?,
                case: field(2).parse().map_err(|_| bad("case"))?,
                wall_s: field(3).parse().map_err(|_| bad("wall_s"))?,
                linear_s: field(4).parse().map_err(|_| bad("linear_s"))?,
                iterations: field(5).parse().map_err(|_| bad("iterations"))?,
                final_mu: field(6).parse().map_err(|_| bad("final_mu"))?,
            });
        }
        if rows.is_empty() {
            return Err(Error::Parse("benchmark csv: no data rows".into()));
        }
        if !axis_given {
            let distinct = |f: fn(&BenchRow) -> usize| {
                let mut v: Vec<_> = rows.iter().map(f).collect();
                v.sort();
                v.dedup();
                v.len()
            };
            meta.axis = if distinct(|r| r.t) > distinct(|r| r.n) { Axis::T } else { Axis::N };
        }
        Ok(Self { meta, rows, skipped })
    }

    /// Gnuplot script drawing wall time against the varied parameter on
    /// log-log axes, one curve per case. Data are inlined.
    pub fn plot_script(&self, output: &str) -> String {
        let axis = self.meta.axis.label();
        let fixed = match self.meta.axis {
            Axis::N => self.rows.first().map(|r| format!("T = {}", r.t)),
            Axis::T => self.rows.first().map(|r| format!("N = {}", r.n)),
        }
        .unwrap_or_default();
        let mut s = String::new();
        let _ = writeln!(s, "set terminal pngcairo size 800,600");
        let _ = writeln!(s, "set output '{output}'");
        let _ = writeln!(s, "set logscale xy");
        let _ = writeln!(s, "set xlabel '{axis}'");
        let _ = writeln!(s, "set ylabel 'time for {BENCH_ITERATIONS} Newton iterations [s]'");
        let _ = writeln!(s, "set title 'scaling in {axis} ({fixed})'");
        let _ = writeln!(s, "set key top left");
        let _ = writeln!(s, "set grid");
        let cases = self.cases();
        for c in &cases {
            let _ = writeln!(s, "${} << EOD", c.name());
            for (x, y) in self.points(*c) {
                let _ = writeln!(s, "{x} {y}");
            }
            let _ = writeln!(s, "EOD");
        }
        let plots: Vec<String> = cases
            .iter()
            .map(|c| format!("${0} using 1:2 with linespoints title '{0}'", c.name()))
            .collect();
        let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        s
    }
}
