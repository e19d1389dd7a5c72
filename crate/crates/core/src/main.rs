use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cascade_qp::bench::{bench_n, bench_t, BenchCase, BenchConfig, BenchResult, FitRange};
use cascade_qp::cascade::DEFAULT_DENSE_CAP;
use cascade_qp::dist::{check_equivalence, message_stats, MessageKind};
use cascade_qp::io::{load_problem, problem_to_string, save_iterations_csv, save_problem, save_solution};
use cascade_qp::ipm::{solve, LinearSolver, SolveStatus, SolverOptions};
use cascade_qp::problem::{irrigation_like, random_cascade, Dims};
use cascade_qp::Error;

const EXIT_IO: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cascade-qp", version, about = "Interior-point solver for constrained LQ control of cascaded sub-systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a problem file against all model invariants.
    Validate { problem: PathBuf },
    /// Generate a problem instance.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Solve a problem and write the solution and iteration log.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Solution JSON; the iteration CSV goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time fixed-iteration solves while varying N.
    BenchN {
        #[arg(long = "t", default_value_t = 5)]
        horizon: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32, 64])]
        n_list: Vec<usize>,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Time fixed-iteration solves while varying T.
    BenchT {
        #[arg(long = "n", default_value_t = 10)]
        subsystems: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 14, 20, 28, 40, 57, 80])]
        t_list: Vec<usize>,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Run the chain-of-agents simulation and compare with the centralized solver.
    Distsim {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Message log CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a gnuplot script for a benchmark CSV.
    Plot {
        csv: PathBuf,
        /// Script path; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Image written by the script.
        #[arg(long, default_value = "scaling.png")]
        image: String,
    },
}

#[derive(Subcommand, Debug)]
enum GenKind {
    /// Random instance with a strictly feasible zero-input trajectory.
    Random {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "n", default_value_t = 3)]
        subsystems: usize,
        #[arg(long = "t", default_value_t = 4)]
        horizon: usize,
        /// Per-sub-system dimensions n,m,nu.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 1, 4])]
        dims: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic irrigation channel (n=4, m=1, nu=6 per pool).
    Irrigation {
        #[arg(long = "n", default_value_t = 10)]
        subsystems: usize,
        #[arg(long = "t", default_value_t = 5)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.1)]
    sigma_bar: f64,
    #[arg(long, default_value_t = 0.995)]
    tau: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Run exactly this many iterations.
    #[arg(long)]
    fixed_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    tol_gap: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_res: f64,
    /// structured or dense.
    #[arg(long, default_value = "structured")]
    linear_solver: LinearSolver,
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            sigma_bar: self.sigma_bar,
            tau: self.tau,
            max_iterations: self.max_iter,
            fixed_iterations: self.fixed_iter,
            tol_gap: self.tol_gap,
            tol_residual: self.tol_res,
            linear_solver: self.linear_solver,
            dense_cap: self.dense_cap,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [BenchCase::Structured, BenchCase::Dense])]
    cases: Vec<BenchCase>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma_bar: f64,
    #[arg(long, default_value_t = 0.995)]
    tau: f64,
    /// Benchmark CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            cases: self.cases.clone(),
            repeats: self.repeats.max(1),
            dense_cap: self.dense_cap,
            options: SolverOptions {
                sigma_bar: self.sigma_bar,
                tau: self.tau,
                ..SolverOptions::default()
            },
        }
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Factorization { .. } | Error::SingularMatrix | Error::DenseCapExceeded { .. } => EXIT_NUMERIC,
            _ => EXIT_IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn status_exit(status: SolveStatus) -> Result<(), Failure> {
    match status {
        SolveStatus::Converged => Ok(()),
        SolveStatus::MaxIterations => Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: "did not converge within the iteration limit".into(),
        }),
        SolveStatus::FactorizationFailure => Err(Failure {
            code: EXIT_NUMERIC,
            message: "factorization failed".into(),
        }),
    }
}

fn iterations_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("solution");
    out.with_file_name(format!("{stem}.iterations.csv"))
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let problem = load_problem(path)?;
    let report = problem.validate();
    if report.is_valid() {
        println!(
            "valid: N={} T={} total block dimension {}",
            problem.num_subsystems(),
            problem.horizon,
            problem.total_block_dim()
        );
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    Err(Failure {
        code: EXIT_IO,
        message: format!("{} violation(s)", report.violations.len()),
    })
}

fn cmd_gen(kind: &GenKind) -> Result<(), Failure> {
    let (problem, out) = match kind {
        GenKind::Random {
            seed,
            subsystems,
            horizon,
            dims,
            out,
        } => {
            let &[n, m, nu] = dims.as_slice() else {
                return Err(Failure {
                    code: EXIT_IO,
                    message: format!("--dims needs three values n,m,nu, got {}", dims.len()),
                });
            };
            (random_cascade(*seed, *subsystems, *horizon, Dims::new(n, m, nu))?, out)
        }
        GenKind::Irrigation {
            subsystems,
            horizon,
            out,
        } => (irrigation_like(*subsystems, *horizon)?, out),
    };
    match out {
        Some(p) => save_problem(&problem, p)?,
        None => println!("{}", problem_to_string(&problem)?),
    }
    Ok(())
}

fn cmd_solve(path: &Path, solver: &SolverArgs, out: Option<&Path>) -> Result<(), Failure> {
    let problem = load_problem(path)?;
    let report = solve(&problem, &solver.options())?;
    println!("{:>3} {:>11} {:>9} {:>11} {:>11} {:>11}", "k", "mu", "alpha", "r_stat", "r_dyn", "r_comp");
    for r in &report.iterations {
        println!(
            "{:>3} {:>11.4e} {:>9.4} {:>11.4e} {:>11.4e} {:>11.4e}",
            r.k, r.mu, r.alpha, r.r_stat, r.r_dyn, r.r_comp
        );
    }
    println!(
        "status {:?}, {} Newton steps, objective {:.12e}, mu {:.3e}",
        report.status,
        report.newton_steps(),
        report.objective,
        report.final_mu
    );
    if let Some(f) = &report.failure {
        eprintln!("{f}");
    }
    if let Some(out) = out {
        save_solution(&report, out)?;
        let csv = iterations_path(out);
        save_iterations_csv(&report.iterations, &csv)?;
        println!("wrote {} and {}", out.display(), csv.display());
    }
    status_exit(report.status)
}

fn report_bench(result: &BenchResult, out: Option<&Path>) -> Result<(), Failure> {
    for s in &result.skipped {
        eprintln!("skipped: {s}");
    }
    match out {
        Some(p) => {
            let f = File::create(p).map_err(|e| io_failure(p, e))?;
            result.write_csv(BufWriter::new(f))?;
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    let axis = result.meta.axis.label();
    for case in result.cases() {
        let pts = result.points(case);
        let span = match (pts.first(), pts.last()) {
            (Some(a), Some(b)) => b.0 / a.0,
            _ => 0.0,
        };
        if pts.len() < 5 || span < 4.0 {
            eprintln!("note: {} has {} points spanning {span:.1}x; slopes are indicative only", case.name(), pts.len());
        }
        let all = result.slope(case, FitRange::All).ok();
        let upper = result.slope(case, FitRange::UpperHalf).ok();
        let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        eprintln!(
            "slope {} vs {axis}: {} (upper half), {} (all points)",
            case.name(),
            fmt(upper),
            fmt(all)
        );
    }
    Ok(())
}

fn cmd_distsim(path: &Path, solver: &SolverArgs, out: Option<&Path>) -> Result<(), Failure> {
    let problem = load_problem(path)?;
    let n = problem.num_subsystems();
    let eq = check_equivalence(&problem, &solver.options())?;
    let log = &eq.run.log;
    println!(
        "equivalence: max |distributed - centralized| = {:.3e} over {} iterates",
        eq.max_abs_diff(),
        eq.per_iteration.len()
    );
    println!(
        "status {:?}, {} Newton steps, objective {:.12e}",
        eq.run.report.status,
        eq.run.report.newton_steps(),
        eq.run.report.objective
    );
    if n < 2 {
        println!("no links: a single sub-system exchanges no messages");
    } else {
        let stats = message_stats(log, n);
        println!("links {}, Newton iterations {}", stats.links, stats.newton_iterations);
        for kind in MessageKind::ALL {
            println!(
                "  {:<12} {:>8} messages {:>12} bytes",
                kind.name(),
                log.total_count(kind),
                stats.bytes_by_kind.get(&kind).copied().unwrap_or(0)
            );
        }
        println!(
            "bytes per link per iteration: max {:.0}, mean {:.1}; largest message {} bytes; {:.1} rounds per iteration",
            stats.max_link_bytes_per_iteration,
            stats.mean_link_bytes_per_iteration,
            stats.max_message_bytes,
            stats.rounds_per_iteration
        );
    }
    if let Some(out) = out {
        let f = File::create(out).map_err(|e| io_failure(out, e))?;
        log.write_csv(BufWriter::new(f))?;
        println!("wrote {}", out.display());
    }
    status_exit(eq.run.report.status)
}

fn cmd_plot(csv: &Path, out: Option<&Path>, image: &str) -> Result<(), Failure> {
    let f = File::open(csv).map_err(|e| io_failure(csv, e))?;
    let result = BenchResult::read_csv(BufReader::new(f)).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", csv.display()),
    })?;
    write_text(out, &result.plot_script(image))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { problem } => cmd_validate(problem),
        Command::Gen { kind } => cmd_gen(kind),
        Command::Solve { problem, solver, out } => cmd_solve(problem, solver, out.as_deref()),
        Command::BenchN {
            horizon,
            n_list,
            bench,
        } => report_bench(&bench_n(*horizon, n_list, &bench.config())?, bench.out.as_deref()),
        Command::BenchT {
            subsystems,
            t_list,
            bench,
        } => report_bench(&bench_t(*subsystems, t_list, &bench.config())?, bench.out.as_deref()),
        Command::Distsim { problem, solver, out } => cmd_distsim(problem, solver, out.as_deref()),
        Command::Plot { csv, out, image } => cmd_plot(csv, out.as_deref(), image),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_IO) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
