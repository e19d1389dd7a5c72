//! JSON problem and solution files, and the per-iteration CSV.
//!
//! Matrices are row-major arrays of arrays. Floats are written with the
//! shortest representation that parses back to the same bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{IterationRecord, SolveReport, SolveStatus};
use crate::problem::{CascadeProblem, StageData, SubsystemModel, TerminalData};
use crate::stacked::Trajectory;

pub const PROBLEM_FORMAT: &str = "cascade-qp/1";
pub const SOLUTION_FORMAT: &str = "cascade-qp-solution/1";

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    format: String,
    #[serde(rename = "T")]
    horizon: usize,
    subsystems: Vec<SubsystemFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsystemFile {
    j: usize,
    n: usize,
    m: usize,
    nu: usize,
    xi: Vec<f64>,
    stages: Vec<StageFile>,
    terminal: TerminalFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageFile {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    e: Option<Rows>,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "S")]
    s: Rows,
    #[serde(rename = "R")]
    r: Rows,
    #[serde(rename = "M")]
    m: Rows,
    #[serde(rename = "L")]
    l: Rows,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalFile {
    #[serde(rename = "P")]
    p: Rows,
    #[serde(rename = "M")]
    m: Rows,
    c: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &Rows, shape: (usize, usize), field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 {
        return Err(Error::dim(format!("{field}: {} rows, expected {}", rows.len(), shape.0)));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != shape.1 {
            return Err(Error::dim(format!("{field}: row {i} has {} entries, expected {}", r.len(), shape.1)));
        }
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, field: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::dim(format!("{field}: length {}, expected {len}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn to_file(problem: &CascadeProblem) -> ProblemFile {
    ProblemFile {
        format: PROBLEM_FORMAT.to_string(),
        horizon: problem.horizon,
        subsystems: problem
            .subsystems
            .iter()
            .map(|s| SubsystemFile {
                j: s.index,
                n: s.n,
                m: s.m,
                nu: s.nu,
                xi: s.xi.iter().copied().collect(),
                stages: s
                    .stages
                    .iter()
                    .map(|st| StageFile {
                        a: rows_of(&st.a),
                        b: rows_of(&st.b),
                        e: st.e.as_ref().map(rows_of),
                        q: rows_of(&st.q),
                        s: rows_of(&st.s),
                        r: rows_of(&st.r),
                        m: rows_of(&st.m),
                        l: rows_of(&st.l),
                        c: st.c.iter().copied().collect(),
                    })
                    .collect(),
                terminal: TerminalFile {
                    p: rows_of(&s.terminal.p),
                    m: rows_of(&s.terminal.m),
                    c: s.terminal.c.iter().copied().collect(),
                },
            })
            .collect(),
    }
}

fn from_file(f: ProblemFile) -> Result<CascadeProblem> {
    if f.format != PROBLEM_FORMAT {
        return Err(Error::Parse(format!("format: expected \"{PROBLEM_FORMAT}\", found \"{}\"", f.format)));
    }
    let horizon = f.horizon;
    let mut subsystems = Vec::with_capacity(f.subsystems.len());
    let mut n_up = 0;
    for (pos, s) in f.subsystems.into_iter().enumerate() {
        let j = pos + 1;
        if s.j != j {
            return Err(Error::Parse(format!("subsystems[{pos}].j: expected {j}, found {}", s.j)));
        }
        if s.stages.len() != horizon {
            return Err(Error::dim(format!("subsystems[{pos}].stages: {} stages for T = {horizon}", s.stages.len())));
        }
        let (n, m, nu) = (s.n, s.m, s.nu);
        let mut stages = Vec::with_capacity(horizon);
        for (t, st) in s.stages.iter().enumerate() {
            let field = |name: &str| format!("subsystems[{pos}].stages[{t}].{name}");
            let e = match (&st.e, j) {
                (Some(_), 1) => return Err(Error::Parse(format!("E forbidden at j=1 (stage {t})"))),
                (None, 1) => None,
                (Some(e), _) => Some(matrix(e, (n, n_up), &field("E"))?),
                (None, _) => return Err(Error::Parse(format!("{}: missing for j={j}", field("E")))),
            };
            stages.push(StageData {
                a: matrix(&st.a, (n, n), &field("A"))?,
                b: matrix(&st.b, (n, m), &field("B"))?,
                e,
                q: matrix(&st.q, (n, n), &field("Q"))?,
                s: matrix(&st.s, (m, n), &field("S"))?,
                r: matrix(&st.r, (m, m), &field("R"))?,
                m: matrix(&st.m, (nu, n), &field("M"))?,
                l: matrix(&st.l, (nu, m), &field("L"))?,
                c: vector(&st.c, nu, &field("c"))?,
            });
        }
        let tf = |name: &str| format!("subsystems[{pos}].terminal.{name}");
        let terminal = TerminalData {
            p: matrix(&s.terminal.p, (n, n), &tf("P"))?,
            m: matrix(&s.terminal.m, (nu, n), &tf("M"))?,
            c: vector(&s.terminal.c, nu, &tf("c"))?,
        };
        subsystems.push(SubsystemModel {
            index: j,
            n,
            m,
            nu,
            stages,
            terminal,
            xi: vector(&s.xi, n, &format!("subsystems[{pos}].xi"))?,
        });
        n_up = n;
    }
    Ok(CascadeProblem { horizon, subsystems })
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn problem_from_reader<R: Read>(r: R) -> Result<CascadeProblem> {
    let f: ProblemFile = serde_json::from_reader(r).map_err(json_err)?;
    from_file(f)
}

pub fn problem_from_str(s: &str) -> Result<CascadeProblem> {
    problem_from_reader(s.as_bytes())
}

pub fn problem_to_string(problem: &CascadeProblem) -> Result<String> {
    serde_json::to_string(&to_file(problem)).map_err(json_err)
}

/// Reads a problem file. Invariants are checked separately by `validate`.
pub fn load_problem(path: &Path) -> Result<CascadeProblem> {
    problem_from_reader(open(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_problem(problem: &CascadeProblem, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &to_file(problem)).map_err(json_err)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSolution {
    pub j: usize,
    pub xhat: Vec<f64>,
    pub uhat: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub status: SolveStatus,
    pub objective: f64,
    pub final_mu: f64,
    pub iterations: usize,
    pub subsystems: Vec<SubsystemSolution>,
}

impl SolutionFile {
    pub fn from_report(report: &SolveReport) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        Self {
            format: SOLUTION_FORMAT.to_string(),
            status: report.status,
            objective: report.objective,
            final_mu: report.final_mu,
            iterations: report.newton_steps(),
            subsystems: report
                .iterate
                .parts
                .iter()
                .enumerate()
                .map(|(i, s)| SubsystemSolution {
                    j: i + 1,
                    xhat: v(&s.x),
                    uhat: v(&s.u),
                    p: v(&s.p),
                    lambda: v(&s.lambda),
                    theta: v(&s.theta),
                })
                .collect(),
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            xhat: self.subsystems.iter().map(|s| DVector::from_column_slice(&s.xhat)).collect(),
            uhat: self.subsystems.iter().map(|s| DVector::from_column_slice(&s.uhat)).collect(),
        }
    }
}

pub fn save_solution(report: &SolveReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &SolutionFile::from_report(report)).map_err(json_err)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    let f: SolutionFile = serde_json::from_reader(open(path)?).map_err(json_err)?;
    if f.format != SOLUTION_FORMAT {
        return Err(Error::Parse(format!("format: expected \"{SOLUTION_FORMAT}\", found \"{}\"", f.format)));
    }
    Ok(f)
}

pub const ITERATION_COLUMNS: [&str; 8] = ["k", "mu", "alpha", "r_stat", "r_dyn", "r_comp", "t_factor_s", "t_solve_s"];

pub fn write_iterations_csv<W: Write>(records: &[IterationRecord], w: W) -> Result<()> {
    let err = |e: csv::Error| Error::Parse(format!("iteration csv: {e}"));
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ITERATION_COLUMNS).map_err(err)?;
    for r in records {
        wr.write_record([
            r.k.to_string(),
            r.mu.to_string(),
            r.alpha.to_string(),
            r.r_stat.to_string(),
            r.r_dyn.to_string(),
            r.r_comp.to_string(),
            r.t_factor_s.to_string(),
            r.t_solve_s.to_string(),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::Parse(format!("iteration csv: {e}")))
}

pub fn save_iterations_csv(records: &[IterationRecord], path: &Path) -> Result<()> {
    write_iterations_csv(records, create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{irrigation_like, random_cascade, Dims};

    #[test]
    fn round_trip_is_exact() {
        let p = random_cascade(1, 2, 2, Dims::new(2, 1, 2)).unwrap();
        let text = problem_to_string(&p).unwrap();
        assert_eq!(problem_from_str(&text).unwrap(), p);
        let q = irrigation_like(3, 2).unwrap();
        assert_eq!(problem_from_str(&problem_to_string(&q).unwrap()).unwrap(), q);
    }

    #[test]
    fn missing_horizon_names_the_field() {
        let p = random_cascade(1, 1, 1, Dims::new(1, 1, 1)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&problem_to_string(&p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("T");
        let err = problem_from_str(&v.to_string()).unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("`T`")), "{err}");
    }

    #[test]
    fn coupling_on_first_subsystem_is_rejected() {
        let p = random_cascade(1, 2, 1, Dims::new(1, 1, 1)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&problem_to_string(&p).unwrap()).unwrap();
        v["subsystems"][0]["stages"][0]["E"] = serde_json::json!([[0.5]]);
        let err = problem_from_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("E forbidden at j=1"), "{err}");

        let mut w: serde_json::Value = serde_json::from_str(&problem_to_string(&p).unwrap()).unwrap();
        w["subsystems"][1]["stages"][0].as_object_mut().unwrap().remove("E");
        assert!(problem_from_str(&w.to_string()).is_err());
    }

    #[test]
    fn ragged_matrix_is_a_dimension_error() {
        let p = random_cascade(2, 1, 1, Dims::new(2, 1, 1)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&problem_to_string(&p).unwrap()).unwrap();
        v["subsystems"][0]["stages"][0]["A"][1] = serde_json::json!([1.0]);
        let err = problem_from_str(&v.to_string()).unwrap_err();
        assert!(matches!(&err, Error::Dimension(m) if m.contains("stages[0].A")), "{err}");
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let p = random_cascade(2, 1, 1, Dims::new(1, 1, 1)).unwrap();
        let text = problem_to_string(&p).unwrap().replace(PROBLEM_FORMAT, "other/9");
        assert!(matches!(problem_from_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_problem(Path::new("/nonexistent/problem.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/problem.json"));
    }

    #[test]
    fn iteration_csv_header() {
        let rec = IterationRecord {
            k: 1,
            mu: 0.5,
            alpha: 1.0,
            r_stat: 0.0,
            r_dyn: 0.0,
            r_comp: 0.0,
            r_ineq: 0.0,
            t_factor_s: 0.0,
            t_solve_s: 0.0,
        };
        let mut buf = Vec::new();
        write_iterations_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,mu,alpha,r_stat,r_dyn,r_comp,t_factor_s,t_solve_s\n1,0.5,1,"));
    }
}
