use std::path::Path;
use std::process::{Command, Output};

use cascade_qp::ipm::{solve, SolverOptions};
use cascade_qp::problem::{random_cascade, Dims};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade-qp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn objective_line(s: &str) -> f64 {
    let line = s.lines().find(|l| l.starts_with("status")).expect("status line");
    let tail = line.split("objective ").nth(1).unwrap();
    tail.split(',').next().unwrap().trim().parse().unwrap()
}

#[test]
fn gen_validate_solve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["gen", "random", "--seed", "3", "--n", "3", "--t", "4", "--dims", "2,1,2", "--out", "r.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(d, &["validate", "r.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("valid"));

    let o = run(d, &["solve", "r.json", "--out", "s.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    let direct = solve(&random_cascade(3, 3, 4, Dims::new(2, 1, 2)).unwrap(), &SolverOptions::default()).unwrap();
    let f = sol["objective"].as_f64().unwrap();
    assert!((f - direct.objective).abs() <= 1e-12 * direct.objective.abs().max(1.0));
    assert_eq!(sol["iterations"].as_u64().unwrap() as usize, direct.newton_steps());

    let log = std::fs::read_to_string(d.join("s.iterations.csv")).unwrap();
    assert!(log.starts_with("k,mu,alpha"));
    assert_eq!(log.lines().count(), direct.newton_steps() + 2);

    let dense = run(d, &["solve", "r.json", "--linear-solver", "dense"]);
    assert!(dense.status.success());
    assert!((objective_line(&stdout(&dense)) - f).abs() <= 1e-6 * f.abs().max(1.0));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["solve", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));

    run(d, &["gen", "irrigation", "--n", "3", "--t", "5", "--out", "i.json"]);
    let o = run(d, &["solve", "i.json", "--max-iter", "2"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(d, &["solve", "i.json", "--linear-solver", "dense", "--dense-cap", "10"]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(d, &["gen", "random", "--dims", "1,2", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(d, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_reports_broken_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["gen", "irrigation", "--n", "2", "--t", "3", "--out", "i.json"]);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("i.json")).unwrap()).unwrap();
    v["subsystems"][1]["stages"][2]["R"] = serde_json::json!([[-1.0]]);
    std::fs::write(d.join("bad.json"), v.to_string()).unwrap();
    let o = run(d, &["validate", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o) + &stderr(&o);
    assert!(text.contains("R not positive definite"), "{text}");
}

#[test]
fn distsim_reports_equivalence_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["gen", "irrigation", "--n", "4", "--t", "5", "--out", "i.json"]);
    let o = run(d, &["distsim", "i.json", "--fixed-iter", "16", "--out", "m.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let eq = out.lines().find(|l| l.starts_with("equivalence")).unwrap();
    let diff: f64 = eq.split("= ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(diff <= 1e-10);

    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let coupling: Vec<&str> = csv.lines().filter(|l| l.contains(",UpCoupling,")).collect();
    assert_eq!(coupling.len(), 3 * 16);
    assert!(coupling.iter().all(|l| l.ends_with(",2400")));

    run(d, &["gen", "irrigation", "--n", "1", "--t", "5", "--out", "one.json"]);
    let o = run(d, &["distsim", "one.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("no links"));
}

#[test]
fn bench_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["bench-n", "--t", "3", "--n-list", "2,3,4", "--repeats", "1", "--out", "b.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((stdout(&o) + &stderr(&o)).contains("slope structured vs N"));
    let csv = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 3 * 2);

    let o = run(d, &["bench-t", "--n", "2", "--t-list", "3,4", "--cases", "structured", "--repeats", "1", "--out", "t.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = run(d, &["plot", "b.csv", "--out", "b.gp", "--image", "b.png"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gp = std::fs::read_to_string(d.join("b.gp")).unwrap();
    assert!(gp.contains("set xlabel 'N'"));
    assert!(gp.contains("'b.png'"));
    assert!(gp.contains("title 'structured'") && gp.contains("title 'dense'"));
}
