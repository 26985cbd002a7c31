//! End-to-end tests of the command-line surface and its exit-code contract:
//! 0 success/certified, 1 data or solver error, 2 usage error, 3 uncertified.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rotavg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotavg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(exit_code(&rotavg(&[])), 2);
    assert_eq!(exit_code(&rotavg(&["no-such-command"])), 2);
    assert_eq!(exit_code(&rotavg(&["solve"])), 2);
    assert_eq!(exit_code(&rotavg(&["solve", "x.g2o", "--no-such-flag"])), 2);
    // Cycle requires exactly one source.
    assert_eq!(exit_code(&rotavg(&["cycle"])), 2);
}

#[test]
fn missing_file_is_a_data_error() {
    let out = rotavg(&["solve", "/nonexistent/missing.g2o"]);
    assert_eq!(exit_code(&out), 1);
    assert!(!stderr_of(&out).is_empty());
}

#[test]
fn solve_certifies_synthetic_graph_and_round_trips_certify() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("er.g2o");
    let sol = dir.path().join("er.sol");
    let trace = dir.path().join("er.trace.csv");
    let report = dir.path().join("er.json");

    let synth = rotavg(&["synth", "graph", "30,0.3,0.1,11", "--out", path_str(&g2o)]);
    assert_eq!(exit_code(&synth), 0, "stderr: {}", stderr_of(&synth));

    let solve = rotavg(&[
        "solve",
        path_str(&g2o),
        "--out",
        path_str(&sol),
        "--trace",
        path_str(&trace),
        "--report",
        path_str(&report),
    ]);
    assert_eq!(exit_code(&solve), 0, "stderr: {}", stderr_of(&solve));
    let table = stdout_of(&solve);
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,n,m,min_eig,cost,wall_time_s,iterations,certified"
    );
    let row = lines.next().unwrap();
    assert!(row.ends_with("true"), "row: {row}");

    let trace_text = fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("iteration,min_abs_lambda,cost,wall_ms\n"));
    assert!(trace_text.lines().count() >= 2);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["n"], 30);
    assert_eq!(json["certified"], true);

    let certify = rotavg(&["certify", path_str(&g2o), path_str(&sol)]);
    assert_eq!(exit_code(&certify), 0, "stderr: {}", stderr_of(&certify));
    assert!(stdout_of(&certify).contains("certified=true"));
}

#[test]
fn uncertified_solve_exits_three_but_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("er.g2o");
    let report = dir.path().join("row.json");
    let synth = rotavg(&["synth", "graph", "24,0.4,0.4,5", "--out", path_str(&g2o)]);
    assert_eq!(exit_code(&synth), 0);

    // Two iterations cannot reach the stopping threshold on this instance.
    let solve = rotavg(&[
        "solve",
        path_str(&g2o),
        "--max-iter",
        "2",
        "--report",
        path_str(&report),
    ]);
    assert_eq!(exit_code(&solve), 3, "stdout: {}", stdout_of(&solve));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["certified"], false);
    assert_eq!(json["iterations"], 2);
}

#[test]
fn corrupted_solution_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("cycle.g2o");
    let sol = dir.path().join("cycle.sol");
    assert_eq!(
        exit_code(&rotavg(&["synth", "cycle", "12,0.2,3", "--out", path_str(&g2o)])),
        0
    );
    assert_eq!(
        exit_code(&rotavg(&["cycle", path_str(&g2o), "--out", path_str(&sol)])),
        0
    );
    assert_eq!(exit_code(&rotavg(&["certify", path_str(&g2o), path_str(&sol)])), 0);

    // Replace one rotation with a quarter turn; the certificate must fail
    // with a negative eigenvalue.
    let text = fs::read_to_string(&sol).unwrap();
    let corrupted: Vec<String> = text
        .lines()
        .map(|line| {
            if line.starts_with("5 ") {
                let c = std::f64::consts::FRAC_1_SQRT_2;
                format!("5 {c:.16e} {c:.16e} 0.0e0 0.0e0")
            } else {
                line.to_string()
            }
        })
        .collect();
    fs::write(&sol, corrupted.join("\n") + "\n").unwrap();

    let certify = rotavg(&["certify", path_str(&g2o), path_str(&sol)]);
    assert_eq!(exit_code(&certify), 3, "stdout: {}", stdout_of(&certify));
    let text = stdout_of(&certify);
    assert!(text.contains("certified=false"), "output: {text}");
    let min_eig: f64 = text
        .split_whitespace()
        .find_map(|token| token.strip_prefix("min_eig="))
        .expect("min_eig field")
        .parse()
        .unwrap();
    assert!(min_eig < -1e-6, "min_eig {min_eig}");
}

#[test]
fn cycle_synth_matches_the_noise_free_law() {
    let out = rotavg(&["cycle", "--synth", "20,0.0,7"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout_of(&out);
    assert!(text.contains("cost=-180.000000"), "output: {text}");
    assert!(text.contains("k=0"), "output: {text}");
}

#[test]
fn cycle_rejects_non_cycle_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("grid.g2o");
    assert_eq!(
        exit_code(&rotavg(&["synth", "grid", "3,4,0.1,2", "--out", path_str(&g2o)])),
        0
    );
    let out = rotavg(&["cycle", path_str(&g2o)]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("cycle"), "stderr: {}", stderr_of(&out));
}

#[test]
fn spectrum_verifies_against_dense() {
    let out = rotavg(&["spectrum", "--synth", "15,0.3,9", "--verify"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 45);
    assert!(text.contains("dense_max_deviation"), "stdout: {text}");
}

#[test]
fn synth_truth_certifies_on_noise_free_instances() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("nf.g2o");
    let truth = dir.path().join("nf.sol");
    assert_eq!(
        exit_code(&rotavg(&[
            "synth", "graph", "20,0.4,0.0,13", "--out", path_str(&g2o), "--truth", path_str(&truth),
        ])),
        0
    );
    let out = rotavg(&["certify", path_str(&g2o), path_str(&truth)]);
    assert_eq!(exit_code(&out), 0, "stdout: {}", stdout_of(&out));
}

#[test]
fn experiment_emits_stable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let agg = dir.path().join("agg.csv");
    let trials = dir.path().join("trials.csv");
    let out = rotavg(&[
        "experiment",
        "principal-angle",
        "12",
        "0.0,0.3",
        "6",
        "21",
        "--out",
        path_str(&agg),
        "--trials-csv",
        path_str(&trials),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let agg_text = fs::read_to_string(&agg).unwrap();
    let mut lines = agg_text.lines();
    assert!(lines.next().unwrap().starts_with("# rng=chacha12/stream-per-trial seed=21"));
    assert_eq!(lines.next().unwrap(), "fiedler_bin,sigma,mean_cosine,count");

    let trials_text = fs::read_to_string(&trials).unwrap();
    let mut lines = trials_text.lines();
    assert!(lines.next().unwrap().starts_with("# rng="));
    assert_eq!(lines.next().unwrap(), "trial,n,sigma,fiedler,cosine");

    // Determinism: a second run yields byte-identical CSVs.
    let agg2 = dir.path().join("agg2.csv");
    let rerun = rotavg(&[
        "experiment",
        "principal-angle",
        "12",
        "0.0,0.3",
        "6",
        "21",
        "--out",
        path_str(&agg2),
    ]);
    assert_eq!(exit_code(&rerun), 0);
    assert_eq!(agg_text, fs::read_to_string(&agg2).unwrap());
}

#[test]
fn bench_walks_a_directory_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.csv");
    assert_eq!(
        exit_code(&rotavg(&[
            "synth", "cycle", "16,0.2,1", "--out", path_str(&dir.path().join("a_cycle.g2o")),
        ])),
        0
    );
    assert_eq!(
        exit_code(&rotavg(&[
            "synth", "grid", "4,4,0.1,2", "--out", path_str(&dir.path().join("b_grid.g2o")),
        ])),
        0
    );
    fs::write(dir.path().join("notes.txt"), "not a dataset").unwrap();

    let out = rotavg(&["bench", path_str(dir.path()), "--report", path_str(&report)]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,n,m,min_eig,cost,wall_time_s,iterations,certified"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("a_cycle,16,16,"));
    assert!(rows[1].starts_with("b_grid,16,24,"));
}

#[test]
fn plot_renders_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let g2o = dir.path().join("er.g2o");
    let trace = dir.path().join("trace.csv");
    let svg = dir.path().join("plot.svg");
    assert_eq!(
        exit_code(&rotavg(&["synth", "graph", "20,0.4,0.2,17", "--out", path_str(&g2o)])),
        0
    );
    assert_eq!(
        exit_code(&rotavg(&["solve", path_str(&g2o), "--trace", path_str(&trace)])),
        0
    );
    let out = rotavg(&["plot", path_str(&trace), path_str(&svg)]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let body = fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"));
    assert!(body.contains("polyline") || body.contains("circle"));

    // A malformed trace is a data error.
    fs::write(&trace, "wrong,header\n1,2\n").unwrap();
    assert_eq!(exit_code(&rotavg(&["plot", path_str(&trace), path_str(&svg)])), 1);
}
