//! Command-line surface of the rotation averaging toolkit.
//!
//! Exit codes: 0 success (certified where that applies), 1 solver or data
//! error, 2 usage error (from argument parsing), 3 solve or certificate
//! completed but uncertified, with reports still written.

mod plot;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use rayon::prelude::*;
use rotavg::cycle::CycleProblem;
use rotavg::g2o;
use rotavg::graph::PairwiseMatrix;
use rotavg::solver::{self, SolverConfig};
use rotavg::synth::{self, CycleSpec, GraphSpec, GridSpec};
use rotavg::Rotation;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rotavg", version, about = "Rotation averaging on measurement graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the primal-dual solver on a g2o file and print a benchmark row.
    Solve {
        g2o: PathBuf,
        /// Iteration budget.
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        /// Stopping threshold on min |lambda_i| of Lambda - M.
        #[arg(long)]
        eps: Option<f64>,
        /// Scale the stopping threshold by the certificate matrix norm.
        #[arg(long = "relative-eps")]
        relative_eps: bool,
        /// Write the per-iteration convergence trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the solution rotations.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the benchmark row as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve a cycle graph in closed form (or pick the k-th stationary point).
    #[command(group(ArgGroup::new("source").required(true).args(["g2o", "synth"])))]
    Cycle {
        /// Input g2o file; must be a simple cycle.
        g2o: Option<PathBuf>,
        /// Generate the cycle instead: `n,sigma,seed`.
        #[arg(long)]
        synth: Option<String>,
        /// Stationary point index; 0 is the global optimum.
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// Write the solution rotations (indexed by graph node id).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the optimality certificate for an external solution.
    Certify {
        g2o: PathBuf,
        solution: PathBuf,
        /// Certificate tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print the closed-form spectrum of a synthetic cycle's pairwise matrix.
    Spectrum {
        /// Cycle spec: `n,sigma,seed`.
        #[arg(long)]
        synth: String,
        /// Cross-check against a dense eigendecomposition (3n <= 600).
        #[arg(long)]
        verify: bool,
    },
    /// Generate synthetic problems as g2o files with ground truth.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Run reproducible numerical studies.
    Experiment {
        #[command(subcommand)]
        what: ExperimentCommand,
    },
    /// Solve every g2o file in a directory and emit a benchmark CSV.
    Bench {
        dir: PathBuf,
        /// Also write the CSV to a file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a convergence trace CSV as a static SVG plot.
    Plot { trace: PathBuf, out: PathBuf },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Perturbed cycle: `n,sigma,seed`.
    Cycle {
        spec: String,
        /// g2o output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth solution output path.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Perturbed connected Erdos-Renyi graph: `n,p,sigma,seed`.
    Graph {
        spec: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Perturbed lattice: `rows,cols,sigma,seed`.
    Grid {
        spec: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Principal angle between noisy and noise-free bottom eigenspaces,
    /// aggregated by Fiedler-value bin.
    #[command(name = "principal-angle")]
    PrincipalAngle {
        n: usize,
        /// Comma-separated noise levels, e.g. `0.1,0.3,0.5`.
        sigmas: String,
        trials: usize,
        seed: u64,
        /// Aggregate CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-trial CSV.
        #[arg(long = "trials-csv")]
        trials_csv: Option<PathBuf>,
    },
}

/// One benchmark result; mirrors the CSV and JSON report schemas.
#[derive(Serialize)]
struct BenchRow {
    dataset: String,
    n: usize,
    m: usize,
    min_eig: f64,
    cost: f64,
    wall_time_s: f64,
    iterations: usize,
    certified: bool,
}

impl BenchRow {
    fn csv_header() -> &'static str {
        "dataset,n,m,min_eig,cost,wall_time_s,iterations,certified"
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6},{:.3},{},{}",
            self.dataset,
            self.n,
            self.m,
            self.min_eig,
            self.cost,
            self.wall_time_s,
            self.iterations,
            self.certified
        )
    }
}

fn parse_fields(spec: &str, expected: usize, usage: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != expected {
        bail!("spec `{spec}` must look like `{usage}`");
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("spec field `{p}` in `{spec}` is not a number"))
        })
        .collect()
}

fn parse_cycle_spec(spec: &str) -> Result<CycleSpec> {
    let f = parse_fields(spec, 3, "n,sigma,seed")?;
    Ok(CycleSpec { n: f[0] as usize, sigma: f[1], seed: f[2] as u64 })
}

fn parse_graph_spec(spec: &str) -> Result<GraphSpec> {
    let f = parse_fields(spec, 4, "n,p,sigma,seed")?;
    Ok(GraphSpec {
        n: f[0] as usize,
        edge_probability: f[1],
        sigma: f[2],
        seed: f[3] as u64,
    })
}

fn parse_grid_spec(spec: &str) -> Result<GridSpec> {
    let f = parse_fields(spec, 4, "rows,cols,sigma,seed")?;
    Ok(GridSpec {
        rows: f[0] as usize,
        cols: f[1] as usize,
        sigma: f[2],
        seed: f[3] as u64,
    })
}

fn write_or_stdout(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            body(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)
        }
    }
}

fn run_solve(
    g2o_path: &Path,
    max_iter: Option<usize>,
    eps: Option<f64>,
    relative_eps: bool,
    trace: Option<&Path>,
    out: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<ExitCode> {
    let dataset = g2o::parse_g2o(g2o_path)?;
    let mut config = SolverConfig::default();
    if let Some(it) = max_iter {
        config.max_iterations = it;
    }
    if let Some(e) = eps {
        config.epsilon = e;
    }
    config.relative_epsilon = relative_eps;
    let report = solver::solve(&dataset.graph, &config)?;
    let row = BenchRow {
        dataset: dataset.name.clone(),
        n: dataset.graph.node_count(),
        m: dataset.graph.edge_count(),
        min_eig: *report
            .min_eigenvalue_history
            .last()
            .expect("solver ran at least one iteration"),
        cost: report.final_cost,
        wall_time_s: report.wall_time.as_secs_f64(),
        iterations: report.iterations,
        certified: report.certified,
    };
    println!("{}", BenchRow::csv_header());
    println!("{}", row.csv_line());
    if let Some(p) = trace {
        let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(file);
        report.write_trace_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = out {
        g2o::write_solution(p, &report.rotations)?;
    }
    if let Some(p) = report_path {
        let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &row)?;
    }
    Ok(if report.certified { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn run_cycle(
    g2o_path: Option<&Path>,
    synth_spec: Option<&str>,
    k: usize,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let problem = match (g2o_path, synth_spec) {
        (Some(path), None) => {
            let dataset = g2o::parse_g2o(path)?;
            CycleProblem::from_graph(&dataset.graph)?
        }
        (None, Some(spec)) => synth::generate_cycle(&parse_cycle_spec(spec)?)?.0,
        _ => unreachable!("clap enforces exactly one source"),
    };
    let solution = problem.stationary_point(k)?;
    println!(
        "n={} k={} cost={:.6} root_angle={:.9e} cycle_angle={:.9e}",
        problem.len(),
        solution.k,
        solution.cost,
        solution.root_angle,
        solution.cycle_angle
    );
    if let Some(p) = out {
        // Order rotations by graph node id, not cycle position.
        let mut by_node = vec![Rotation::identity(); problem.len()];
        for (pos, &node) in problem.nodes().iter().enumerate() {
            by_node[node] = solution.rotations[pos];
        }
        g2o::write_solution(p, &by_node)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_certify(g2o_path: &Path, solution_path: &Path, tol: Option<f64>) -> Result<ExitCode> {
    let dataset = g2o::parse_g2o(g2o_path)?;
    let rotations = g2o::read_solution(solution_path)?;
    if rotations.len() != dataset.graph.node_count() {
        bail!(
            "solution has {} rotations, dataset has {} nodes",
            rotations.len(),
            dataset.graph.node_count()
        );
    }
    let tol = tol.unwrap_or(solver::CERTIFY_TOL);
    let m = PairwiseMatrix::from_graph(&dataset.graph);
    let lambda = solver::kkt_multiplier(&dataset.graph, &rotations)?;
    let cert = solver::certify(&m, &rotations, &lambda, tol)?;
    let cost = solver::cost(&dataset.graph, &rotations)?;
    println!(
        "min_eig={:.6e} stationarity_residual={:.6e} cost={:.6} tol={:.1e} certified={}",
        cert.min_eigenvalue, cert.stationarity_residual, cost, tol, cert.certified
    );
    Ok(if cert.certified { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn run_spectrum(spec: &str, verify: bool) -> Result<ExitCode> {
    let (problem, _) = synth::generate_cycle(&parse_cycle_spec(spec)?)?;
    let spectrum = problem.closed_form_spectrum();
    if verify && spectrum.len() > 600 {
        bail!("--verify needs 3n <= 600, got {}", spectrum.len());
    }
    for v in &spectrum {
        println!("{v:.12e}");
    }
    if verify {
        let graph = problem.to_graph();
        let m = PairwiseMatrix::from_graph(&graph);
        let dense = rotavg::eigen::dense_spectrum(&m);
        let max_dev = spectrum
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!("# dense_max_deviation={max_dev:.3e}");
        if max_dev > 1e-9 {
            bail!("closed-form spectrum deviates from dense check by {max_dev:.3e}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn emit_synthetic(
    graph: &rotavg::MeasurementGraph,
    truth: &[Rotation],
    out: Option<&Path>,
    truth_out: Option<&Path>,
) -> Result<ExitCode> {
    write_or_stdout(out, |w| {
        g2o::write_g2o_to(w, graph)?;
        Ok(())
    })?;
    if let Some(p) = truth_out {
        g2o::write_solution(p, truth)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_synth(what: &SynthCommand) -> Result<ExitCode> {
    match what {
        SynthCommand::Cycle { spec, out, truth } => {
            let (problem, gt) = synth::generate_cycle(&parse_cycle_spec(spec)?)?;
            emit_synthetic(
                &problem.to_graph(),
                &gt.rotations()?,
                out.as_deref(),
                truth.as_deref(),
            )
        }
        SynthCommand::Graph { spec, out, truth } => {
            let (graph, gt, _) = synth::generate_graph(&parse_graph_spec(spec)?)?;
            emit_synthetic(&graph, &gt.rotations()?, out.as_deref(), truth.as_deref())
        }
        SynthCommand::Grid { spec, out, truth } => {
            let (graph, gt) = synth::generate_grid(&parse_grid_spec(spec)?)?;
            emit_synthetic(&graph, &gt.rotations()?, out.as_deref(), truth.as_deref())
        }
    }
}

fn run_experiment(what: &ExperimentCommand) -> Result<ExitCode> {
    match what {
        ExperimentCommand::PrincipalAngle { n, sigmas, trials, seed, out, trials_csv } => {
            let sigma_values: Vec<f64> = sigmas
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| anyhow!("noise level `{s}` is not a number"))
                })
                .collect::<Result<_>>()?;
            let table = synth::principal_angle_experiment(*n, &sigma_values, *trials, *seed)?;
            if table.failed_trials > 0 {
                eprintln!("warning: {} trials failed graph generation", table.failed_trials);
            }
            write_or_stdout(out.as_deref(), |w| {
                table.write_aggregate_csv(w)?;
                Ok(())
            })?;
            if let Some(p) = trials_csv {
                let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                let mut w = BufWriter::new(file);
                table.write_trials_csv(&mut w)?;
                w.flush()?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_bench(dir: &Path, report: Option<&Path>) -> Result<ExitCode> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "g2o"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no g2o files in {}", dir.display());
    }
    let results: Vec<(PathBuf, Result<BenchRow>)> = files
        .par_iter()
        .map(|path| {
            let row = (|| -> Result<BenchRow> {
                let dataset = g2o::parse_g2o(path)?;
                let report = solver::solve(&dataset.graph, &SolverConfig::default())?;
                Ok(BenchRow {
                    dataset: dataset.name,
                    n: dataset.graph.node_count(),
                    m: dataset.graph.edge_count(),
                    min_eig: *report
                        .min_eigenvalue_history
                        .last()
                        .expect("solver ran at least one iteration"),
                    cost: report.final_cost,
                    wall_time_s: report.wall_time.as_secs_f64(),
                    iterations: report.iterations,
                    certified: report.certified,
                })
            })();
            (path.clone(), row)
        })
        .collect();
    let mut csv = String::from(BenchRow::csv_header());
    csv.push('\n');
    let mut failures = 0usize;
    let mut uncertified = 0usize;
    for (path, row) in &results {
        match row {
            Ok(r) => {
                if !r.certified {
                    uncertified += 1;
                }
                csv.push_str(&r.csv_line());
                csv.push('\n');
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", path.display());
            }
        }
    }
    print!("{csv}");
    if let Some(p) = report {
        std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if failures > 0 {
        ExitCode::from(1)
    } else if uncertified > 0 {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve { g2o, max_iter, eps, relative_eps, trace, out, report } => run_solve(
            g2o,
            *max_iter,
            *eps,
            *relative_eps,
            trace.as_deref(),
            out.as_deref(),
            report.as_deref(),
        ),
        Command::Cycle { g2o, synth, k, out } => {
            run_cycle(g2o.as_deref(), synth.as_deref(), *k, out.as_deref())
        }
        Command::Certify { g2o, solution, tol } => run_certify(g2o, solution, *tol),
        Command::Spectrum { synth, verify } => run_spectrum(synth, *verify),
        Command::Synth { what } => run_synth(what),
        Command::Experiment { what } => run_experiment(what),
        Command::Bench { dir, report } => run_bench(dir, report.as_deref()),
        Command::Plot { trace, out } => plot::render(trace, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
