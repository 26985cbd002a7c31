//! Seeded generators for synthetic problems: perturbed cycles, random graphs
//! binned by algebraic connectivity, grids, and the principal-angle study.
//!
//! All randomness flows through ChaCha12. Identical specs produce
//! bit-identical outputs on one platform, and experiment trials each draw
//! from their own counter-derived stream, so trials are independent and
//! reproducible in isolation.

use crate::cycle::CycleProblem;
use crate::eigen;
use crate::graph::{BlockVector, CertificateMatrix, MeasurementGraph, PairwiseMatrix};
use crate::so3::Rotation;
use crate::solver;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;
use std::io::{self, Write};
use thiserror::Error;

/// RNG identifier recorded in experiment output metadata.
pub const RNG_ALGORITHM: &str = "chacha12/stream-per-trial";

/// Fiedler-value bin edges; the bins are `[0,1)`, `[1,3)`, `[3,10)`, `[10,inf)`.
pub const FIEDLER_BIN_EDGES: [f64; 3] = [1.0, 3.0, 10.0];

/// Edge-probability range of the principal-angle experiment, sampled
/// log-uniformly. At 50 nodes this spans all four Fiedler bins.
const EDGE_PROBABILITY_RANGE: (f64, f64) = (0.07, 0.85);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("no connected graph in {attempts} attempts; edge probability too low")]
    ConnectivityFailure { attempts: usize },
}

/// Perturbed cycle: ground truth rotates about the z axis in `n` even steps.
#[derive(Clone, Copy, Debug)]
pub struct CycleSpec {
    pub n: usize,
    /// Standard deviation of the perturbation angle, radians.
    pub sigma: f64,
    pub seed: u64,
}

/// Perturbed Erdos-Renyi graph with Haar-uniform ground truth.
#[derive(Clone, Copy, Debug)]
pub struct GraphSpec {
    pub n: usize,
    pub edge_probability: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Perturbed 4-neighbor lattice with Haar-uniform ground truth.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub sigma: f64,
    pub seed: u64,
}

fn check_sigma(sigma: f64) -> Result<(), SynthError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SynthError::BadSpec(format!("sigma {sigma} must be >= 0")));
    }
    Ok(())
}

/// Unit vector uniform on the sphere: a normalized standard Gaussian triple.
pub fn random_unit_axis(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Haar-uniform rotation: QR of a Gaussian matrix with the R-diagonal sign
/// fixed, mapped onto the det = +1 component by negating one column.
pub fn haar_rotation(rng: &mut impl Rng) -> Rotation {
    let a = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..3 {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(2).neg_mut();
    }
    Rotation::try_from_matrix(q).expect("QR factor is orthogonal")
}

/// Random perturbation: axis uniform on the sphere, angle `sigma` times a
/// standard normal draw. Exactly the identity when `sigma` is zero (the rng
/// is still advanced, keeping paired streams aligned across noise levels).
pub fn perturbation(rng: &mut impl Rng, sigma: f64) -> Rotation {
    let axis = random_unit_axis(rng);
    let angle = sigma * rng.sample::<f64, _>(StandardNormal);
    Rotation::from_axis_angle(&axis, angle).expect("axis is normalized")
}

/// Generates a perturbed cycle and its ground truth. Ground truth `R_i` is
/// the rotation about z by `2 pi i / n`; the measurement on edge
/// `(i, i + 1)` is `perturbation * R_i R_{i+1}^T`.
pub fn generate_cycle(spec: &CycleSpec) -> Result<(CycleProblem, BlockVector), SynthError> {
    if spec.n < 3 {
        return Err(SynthError::BadSpec(format!("cycle length {} < 3", spec.n)));
    }
    check_sigma(spec.sigma)?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let truth: Vec<Rotation> = (0..n)
        .map(|i| {
            Rotation::from_axis_angle(&Vector3::z(), TAU * i as f64 / n as f64)
                .expect("z axis is unit")
        })
        .collect();
    let measurements = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            perturbation(&mut rng, spec.sigma) * truth[i] * truth[j].transpose()
        })
        .collect();
    let problem = CycleProblem::new(measurements).expect("n >= 3 checked above");
    Ok((problem, BlockVector::from_rotations(&truth)))
}

fn sample_edges(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn measured_graph(
    rng: &mut impl Rng,
    edges: &[(usize, usize)],
    truth: &[Rotation],
    sigma: f64,
) -> (MeasurementGraph, MeasurementGraph) {
    let n = truth.len();
    let mut noisy = MeasurementGraph::new(n);
    let mut noise_free = MeasurementGraph::new(n);
    for &(i, j) in edges {
        let exact = truth[i] * truth[j].transpose();
        let noised = perturbation(rng, sigma) * exact;
        noisy.add_rotation(i, j, noised).expect("edges are simple");
        noise_free.add_rotation(i, j, exact).expect("edges are simple");
    }
    (noisy, noise_free)
}

fn generate_graph_with(
    rng: &mut impl Rng,
    n: usize,
    edge_probability: f64,
    sigma: f64,
) -> Result<(MeasurementGraph, BlockVector, PairwiseMatrix), SynthError> {
    if n < 2 {
        return Err(SynthError::BadSpec(format!("node count {n} < 2")));
    }
    if !(edge_probability > 0.0 && edge_probability <= 1.0) {
        return Err(SynthError::BadSpec(format!(
            "edge probability {edge_probability} outside (0, 1]"
        )));
    }
    check_sigma(sigma)?;
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let edges = sample_edges(rng, n, edge_probability);
        let mut probe = MeasurementGraph::new(n);
        for &(i, j) in &edges {
            probe.add_rotation(i, j, Rotation::identity()).expect("edges are simple");
        }
        if !probe.is_connected() {
            continue;
        }
        let truth: Vec<Rotation> = (0..n).map(|_| haar_rotation(rng)).collect();
        let (noisy, noise_free) = measured_graph(rng, &edges, &truth, sigma);
        return Ok((
            noisy,
            BlockVector::from_rotations(&truth),
            PairwiseMatrix::from_graph(&noise_free),
        ));
    }
    Err(SynthError::ConnectivityFailure { attempts: ATTEMPTS })
}

/// Generates a connected Erdos-Renyi graph with perturbed measurements,
/// returning the graph, the Haar-uniform ground truth, and the noise-free
/// pairwise matrix. Resamples disconnected draws up to 100 times.
pub fn generate_graph(
    spec: &GraphSpec,
) -> Result<(MeasurementGraph, BlockVector, PairwiseMatrix), SynthError> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    generate_graph_with(&mut rng, spec.n, spec.edge_probability, spec.sigma)
}

/// Generates a perturbed rows-by-cols lattice (always connected).
pub fn generate_grid(spec: &GridSpec) -> Result<(MeasurementGraph, BlockVector), SynthError> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows * cols < 2 || rows == 0 || cols == 0 {
        return Err(SynthError::BadSpec(format!("grid {rows}x{cols} too small")));
    }
    check_sigma(spec.sigma)?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                edges.push((id, id + 1));
            }
            if r + 1 < rows {
                edges.push((id, id + cols));
            }
        }
    }
    let truth: Vec<Rotation> = (0..rows * cols).map(|_| haar_rotation(&mut rng)).collect();
    let (noisy, _) = measured_graph(&mut rng, &edges, &truth, spec.sigma);
    Ok((noisy, BlockVector::from_rotations(&truth)))
}

/// Fiedler bin index of an algebraic connectivity value.
pub fn fiedler_bin(rho: f64) -> usize {
    FIEDLER_BIN_EDGES.iter().position(|&e| rho < e).unwrap_or(3)
}

/// Printable label of a Fiedler bin.
pub fn bin_label(bin: usize) -> &'static str {
    ["[0,1)", "[1,3)", "[3,10)", "[10,inf)"][bin]
}

/// One experiment trial.
#[derive(Clone, Copy, Debug)]
pub struct TrialRow {
    pub trial: usize,
    pub n: usize,
    pub sigma: f64,
    pub fiedler: f64,
    pub cosine: f64,
}

/// Aggregated mean cosine of one Fiedler bin at one noise level.
#[derive(Clone, Copy, Debug)]
pub struct BinRow {
    pub bin: usize,
    pub sigma: f64,
    pub mean_cosine: f64,
    pub count: usize,
}

/// Results of the principal-angle study.
#[derive(Clone, Debug)]
pub struct ExperimentTable {
    pub n: usize,
    pub seed: u64,
    pub rows: Vec<TrialRow>,
    /// Trials whose graph generation failed (counted, not fatal).
    pub failed_trials: usize,
}

impl ExperimentTable {
    /// Bin-level aggregation, ordered by noise level then bin; empty bins
    /// are omitted.
    pub fn aggregate(&self) -> Vec<BinRow> {
        let mut sigmas: Vec<f64> = Vec::new();
        for row in &self.rows {
            if !sigmas.iter().any(|&s| s == row.sigma) {
                sigmas.push(row.sigma);
            }
        }
        let mut out = Vec::new();
        for &sigma in &sigmas {
            for bin in 0..4 {
                let cosines: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.sigma == sigma && fiedler_bin(r.fiedler) == bin)
                    .map(|r| r.cosine)
                    .collect();
                if cosines.is_empty() {
                    continue;
                }
                out.push(BinRow {
                    bin,
                    sigma,
                    mean_cosine: cosines.iter().sum::<f64>() / cosines.len() as f64,
                    count: cosines.len(),
                });
            }
        }
        out
    }

    /// Per-trial CSV: `trial,n,sigma,fiedler,cosine`.
    pub fn write_trials_csv<W: Write + ?Sized>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# rng={} seed={}", RNG_ALGORITHM, self.seed)?;
        writeln!(w, "trial,n,sigma,fiedler,cosine")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.9e},{:.9e}",
                r.trial, r.n, r.sigma, r.fiedler, r.cosine
            )?;
        }
        Ok(())
    }

    /// Aggregated CSV: `fiedler_bin,sigma,mean_cosine,count`.
    pub fn write_aggregate_csv<W: Write + ?Sized>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# rng={} seed={}", RNG_ALGORITHM, self.seed)?;
        writeln!(w, "fiedler_bin,sigma,mean_cosine,count")?;
        for r in self.aggregate() {
            writeln!(
                w,
                "{},{},{:.9e},{}",
                bin_label(r.bin),
                r.sigma,
                r.mean_cosine,
                r.count
            )?;
        }
        Ok(())
    }
}

/// Measures how close the bottom eigenspace of the first-iteration
/// certificate matrix stays to the ground-truth subspace as noise grows.
///
/// Each trial draws its own ChaCha12 stream from `(seed, trial index)`, an
/// edge probability log-uniform in `[0.07, 0.85]`, a connected graph, and
/// perturbed measurements at each noise level. The trial records the cosine
/// of the principal angle between the three smallest eigenvectors of
/// `Lambda_nf - M` (noisy) and the kernel basis of the noise-free matrix,
/// which is the ground truth scaled by `1 / sqrt(n)`. Trial indices restart
/// at each noise level, so noise levels see the same family of graphs.
pub fn principal_angle_experiment(
    n: usize,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ExperimentTable, SynthError> {
    if trials == 0 {
        return Err(SynthError::BadSpec("at least one trial required".into()));
    }
    if sigmas.is_empty() {
        return Err(SynthError::BadSpec("at least one noise level required".into()));
    }
    for &s in sigmas {
        check_sigma(s)?;
    }
    let (p_lo, p_hi) = EDGE_PROBABILITY_RANGE;
    let mut rows = Vec::with_capacity(trials * sigmas.len());
    let mut failed_trials = 0;
    for &sigma in sigmas {
        for trial in 0..trials {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let p = (p_lo.ln() + rng.random::<f64>() * (p_hi.ln() - p_lo.ln())).exp();
            let (graph, truth, _) = match generate_graph_with(&mut rng, n, p, sigma) {
                Ok(out) => out,
                Err(SynthError::ConnectivityFailure { .. }) => {
                    failed_trials += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let fiedler = graph.fiedler_value().expect("generated graph has 2+ nodes");
            let lambda = graph.lambda_noise_free();
            let m = PairwiseMatrix::from_graph(&graph);
            let cert = CertificateMatrix::new(&lambda, &m);
            let bottom = eigen::smallest_eigenpairs(&cert, 3, -1e-6)
                .expect("first-iteration certificate matrix is well posed");
            let kernel = truth.to_matrix() / (n as f64).sqrt();
            let cosine = solver::principal_angle_cosine(&bottom.eigenvectors, &kernel)
                .expect("bases are orthonormal");
            rows.push(TrialRow { trial, n, sigma, fiedler, cosine });
        }
    }
    Ok(ExperimentTable { n, seed, rows, failed_trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::solve_cycle;
    use crate::so3::angle_of;
    use crate::solver::{gauge_aligned_angles, solve, SolverConfig};
    use std::f64::consts::PI;

    #[test]
    fn noise_free_cycle_is_consistent() {
        let (p, _) = generate_cycle(&CycleSpec { n: 12, sigma: 0.0, seed: 1 }).unwrap();
        assert!(angle_of(&p.cycle_error()) < 1e-12);
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = CycleSpec { n: 9, sigma: 0.3, seed: 42 };
        let (a, ta) = generate_cycle(&spec).unwrap();
        let (b, tb) = generate_cycle(&spec).unwrap();
        for (x, y) in a.measurements().iter().zip(b.measurements()) {
            assert_eq!(x.matrix(), y.matrix());
        }
        assert_eq!(ta.to_matrix(), tb.to_matrix());

        let gspec = GraphSpec { n: 15, edge_probability: 0.4, sigma: 0.2, seed: 7 };
        let (g1, t1, _) = generate_graph(&gspec).unwrap();
        let (g2, t2, _) = generate_graph(&gspec).unwrap();
        assert_eq!(g1.edge_count(), g2.edge_count());
        assert_eq!(t1.to_matrix(), t2.to_matrix());
        for i in 0..15 {
            for j in (i + 1)..15 {
                match (g1.measurement(i, j), g2.measurement(i, j)) {
                    (Some(x), Some(y)) => assert_eq!(x.matrix(), y.matrix()),
                    (None, None) => {}
                    _ => panic!("edge sets differ at ({i}, {j})"),
                }
            }
        }
    }

    #[test]
    fn generated_measurements_are_valid_rotations() {
        let (p, _) = generate_cycle(&CycleSpec { n: 30, sigma: 0.8, seed: 3 }).unwrap();
        for m in p.measurements() {
            Rotation::try_from_matrix(*m.matrix()).unwrap();
        }
    }

    #[test]
    fn mean_cycle_error_rate_is_moderate() {
        // Statistical sanity via the closed form: noise accumulates to a
        // nonzero cycle error well short of the wrap-around limit.
        let mut total = 0.0;
        for seed in 0..20 {
            let (p, _) = generate_cycle(&CycleSpec { n: 50, sigma: 0.2, seed }).unwrap();
            let s = solve_cycle(&p).unwrap();
            total += s.cycle_angle / 50.0;
        }
        let mean = total / 20.0;
        assert!(mean > 0.0);
        assert!(mean < PI / 50.0);
    }

    #[test]
    fn full_probability_yields_complete_graph() {
        let (g, _, _) =
            generate_graph(&GraphSpec { n: 12, edge_probability: 1.0, sigma: 0.1, seed: 4 })
                .unwrap();
        assert_eq!(g.edge_count(), 12 * 11 / 2);
    }

    #[test]
    fn hopeless_probability_reports_connectivity_failure() {
        let err =
            generate_graph(&GraphSpec { n: 50, edge_probability: 0.001, sigma: 0.0, seed: 5 })
                .unwrap_err();
        assert!(matches!(err, SynthError::ConnectivityFailure { attempts: 100 }));
    }

    #[test]
    fn noise_free_graph_eigenspaces_coincide() {
        let (g, truth, m_nf) =
            generate_graph(&GraphSpec { n: 20, edge_probability: 0.3, sigma: 0.0, seed: 6 })
                .unwrap();
        let lambda = g.lambda_noise_free();
        let m = PairwiseMatrix::from_graph(&g);
        let noisy = eigen::smallest_eigenpairs(&CertificateMatrix::new(&lambda, &m), 3, -1e-6)
            .unwrap();
        let clean = eigen::smallest_eigenpairs(&CertificateMatrix::new(&lambda, &m_nf), 3, -1e-6)
            .unwrap();
        let c = solver::principal_angle_cosine(&noisy.eigenvectors, &clean.eigenvectors).unwrap();
        assert!((c - 1.0).abs() < 1e-10, "cosine {c}");
        let k = solver::principal_angle_cosine(
            &clean.eigenvectors,
            &(truth.to_matrix() / 20f64.sqrt()),
        )
        .unwrap();
        assert!((k - 1.0).abs() < 1e-10, "kernel cosine {k}");
    }

    #[test]
    fn noise_free_problems_recover_ground_truth() {
        let (p, truth) = generate_cycle(&CycleSpec { n: 25, sigma: 0.0, seed: 8 }).unwrap();
        let s = solve_cycle(&p).unwrap();
        let angles = gauge_aligned_angles(&s.rotations, &truth.rotations().unwrap()).unwrap();
        assert!(angles.iter().all(|&a| a < 1e-9), "cycle angles {angles:?}");

        let (g, gt, _) =
            generate_graph(&GraphSpec { n: 18, edge_probability: 0.35, sigma: 0.0, seed: 9 })
                .unwrap();
        let report = solve(&g, &SolverConfig::default()).unwrap();
        let angles = gauge_aligned_angles(&report.rotations, &gt.rotations().unwrap()).unwrap();
        assert!(angles.iter().all(|&a| a < 1e-9), "graph angles {angles:?}");
    }

    #[test]
    fn grid_has_lattice_structure() {
        let (g, _) = generate_grid(&GridSpec { rows: 4, cols: 6, sigma: 0.1, seed: 10 }).unwrap();
        assert_eq!(g.node_count(), 24);
        assert_eq!(g.edge_count(), 4 * 5 + 6 * 3);
        assert!(g.is_connected());
        assert!(g.measurement(0, 1).is_some());
        assert!(g.measurement(0, 6).is_some());
        assert!(g.measurement(0, 7).is_none());
    }

    #[test]
    fn haar_samples_look_uniform() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut trace_sum = 0.0;
        for _ in 0..20_000 {
            let r = haar_rotation(&mut rng);
            trace_sum += r.trace();
        }
        // The trace of a Haar rotation has zero mean (and variance 1, so the
        // 20k-sample mean is a ~7 sigma bound).
        assert!((trace_sum / 20_000.0).abs() < 0.05);
    }

    #[test]
    fn experiment_is_reproducible_and_clean_at_zero_noise() {
        let a = principal_angle_experiment(16, &[0.0], 8, 12).unwrap();
        let b = principal_angle_experiment(16, &[0.0], 8, 12).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.fiedler, y.fiedler);
            assert_eq!(x.cosine, y.cosine);
        }
        for r in &a.rows {
            assert!((r.cosine - 1.0).abs() < 1e-10, "cosine {}", r.cosine);
        }
        // Sub-threshold edge probabilities may exhaust their resampling
        // budget at small n; those trials are counted, not fatal.
        assert_eq!(a.rows.len() + a.failed_trials, 8);
        assert_eq!(a.failed_trials, b.failed_trials);
    }

    #[test]
    fn experiment_cosines_stay_high_under_noise() {
        let table = principal_angle_experiment(30, &[0.3], 40, 13).unwrap();
        assert!(table.rows.len() + table.failed_trials == 40);
        for r in &table.rows {
            assert!(r.cosine > 0.0 && r.cosine <= 1.0 + 1e-12);
        }
        let agg = table.aggregate();
        assert!(!agg.is_empty());
        for b in &agg {
            assert!(b.mean_cosine > 0.8, "bin {} mean {}", bin_label(b.bin), b.mean_cosine);
            assert!(b.count > 0);
        }
    }

    #[test]
    fn csv_outputs_are_stable() {
        let table = principal_angle_experiment(12, &[0.0, 0.2], 3, 14).unwrap();
        let mut trials = Vec::new();
        table.write_trials_csv(&mut trials).unwrap();
        let text = String::from_utf8(trials).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            format!("# rng={} seed=14", RNG_ALGORITHM)
        );
        assert_eq!(lines.next().unwrap(), "trial,n,sigma,fiedler,cosine");
        assert_eq!(text.lines().count(), 2 + table.rows.len());

        let mut agg = Vec::new();
        table.write_aggregate_csv(&mut agg).unwrap();
        let text = String::from_utf8(agg).unwrap();
        assert!(text.lines().nth(1).unwrap() == "fiedler_bin,sigma,mean_cosine,count");
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(generate_cycle(&CycleSpec { n: 2, sigma: 0.0, seed: 0 }).is_err());
        assert!(generate_cycle(&CycleSpec { n: 5, sigma: -0.1, seed: 0 }).is_err());
        assert!(
            generate_graph(&GraphSpec { n: 5, edge_probability: 0.0, sigma: 0.1, seed: 0 })
                .is_err()
        );
        assert!(
            generate_graph(&GraphSpec { n: 5, edge_probability: 1.5, sigma: 0.1, seed: 0 })
                .is_err()
        );
        assert!(generate_grid(&GridSpec { rows: 1, cols: 1, sigma: 0.0, seed: 0 }).is_err());
        assert!(principal_angle_experiment(10, &[0.1], 0, 0).is_err());
        assert!(principal_angle_experiment(10, &[], 5, 0).is_err());
    }
}
