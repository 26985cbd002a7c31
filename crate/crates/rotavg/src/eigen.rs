//! Smallest-eigenpair solver for symmetric operators.
//!
//! Small problems are assembled densely and handed to a direct symmetric
//! eigendecomposition. Large problems use shift-invert block Lanczos: the
//! operator is factorized once as `L D L^T` near the requested shift and the
//! Krylov iteration runs on the inverse, so eigenvalues nearest the shift
//! converge first. If the factorization reports negative pivots (eigenvalues
//! below the shift), the shift is lowered by inertia-guided bisection until
//! `A - sigma I` is positive definite, which keeps the smallest eigenvalues
//! the dominant ones of the inverse.
//!
//! Reported eigenvalues are Rayleigh quotients of the original operator and
//! residual norms `||A v - lambda v||_2` are always measured against the
//! original operator, so an inaccurate factorization can slow convergence but
//! not corrupt results.

mod lanczos;
mod sparse;

use nalgebra::DMatrix;
use thiserror::Error;

/// Symmetric linear operator, addressed both matrix-free (`apply_into`) and
/// by explicit sparse structure (`upper_triplets`).
pub trait SymmetricLinOp {
    fn dim(&self) -> usize;

    /// `y = A x`. `y` is overwritten.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// Entries of the upper triangle (`row <= col`), diagonal included.
    /// Duplicates are allowed and summed by consumers.
    fn upper_triplets(&self) -> Vec<(usize, usize, f64)>;

    /// Matrix 1-norm, used to scale convergence tolerances.
    fn norm_1(&self) -> f64 {
        let mut col_sums = vec![0.0f64; self.dim()];
        for (i, j, v) in self.upper_triplets() {
            col_sums[j] += v.abs();
            if i != j {
                col_sums[i] += v.abs();
            }
        }
        col_sums.into_iter().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Dense,
    ShiftInvert,
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Residual tolerance relative to the operator 1-norm.
    pub tol: f64,
    /// Maximum Krylov subspace dimension; 0 selects `max(2k + 10, 20)`.
    pub max_subspace: usize,
    /// Maximum number of restarts of the Lanczos iteration.
    pub max_restarts: usize,
    /// Problems of dimension at most this are solved densely.
    pub dense_cutoff: usize,
    /// Seed for the deterministic start block.
    pub seed: u64,
    /// Optional warm-start subspace (`dim x c`); extra columns are ignored.
    pub start: Option<DMatrix<f64>>,
    /// Overrides the dimension-based strategy choice.
    pub strategy: Option<Strategy>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-14,
            max_subspace: 0,
            max_restarts: 300,
            dense_cutoff: 600,
            seed: 0x726f_7461_7667,
            start: None,
            strategy: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Requested eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns, orthonormal within 1e-10.
    pub eigenvectors: DMatrix<f64>,
    /// Residual norms `||A v - lambda v||_2` per pair.
    pub residual_norms: Vec<f64>,
    /// Shift actually used by the factorization (dense path: the request).
    pub shift_used: f64,
    /// Restart count of the Lanczos iteration (dense path: 0).
    pub restarts: usize,
    pub strategy: Strategy,
}

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("requested {k} eigenpairs; supported range is 1..=6 with k <= dim (dim {dim})")]
    BadPairCount { k: usize, dim: usize },
    #[error("operator dimension is zero")]
    EmptyOperator,
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error(
        "no convergence after {restarts} restarts; worst residual {worst_residual:.3e} (tol {tol:.3e})"
    )]
    NoConvergence {
        restarts: usize,
        worst_residual: f64,
        tol: f64,
    },
}

/// The `k` smallest eigenpairs with default options.
pub fn smallest_eigenpairs(
    op: &dyn SymmetricLinOp,
    k: usize,
    shift: f64,
) -> Result<EigenResult, EigenError> {
    smallest_eigenpairs_with(op, k, shift, &EigenOptions::default())
}

/// The `k` smallest eigenpairs (ascending). `shift` seeds the shift-invert
/// transform and should sit just below the target eigenvalues.
pub fn smallest_eigenpairs_with(
    op: &dyn SymmetricLinOp,
    k: usize,
    shift: f64,
    opts: &EigenOptions,
) -> Result<EigenResult, EigenError> {
    let dim = op.dim();
    if dim == 0 {
        return Err(EigenError::EmptyOperator);
    }
    if k == 0 || k > 6 || k > dim {
        return Err(EigenError::BadPairCount { k, dim });
    }
    let strategy = opts.strategy.unwrap_or(if dim <= opts.dense_cutoff {
        Strategy::Dense
    } else {
        Strategy::ShiftInvert
    });
    match strategy {
        Strategy::Dense => dense_smallest(op, k, shift),
        Strategy::ShiftInvert => lanczos::shift_invert_smallest(op, k, shift, opts),
    }
}

/// Smallest eigenvalue with the default shift of the solver pipeline.
pub fn min_eigenvalue(op: &dyn SymmetricLinOp) -> Result<f64, EigenError> {
    min_eigenvalue_with(op, &EigenOptions::default())
}

pub fn min_eigenvalue_with(op: &dyn SymmetricLinOp, opts: &EigenOptions) -> Result<f64, EigenError> {
    Ok(smallest_eigenpairs_with(op, 1, -1e-6, opts)?.eigenvalues[0])
}

/// Full spectrum, ascending, via dense eigendecomposition. An oracle for
/// small operators; cost grows cubically with the dimension.
pub fn dense_spectrum(op: &dyn SymmetricLinOp) -> Vec<f64> {
    let mut ev: Vec<f64> = assemble_dense(op)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("symmetric spectra are finite"));
    ev
}

/// Assembles the operator densely from its triplets.
pub(crate) fn assemble_dense(op: &dyn SymmetricLinOp) -> DMatrix<f64> {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    for (i, j, v) in op.upper_triplets() {
        m[(i, j)] += v;
        if i != j {
            m[(j, i)] += v;
        }
    }
    m
}

fn dense_smallest(op: &dyn SymmetricLinOp, k: usize, shift: f64) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    let m = assemble_dense(op);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenvectors = DMatrix::zeros(n, k);
    let mut residual_norms = Vec::with_capacity(k);
    let mut av = vec![0.0; n];
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx).into_owned();
        let v = &v / v.norm();
        op.apply_into(v.as_slice(), &mut av);
        // Rayleigh quotient of the exact operator is more accurate near zero
        // than the decomposition's eigenvalue.
        let lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
        let resid: f64 = v
            .iter()
            .zip(&av)
            .map(|(x, y)| (y - lambda * x) * (y - lambda * x))
            .sum::<f64>()
            .sqrt();
        eigenvalues.push(lambda);
        residual_norms.push(resid);
        eigenvectors.set_column(c, &v);
    }
    // Rayleigh refinement may reorder nearly degenerate pairs.
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
    let eigenvalues_sorted: Vec<f64> = perm.iter().map(|&i| eigenvalues[i]).collect();
    let residuals_sorted: Vec<f64> = perm.iter().map(|&i| residual_norms[i]).collect();
    let mut vectors_sorted = DMatrix::zeros(n, k);
    for (c, &i) in perm.iter().enumerate() {
        vectors_sorted.set_column(c, &eigenvectors.column(i).into_owned());
    }
    Ok(EigenResult {
        eigenvalues: eigenvalues_sorted,
        eigenvectors: vectors_sorted,
        residual_norms: residuals_sorted,
        shift_used: shift,
        restarts: 0,
        strategy: Strategy::Dense,
    })
}
