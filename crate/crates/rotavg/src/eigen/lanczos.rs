//! Shift-invert block Lanczos with full reorthogonalization and thick
//! restarts.
//!
//! The basis is expanded block by block with `(A - sigma I)^{-1}` applies.
//! Every basis vector receives exactly one inverse apply, which fills the
//! projected matrix `H = V^T (A - sigma I)^{-1} V` by symmetric bordering.
//! Rayleigh-Ritz on `H` yields candidate pairs; convergence is judged by
//! residuals of the original operator, so factorization error cannot leak
//! into reported results. On entry the factorization has no negative pivots
//! (the caller bisects the shift below the spectrum first), hence the
//! smallest eigenvalues of `A` are the largest of the inverse.

use super::sparse::{factor_shifted, gershgorin_lower, rcm_order, Ldlt};
use super::{EigenError, EigenOptions, EigenResult, Strategy, SymmetricLinOp};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub(crate) fn shift_invert_smallest(
    op: &dyn SymmetricLinOp,
    k: usize,
    shift: f64,
    opts: &EigenOptions,
) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    let triplets = op.upper_triplets();
    let perm = rcm_order(n, &triplets);

    let mut sigma = shift;
    let mut fact = match factor_shifted(n, &triplets, sigma, &perm) {
        Ok(f) => f,
        Err(_) => {
            // The shift landed on an eigenvalue; a tiny perturbation moves off
            // the singularity.
            sigma -= 1e-8;
            factor_shifted(n, &triplets, sigma, &perm).map_err(EigenError::Factorization)?
        }
    };

    if fact.negative_pivots > 0 {
        // Eigenvalues below the shift. Bisect on the inertia to place the
        // shift just below lambda_min, where the smallest eigenvalues are
        // again the dominant ones of the inverse.
        let mut lo = gershgorin_lower(n, &triplets) - 1.0;
        let mut hi = sigma;
        let mut fact_lo =
            factor_shifted(n, &triplets, lo, &perm).map_err(EigenError::Factorization)?;
        debug_assert_eq!(fact_lo.negative_pivots, 0);
        for _ in 0..60 {
            if hi - lo <= 1e-3 * (1.0 + lo.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match factor_shifted(n, &triplets, mid, &perm) {
                Ok(f) if f.negative_pivots == 0 => {
                    lo = mid;
                    fact_lo = f;
                }
                Ok(_) => hi = mid,
                Err(_) => hi = mid - 1e-8,
            }
        }
        sigma = lo;
        fact = fact_lo;
    }

    lanczos(op, &fact, sigma, k, opts)
}

fn lanczos(
    op: &dyn SymmetricLinOp,
    fact: &Ldlt,
    sigma: f64,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    let block = k;
    let smax = if opts.max_subspace == 0 {
        (2 * k + 10).max(20)
    } else {
        opts.max_subspace.max(k + 2)
    }
    .min(n);
    let scale = op.norm_1().max(1.0);
    let tol_abs = opts.tol * scale;
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);

    let mut v_basis: Vec<DVector<f64>> = Vec::with_capacity(smax);
    let mut h = DMatrix::<f64>::zeros(smax, smax);

    // Initial block: warm-start columns first, random fill for the rest.
    let mut cur: Vec<DVector<f64>> = Vec::with_capacity(block);
    if let Some(start) = &opts.start {
        for c in 0..start.ncols().min(block) {
            cur.push(start.column(c).into_owned());
        }
    }
    cur = orthonormalize_block(cur, &v_basis, block, n, &mut rng);

    let mut restarts = 0usize;
    let mut worst_residual = f64::INFINITY;
    loop {
        while v_basis.len() < smax {
            let take = cur.len().min(smax - v_basis.len());
            let base = v_basis.len();
            for v in cur.drain(..take) {
                v_basis.push(v);
            }
            cur.clear();

            // Inverse applies for the new columns; H grows by a symmetric
            // border per column.
            let mut residual_block: Vec<DVector<f64>> = Vec::with_capacity(take);
            for c in base..base + take {
                let w = DVector::from_vec(fact.solve(v_basis[c].as_slice()));
                for (i, vi) in v_basis.iter().enumerate().take(c + 1) {
                    let hv = vi.dot(&w);
                    h[(i, c)] = hv;
                    h[(c, i)] = hv;
                }
                residual_block.push(w);
            }
            cur = orthonormalize_block(residual_block, &v_basis, block, n, &mut rng);

            // Rayleigh-Ritz on the current subspace.
            let s = v_basis.len();
            let hs = h.view((0, 0), (s, s)).into_owned();
            let eig = hs.symmetric_eigen();
            let mut order: Vec<usize> = (0..s).collect();
            // Largest theta of the inverse <=> smallest eigenvalues of A.
            order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

            let mut pairs: Vec<(f64, DVector<f64>, f64)> = Vec::with_capacity(k);
            let mut av = vec![0.0; n];
            for &idx in order.iter().take(k) {
                let y = eig.eigenvectors.column(idx);
                let mut x = DVector::zeros(n);
                for (j, vj) in v_basis.iter().enumerate() {
                    x.axpy(y[j], vj, 1.0);
                }
                let norm = x.norm();
                if norm == 0.0 {
                    continue;
                }
                x /= norm;
                op.apply_into(x.as_slice(), &mut av);
                let lambda: f64 = x.iter().zip(&av).map(|(a, b)| a * b).sum();
                let resid: f64 = x
                    .iter()
                    .zip(&av)
                    .map(|(a, b)| (b - lambda * a) * (b - lambda * a))
                    .sum::<f64>()
                    .sqrt();
                pairs.push((lambda, x, resid));
            }
            worst_residual = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
            if pairs.len() == k && pairs.iter().all(|p| p.2 <= tol_abs) {
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                return Ok(assemble(pairs, n, k, sigma, restarts));
            }
        }

        restarts += 1;
        if restarts > opts.max_restarts {
            return Err(EigenError::NoConvergence {
                restarts: restarts - 1,
                worst_residual,
                tol: tol_abs,
            });
        }

        // Thick restart: keep the best Ritz vectors and rebuild the projected
        // matrix from fresh inverse applies.
        let s = v_basis.len();
        let hs = h.view((0, 0), (s, s)).into_owned();
        let eig = hs.symmetric_eigen();
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let keep = (k + block).min(smax.saturating_sub(block)).max(k);
        let mut kept: Vec<DVector<f64>> = Vec::with_capacity(keep);
        for &idx in order.iter().take(keep) {
            let y = eig.eigenvectors.column(idx);
            let mut x = DVector::zeros(n);
            for (j, vj) in v_basis.iter().enumerate() {
                x.axpy(y[j], vj, 1.0);
            }
            kept.push(x);
        }
        v_basis.clear();
        h.fill(0.0);
        cur = orthonormalize_block(kept, &v_basis, keep, n, &mut rng);
    }
}

fn assemble(
    pairs: Vec<(f64, DVector<f64>, f64)>,
    n: usize,
    k: usize,
    sigma: f64,
    restarts: usize,
) -> EigenResult {
    let mut eigenvectors = DMatrix::zeros(n, k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut residual_norms = Vec::with_capacity(k);
    for (c, (lambda, x, resid)) in pairs.into_iter().enumerate() {
        eigenvectors.set_column(c, &x);
        eigenvalues.push(lambda);
        residual_norms.push(resid);
    }
    EigenResult {
        eigenvalues,
        eigenvectors,
        residual_norms,
        shift_used: sigma,
        restarts,
        strategy: Strategy::ShiftInvert,
    }
}

/// Two-pass modified Gram-Schmidt of `candidates` against `against` and the
/// already accepted vectors; collapsed directions are replaced by random
/// ones, and the block is padded to `want` vectors.
fn orthonormalize_block(
    candidates: Vec<DVector<f64>>,
    against: &[DVector<f64>],
    want: usize,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<DVector<f64>> {
    let mut queue: std::collections::VecDeque<DVector<f64>> = candidates.into();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(want);
    let mut substitutions = 0usize;
    while accepted.len() < want {
        let mut v = match queue.pop_front() {
            Some(v) => v,
            None => {
                substitutions += 1;
                if substitutions > 50 {
                    break;
                }
                DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
            }
        };
        let pre = v.norm();
        if pre == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for u in against.iter().chain(accepted.iter()) {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let post = v.norm();
        if post > 1e-8 * pre && post > 0.0 {
            accepted.push(v / post);
        }
    }
    accepted
}
