//! Property suite for the smallest-eigenpair solver.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rotavg::eigen::{
    dense_spectrum, smallest_eigenpairs_with, EigenOptions, Strategy, SymmetricLinOp,
};
use rotavg::graph::CertificateMatrix;
use rotavg::synth::{generate_graph, GraphSpec};
use rotavg::PairwiseMatrix;

fn certificate_parts(n: usize, p: f64, sigma: f64, seed: u64) -> (rotavg::MeasurementGraph, PairwiseMatrix) {
    let spec = GraphSpec { n, edge_probability: p, sigma, seed };
    let (g, _, _) = generate_graph(&spec).expect("connected draw within retry budget");
    let m = PairwiseMatrix::from_graph(&g);
    (g, m)
}

fn forced(strategy: Strategy) -> EigenOptions {
    EigenOptions { strategy: Some(strategy), ..EigenOptions::default() }
}

fn subspace_cosine(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    // Mean squared cosine of the principal angles between equal-rank spans.
    let w = u.transpose() * v;
    (w.transpose() * &w).trace() / u.ncols() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pairs_have_small_residuals_in_ascending_order(
        n in 4usize..=40,
        p in 0.25f64..0.9,
        sigma in 0.0f64..0.5,
        seed in any::<u64>(),
        k in 1usize..=3,
    ) {
        let (g, m) = certificate_parts(n, p, sigma, seed);
        let lambda = g.lambda_noise_free();
        let cert = CertificateMatrix::new(&lambda, &m);
        let res = smallest_eigenpairs_with(&cert, k, -1e-6, &EigenOptions::default()).unwrap();
        prop_assert_eq!(res.eigenvalues.len(), k);
        for w in res.eigenvalues.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12, "order violated: {} > {}", w[0], w[1]);
        }
        let scale = 1.0 + cert.norm_1();
        for (i, lam) in res.eigenvalues.iter().enumerate() {
            let v = res.eigenvectors.column(i);
            let mut av = vec![0.0; cert.dim()];
            cert.apply_into(v.as_slice(), &mut av);
            let residual = (DMatrix::from_column_slice(cert.dim(), 1, &av)
                - v.clone_owned() * *lam)
                .norm();
            prop_assert!(residual <= 1e-8 * scale, "residual {residual} at scale {scale}");
        }
        // Returned basis is orthonormal.
        let gram = res.eigenvectors.transpose() * &res.eigenvectors;
        prop_assert!((gram - DMatrix::identity(k, k)).norm() < 1e-10);
    }

    #[test]
    fn shift_invert_agrees_with_dense_oracle(
        n in 6usize..=40,
        p in 0.25f64..0.9,
        sigma in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let (g, m) = certificate_parts(n, p, sigma, seed);
        let lambda = g.lambda_noise_free();
        let cert = CertificateMatrix::new(&lambda, &m);
        let sparse = smallest_eigenpairs_with(&cert, 3, -1e-6, &forced(Strategy::ShiftInvert)).unwrap();
        let dense = smallest_eigenpairs_with(&cert, 3, -1e-6, &forced(Strategy::Dense)).unwrap();
        prop_assert_eq!(sparse.strategy, Strategy::ShiftInvert);
        prop_assert_eq!(dense.strategy, Strategy::Dense);
        for (a, b) in sparse.eigenvalues.iter().zip(&dense.eigenvalues) {
            prop_assert!((a - b).abs() < 1e-9, "sparse {a} vs dense {b}");
        }
        // Compare spans, not vectors: eigenvectors are only defined up to
        // rotation inside clustered eigenvalue groups.
        let cos = subspace_cosine(&sparse.eigenvectors, &dense.eigenvectors);
        prop_assert!(cos >= 1.0 - 1e-8, "subspace cosine {cos}");
    }

    #[test]
    fn results_are_deterministic(
        n in 4usize..=30,
        p in 0.25f64..0.9,
        sigma in 0.0f64..0.5,
        seed in any::<u64>(),
        strategy in prop_oneof![Just(Strategy::Dense), Just(Strategy::ShiftInvert)],
    ) {
        let (g, m) = certificate_parts(n, p, sigma, seed);
        let lambda = g.lambda_noise_free();
        let cert = CertificateMatrix::new(&lambda, &m);
        let a = smallest_eigenpairs_with(&cert, 2, -1e-6, &forced(strategy)).unwrap();
        let b = smallest_eigenpairs_with(&cert, 2, -1e-6, &forced(strategy)).unwrap();
        prop_assert_eq!(a.eigenvalues, b.eigenvalues);
        prop_assert_eq!(a.eigenvectors, b.eigenvectors);
    }

    #[test]
    fn full_spectrum_oracle_is_sorted_and_consistent(
        n in 4usize..=25,
        p in 0.25f64..0.9,
        sigma in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let (g, m) = certificate_parts(n, p, sigma, seed);
        let lambda = g.lambda_noise_free();
        let cert = CertificateMatrix::new(&lambda, &m);
        let spectrum = dense_spectrum(&cert);
        prop_assert_eq!(spectrum.len(), cert.dim());
        for w in spectrum.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let smallest = smallest_eigenpairs_with(&cert, 3, -1e-6, &EigenOptions::default()).unwrap();
        for (a, b) in smallest.eigenvalues.iter().zip(&spectrum) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // Trace check ties the spectrum to the assembled operator.
        let trace: f64 = spectrum.iter().sum();
        let lambda_trace: f64 = (0..g.node_count()).map(|i| lambda.block(i).trace()).sum();
        let m_diag_trace = 3.0 * g.node_count() as f64;
        prop_assert!((trace - (lambda_trace - m_diag_trace)).abs() < 1e-8 * (1.0 + trace.abs()));
    }
}
