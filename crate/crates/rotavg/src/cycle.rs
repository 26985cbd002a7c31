//! Closed-form, globally optimal rotation averaging on cycle graphs.
//!
//! On a cycle the whole problem collapses into the cycle error
//! `E = M_01 M_12 ... M_{n-1,0}`, the product of the measurements around the
//! loop. Every stationary point of the chordal cost corresponds to an n-th
//! root `E_k` of `E` (all sharing the logarithm axis of `E`, with angles
//! `angle(E)/n - 2 pi k / n`): spreading the root evenly around the cycle,
//!
//! `R_i = (M_01 ... M_{i-1,i})^T E_k^i`,
//!
//! leaves every edge with the same residual rotation (a conjugate of `E_k`),
//! so the cost obeys `f_k = -3n - 2n trace(E_k)`. The root with the smallest
//! angle magnitude, `k = 0`, is the global optimum.
//!
//! A change of basis `U_i = (M_01 ... M_{i-1,i})^T` compresses the pairwise
//! matrix of the cycle into identity blocks on the super/subdiagonal and the
//! corner blocks `E^T` / `E`, which makes the full spectrum of the pairwise
//! matrix available in closed form.

use crate::graph::{GraphError, MeasurementGraph};
use crate::so3::{angle_of, exp_axis_angle, nth_roots, AxisAngle, Rotation, So3Error};
use nalgebra::Vector3;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("a cycle needs at least 3 nodes, got {n}")]
    TooShort { n: usize },
    #[error("graph is not a simple cycle: {reason}")]
    NotACycle { reason: String },
    #[error("stationary point index {k} out of range for cycle length {n}")]
    BadRootIndex { k: usize, n: usize },
    #[error("expected {expected} rotations, got {got}")]
    WrongRotationCount { expected: usize, got: usize },
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Rotation averaging problem on a simple cycle. `measurements[i]` is the
/// relative rotation on the edge from position `i` to position `i + 1`
/// (wrapping at the end).
#[derive(Clone, Debug)]
pub struct CycleProblem {
    measurements: Vec<Rotation>,
    nodes: Vec<usize>,
}

/// A stationary point of the cycle problem.
#[derive(Clone, Debug)]
pub struct CycleSolution {
    /// Solution rotations per cycle position, anchored with the identity at
    /// position 0.
    pub rotations: Vec<Rotation>,
    /// Root index; 0 is the global optimum.
    pub k: usize,
    /// True exactly for root 0.
    pub is_global: bool,
    /// Cost from the closed form `-3n - 2n (1 + 2 cos(root_angle))`.
    pub cost: f64,
    /// Signed angle of the root `E_k` about the shared axis.
    pub root_angle: f64,
    /// Angle of the cycle error `E`, in `[0, pi]`.
    pub cycle_angle: f64,
    /// Logarithm axis of the cycle error.
    pub axis: Vector3<f64>,
}

/// Result of checking the change-of-basis structure of the pairwise matrix.
#[derive(Clone, Debug)]
pub struct BasisCheck {
    pub passed: bool,
    /// Largest absolute deviation from the predicted block structure.
    pub max_violation: f64,
    /// Position of the worst block.
    pub worst_block: (usize, usize),
}

impl CycleProblem {
    pub fn new(measurements: Vec<Rotation>) -> Result<Self, CycleError> {
        let n = measurements.len();
        if n < 3 {
            return Err(CycleError::TooShort { n });
        }
        let nodes = (0..n).collect();
        Ok(CycleProblem { measurements, nodes })
    }

    /// Builds a cycle problem from a graph that must be a simple cycle:
    /// connected, every node of degree 2, as many edges as nodes. The cycle
    /// is traversed from node 0 towards its smaller neighbor.
    pub fn from_graph(g: &MeasurementGraph) -> Result<Self, CycleError> {
        let n = g.node_count();
        if n < 3 {
            return Err(CycleError::TooShort { n });
        }
        if g.edge_count() != n {
            return Err(CycleError::NotACycle {
                reason: format!("{} edges for {} nodes", g.edge_count(), n),
            });
        }
        if let Some((node, d)) = g.degrees().into_iter().enumerate().find(|&(_, d)| d != 2) {
            return Err(CycleError::NotACycle {
                reason: format!("node {node} has degree {d}"),
            });
        }
        if !g.is_connected() {
            return Err(CycleError::NotACycle {
                reason: "graph is disconnected".into(),
            });
        }
        let adj = g.adjacency();
        let mut nodes = Vec::with_capacity(n);
        let mut prev = usize::MAX;
        let mut cur = 0usize;
        for _ in 0..n {
            nodes.push(cur);
            let next = adj[cur]
                .iter()
                .copied()
                .filter(|&v| v != prev)
                .min()
                .expect("degree-2 node has an onward neighbor");
            prev = cur;
            cur = next;
        }
        let measurements = (0..n)
            .map(|i| {
                g.measurement(nodes[i], nodes[(i + 1) % n])
                    .expect("consecutive cycle nodes share an edge")
            })
            .collect();
        Ok(CycleProblem { measurements, nodes })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn measurements(&self) -> &[Rotation] {
        &self.measurements
    }

    /// Graph node id at each cycle position (identity mapping for problems
    /// built directly from measurements).
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// The measurement graph of this cycle.
    pub fn to_graph(&self) -> MeasurementGraph {
        let n = self.len();
        let max_node = self.nodes.iter().copied().max().unwrap_or(0);
        let mut g = MeasurementGraph::new(max_node + 1);
        for i in 0..n {
            g.add_rotation(self.nodes[i], self.nodes[(i + 1) % n], self.measurements[i])
                .expect("cycle edges are simple");
        }
        g
    }

    /// Cycle error `E`: the left-to-right product of the measurements around
    /// the loop.
    pub fn cycle_error(&self) -> Rotation {
        self.measurements
            .iter()
            .fold(Rotation::identity(), |acc, m| acc * *m)
    }

    /// The `k`-th stationary point. Root 0 is the global optimum.
    pub fn stationary_point(&self, k: usize) -> Result<CycleSolution, CycleError> {
        let n = self.len();
        if k >= n {
            return Err(CycleError::BadRootIndex { k, n });
        }
        let e = self.cycle_error();
        let roots = nth_roots(&e, n)?;
        let root_angle = roots.root_angle(k);
        let axis = *roots.axis();
        let mut rotations = Vec::with_capacity(n);
        let mut prefix = Rotation::identity();
        for i in 0..n {
            // Powers of the root through the exponential map rather than
            // repeated products, so long cycles accumulate no drift.
            let power = exp_axis_angle(
                &AxisAngle::new(axis, i as f64 * root_angle).expect("root axis is unit"),
            );
            rotations.push(prefix.transpose() * power);
            if i + 1 < n {
                prefix = prefix * self.measurements[i];
            }
        }
        let nf = n as f64;
        let cost = -3.0 * nf - 2.0 * nf * (1.0 + 2.0 * root_angle.cos());
        Ok(CycleSolution {
            rotations,
            k,
            is_global: k == 0,
            cost,
            root_angle,
            cycle_angle: roots.base_angle(),
            axis,
        })
    }

    /// Per-edge residual angles `angle(M_{i,i+1} R_{i+1} R_i^T)` of a
    /// candidate solution. At the `k`-th stationary point every edge carries
    /// the same residual, a conjugate of `E_k`.
    pub fn residual_angles(&self, rotations: &[Rotation]) -> Result<Vec<f64>, CycleError> {
        let n = self.len();
        if rotations.len() != n {
            return Err(CycleError::WrongRotationCount { expected: n, got: rotations.len() });
        }
        Ok((0..n)
            .map(|i| {
                let j = (i + 1) % n;
                let residual = self.measurements[i] * rotations[j] * rotations[i].transpose();
                angle_of(&residual)
            })
            .collect())
    }

    /// Change-of-basis blocks `U_i = (M_01 ... M_{i-1,i})^T`, with `U_0 = I`.
    /// Conjugating the pairwise matrix by `diag(U_i)` turns every cycle edge
    /// block into the identity except the corner, which becomes the cycle
    /// error.
    pub fn change_of_basis(&self) -> Vec<Rotation> {
        let n = self.len();
        let mut u = Vec::with_capacity(n);
        let mut prefix = Rotation::identity();
        for i in 0..n {
            u.push(prefix.transpose());
            if i + 1 < n {
                prefix = prefix * self.measurements[i];
            }
        }
        u
    }

    /// Densifies the pairwise matrix, applies the change of basis, and checks
    /// the predicted structure: identity diagonal and cycle-edge blocks, the
    /// cycle error in the corner blocks, zero elsewhere.
    pub fn transformed_matrix_check(&self, tol: f64) -> BasisCheck {
        self.check_with_basis(&self.change_of_basis(), tol)
    }

    pub(crate) fn check_with_basis(&self, u: &[Rotation], tol: f64) -> BasisCheck {
        use nalgebra::{DMatrix, Matrix3};
        let n = self.len();
        debug_assert_eq!(u.len(), n);
        // Positions, not node ids, index the dense matrix.
        let mut dense = DMatrix::<f64>::identity(3 * n, 3 * n);
        for i in 0..n {
            let j = (i + 1) % n;
            let m = self.measurements[i];
            dense.view_mut((3 * i, 3 * j), (3, 3)).copy_from(m.matrix());
            dense
                .view_mut((3 * j, 3 * i), (3, 3))
                .copy_from(&m.matrix().transpose());
        }
        let mut ud = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for (i, ui) in u.iter().enumerate() {
            ud.view_mut((3 * i, 3 * i), (3, 3)).copy_from(ui.matrix());
        }
        let transformed = ud.transpose() * dense * &ud;
        let e = self.cycle_error();
        let mut max_violation = 0.0f64;
        let mut worst_block = (0, 0);
        for bi in 0..n {
            for bj in 0..n {
                let actual = transformed.view((3 * bi, 3 * bj), (3, 3)).into_owned();
                let expected = if bi == bj {
                    Matrix3::identity()
                } else if bj == (bi + 1) % n && bi + 1 < n {
                    Matrix3::identity()
                } else if bi == (bj + 1) % n && bj + 1 < n {
                    Matrix3::identity()
                } else if bi == 0 && bj == n - 1 {
                    e.transpose().matrix().to_owned()
                } else if bi == n - 1 && bj == 0 {
                    e.matrix().to_owned()
                } else {
                    Matrix3::zeros()
                };
                let violation = (actual - expected).norm();
                if violation > max_violation {
                    max_violation = violation;
                    worst_block = (bi, bj);
                }
            }
        }
        BasisCheck {
            passed: max_violation <= tol,
            max_violation,
            worst_block,
        }
    }

    /// Full spectrum of the pairwise matrix in closed form, ascending:
    /// `1 + 2 cos(angle(E)/n - 2 pi k / n)` twice and `1 + 2 cos(2 pi k / n)`
    /// once, for `k = 0..n`.
    pub fn closed_form_spectrum(&self) -> Vec<f64> {
        let n = self.len();
        let nf = n as f64;
        let gamma = angle_of(&self.cycle_error());
        let mut ev = Vec::with_capacity(3 * n);
        for k in 0..n {
            let rotated = 1.0 + 2.0 * (gamma / nf - TAU * k as f64 / nf).cos();
            ev.push(rotated);
            ev.push(rotated);
            ev.push(1.0 + 2.0 * (TAU * k as f64 / nf).cos());
        }
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }
}

/// Globally optimal solution of the cycle problem (root `k = 0`).
pub fn solve_cycle(problem: &CycleProblem) -> Result<CycleSolution, CycleError> {
    problem.stationary_point(0)
}
