//! Measurement graphs and the block operators built from them.
//!
//! A [`MeasurementGraph`] holds relative rotation measurements on undirected
//! edges. The edge `(i, j)` with `i < j` stores the rotation `M_ij`; reading
//! the edge in the other direction yields the transpose. From the graph the
//! solver builds:
//!
//! * [`PairwiseMatrix`]: the symmetric 3n x 3n block matrix with identity
//!   diagonal blocks and `M_ij` off-diagonal blocks on edges.
//! * [`BlockDiagonal`]: block-diagonal matrices such as the dual multiplier
//!   and its noise-free initialization `(deg_i + 1) I_3`.
//! * [`CertificateMatrix`]: the difference `Lambda - M` whose smallest
//!   eigenvalues certify global optimality.
//! * [`BlockVector`]: a stacked 3n x 3 matrix of per-node 3x3 blocks, the
//!   primal iterate.

use crate::eigen::{self, EigenOptions, SymmetricLinOp};
use crate::so3::{project_to_rotation, Rotation, So3Error};
use nalgebra::{DMatrix, Matrix3, Vector3};
use std::collections::HashMap;
use thiserror::Error;

/// Orthogonality error above which an incoming measurement is rejected
/// instead of re-projected.
pub const MEASUREMENT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {index} out of range for {nodes} nodes")]
    NodeOutOfRange { index: usize, nodes: usize },
    #[error("self loop at node {node}")]
    SelfLoop { node: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("measurement on edge ({i}, {j}) is not orthogonal: error {orthogonality:.3e} exceeds {MEASUREMENT_TOL:.0e}")]
    InvalidMeasurement { i: usize, j: usize, orthogonality: f64 },
    #[error("measurement on edge ({i}, {j}) is a reflection (det {det:.6})")]
    ReflectionMeasurement { i: usize, j: usize, det: f64 },
    #[error("graph needs at least {needed} nodes, has {nodes}")]
    TooFewNodes { nodes: usize, needed: usize },
    #[error("block {index} is not a rotation")]
    BlockNotRotation {
        index: usize,
        #[source]
        source: So3Error,
    },
    #[error("expected a {expected_rows} x 3 matrix, got {rows} x {cols}")]
    BadShape {
        expected_rows: usize,
        rows: usize,
        cols: usize,
    },
    #[error("eigensolver failed: {0}")]
    Eigen(#[from] eigen::EigenError),
}

/// Undirected measurement edge, stored with `i < j`.
#[derive(Clone, Copy, Debug)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub rotation: Rotation,
}

/// Undirected graph of relative rotation measurements.
#[derive(Clone, Debug)]
pub struct MeasurementGraph {
    n: usize,
    edges: Vec<Edge>,
    index: HashMap<(usize, usize), usize>,
}

impl MeasurementGraph {
    pub fn new(node_count: usize) -> Self {
        MeasurementGraph {
            n: node_count,
            edges: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Adds a measurement given as a raw matrix. Matrices within
    /// [`MEASUREMENT_TOL`] of orthogonality (and positive determinant) are
    /// re-projected onto SO(3); anything worse is rejected.
    pub fn add_measurement(
        &mut self,
        i: usize,
        j: usize,
        m: &Matrix3<f64>,
    ) -> Result<(), GraphError> {
        let orthogonality = (m.transpose() * m - Matrix3::identity()).norm();
        if !orthogonality.is_finite() || orthogonality > MEASUREMENT_TOL {
            return Err(GraphError::InvalidMeasurement { i, j, orthogonality });
        }
        let det = m.determinant();
        if det <= 0.0 {
            return Err(GraphError::ReflectionMeasurement { i, j, det });
        }
        let r = project_to_rotation(m).expect("near-orthogonal matrix projects cleanly");
        self.add_rotation(i, j, r)
    }

    /// Adds a measurement already validated as a rotation.
    pub fn add_rotation(&mut self, i: usize, j: usize, r: Rotation) -> Result<(), GraphError> {
        if i >= self.n {
            return Err(GraphError::NodeOutOfRange { index: i, nodes: self.n });
        }
        if j >= self.n {
            return Err(GraphError::NodeOutOfRange { index: j, nodes: self.n });
        }
        if i == j {
            return Err(GraphError::SelfLoop { node: i });
        }
        let (a, b, rot) = if i < j { (i, j, r) } else { (j, i, r.transpose()) };
        if self.index.contains_key(&(a, b)) {
            return Err(GraphError::DuplicateEdge { i: a, j: b });
        }
        self.index.insert((a, b), self.edges.len());
        self.edges.push(Edge { i: a, j: b, rotation: rot });
        Ok(())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.index.contains_key(&(i.min(j), i.max(j)))
    }

    /// Oriented measurement `M_ij`; `measurement(j, i)` is its transpose.
    pub fn measurement(&self, i: usize, j: usize) -> Option<Rotation> {
        let key = (i.min(j), i.max(j));
        let idx = *self.index.get(&key)?;
        let r = self.edges[idx].rotation;
        Some(if i < j { r } else { r.transpose() })
    }

    /// Node degrees (the diagonal of the degree matrix).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for e in &self.edges {
            d[e.i] += 1;
            d[e.j] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Noise-free dual initialization `(deg_i + 1) I_3` per node.
    pub fn lambda_noise_free(&self) -> BlockDiagonal {
        let blocks = self
            .degrees()
            .into_iter()
            .map(|d| Matrix3::identity() * (d as f64 + 1.0))
            .collect();
        BlockDiagonal::new(blocks)
    }

    /// Second-smallest eigenvalue of the scalar graph Laplacian (algebraic
    /// connectivity). Zero signals a disconnected graph.
    pub fn fiedler_value(&self) -> Result<f64, GraphError> {
        if self.n < 2 {
            return Err(GraphError::TooFewNodes { nodes: self.n, needed: 2 });
        }
        if !self.is_connected() {
            return Ok(0.0);
        }
        if self.n <= 2000 {
            let mut l = DMatrix::<f64>::zeros(self.n, self.n);
            for e in &self.edges {
                l[(e.i, e.i)] += 1.0;
                l[(e.j, e.j)] += 1.0;
                l[(e.i, e.j)] -= 1.0;
                l[(e.j, e.i)] -= 1.0;
            }
            let mut ev: Vec<f64> = l.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(ev[1].max(0.0))
        } else {
            let op = ScalarLaplacian { graph: self, degrees: self.degrees() };
            let r = eigen::smallest_eigenpairs_with(&op, 2, -1e-6, &EigenOptions::default())?;
            Ok(r.eigenvalues[1].max(0.0))
        }
    }
}

/// Scalar graph Laplacian as an operator, for the sparse Fiedler path.
struct ScalarLaplacian<'a> {
    graph: &'a MeasurementGraph,
    degrees: Vec<usize>,
}

impl SymmetricLinOp for ScalarLaplacian<'_> {
    fn dim(&self) -> usize {
        self.graph.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, d) in self.degrees.iter().enumerate() {
            y[i] = *d as f64 * x[i];
        }
        for e in self.graph.edges() {
            y[e.i] -= x[e.j];
            y[e.j] -= x[e.i];
        }
    }

    fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t: Vec<(usize, usize, f64)> = self
            .degrees
            .iter()
            .enumerate()
            .map(|(i, d)| (i, i, *d as f64))
            .collect();
        for e in self.graph.edges() {
            t.push((e.i, e.j, -1.0));
        }
        t
    }
}

/// Symmetric 3n x 3n block matrix of pairwise measurements: identity diagonal
/// blocks, measurement blocks on edges, zero elsewhere. Only the upper blocks
/// are stored; the lower half is completed by transposition.
#[derive(Clone, Debug)]
pub struct PairwiseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Matrix3<f64>)>>,
}

impl PairwiseMatrix {
    pub fn from_graph(g: &MeasurementGraph) -> Self {
        let mut rows: Vec<Vec<(usize, Matrix3<f64>)>> = vec![Vec::new(); g.node_count()];
        for e in g.edges() {
            rows[e.i].push((e.j, *e.rotation.matrix()));
        }
        for row in &mut rows {
            row.sort_by_key(|(j, _)| *j);
        }
        PairwiseMatrix { n: g.node_count(), rows }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        3 * self.n
    }

    pub fn stored_block_count(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Block `(i, j)`: identity on the diagonal, the measurement on stored
    /// edges, its transpose below the diagonal, `None` off the edge set.
    pub fn block(&self, i: usize, j: usize) -> Option<Matrix3<f64>> {
        if i == j {
            return Some(Matrix3::identity());
        }
        let (a, b, transpose) = if i < j { (i, j, false) } else { (j, i, true) };
        self.rows[a]
            .iter()
            .find(|(col, _)| *col == b)
            .map(|(_, m)| if transpose { m.transpose() } else { *m })
    }

    /// `y = M x` for a stacked 3n x c matrix.
    pub fn apply_block(&self, x: &DMatrix<f64>, y: &mut DMatrix<f64>) {
        assert_eq!(x.nrows(), self.dim());
        assert_eq!(y.shape(), x.shape());
        y.copy_from(x);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, b) in row {
                let xi = x.fixed_view::<3, 3>(3 * i, 0).into_owned();
                let xj = x.fixed_view::<3, 3>(3 * j, 0).into_owned();
                let mut yi = y.fixed_view_mut::<3, 3>(3 * i, 0);
                yi += b * xj;
                let mut yj = y.fixed_view_mut::<3, 3>(3 * j, 0);
                yj += b.transpose() * xi;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, b) in row {
                m.view_mut((3 * i, 3 * j), (3, 3)).copy_from(&b);
                m.view_mut((3 * j, 3 * i), (3, 3)).copy_from(&b.transpose());
            }
        }
        m
    }
}

impl SymmetricLinOp for PairwiseMatrix {
    fn dim(&self) -> usize {
        3 * self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, b) in row {
                let xi = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
                let xj = Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
                let bi = b * xj;
                let bj = b.transpose() * xi;
                for r in 0..3 {
                    y[3 * i + r] += bi[r];
                    y[3 * j + r] += bj[r];
                }
            }
        }
    }

    fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(3 * self.n + 9 * self.stored_block_count());
        for d in 0..3 * self.n {
            t.push((d, d, 1.0));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, b) in row {
                for r in 0..3 {
                    for c in 0..3 {
                        t.push((3 * i + r, 3 * j + c, b[(r, c)]));
                    }
                }
            }
        }
        t
    }
}

/// Block-diagonal 3n x 3n matrix with one 3x3 block per node.
#[derive(Clone, Debug)]
pub struct BlockDiagonal {
    blocks: Vec<Matrix3<f64>>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<Matrix3<f64>>) -> Self {
        BlockDiagonal { blocks }
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &Matrix3<f64> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Matrix3<f64>] {
        &self.blocks
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.blocks.len();
        let mut m = DMatrix::zeros(3 * n, 3 * n);
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((3 * i, 3 * i), (3, 3)).copy_from(b);
        }
        m
    }
}

/// The certificate operator `Lambda - M`. Global optimality holds when it is
/// positive semidefinite and annihilates the primal iterate.
pub struct CertificateMatrix<'a> {
    lambda: &'a BlockDiagonal,
    pairwise: &'a PairwiseMatrix,
}

impl<'a> CertificateMatrix<'a> {
    pub fn new(lambda: &'a BlockDiagonal, pairwise: &'a PairwiseMatrix) -> Self {
        assert_eq!(lambda.node_count(), pairwise.node_count());
        CertificateMatrix { lambda, pairwise }
    }

    /// `y = (Lambda - M) x` for a stacked 3n x c matrix.
    pub fn apply_block(&self, x: &DMatrix<f64>, y: &mut DMatrix<f64>) {
        self.pairwise.apply_block(x, y);
        for (i, l) in self.lambda.blocks.iter().enumerate() {
            let xi = x.fixed_view::<3, 3>(3 * i, 0).into_owned();
            let yi = y.fixed_view::<3, 3>(3 * i, 0).into_owned();
            y.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&(l * xi - yi));
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.lambda.to_dense() - self.pairwise.to_dense()
    }
}

impl SymmetricLinOp for CertificateMatrix<'_> {
    fn dim(&self) -> usize {
        self.pairwise.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.pairwise.apply_into(x, y);
        for (i, l) in self.lambda.blocks.iter().enumerate() {
            let xi = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            let li = l * xi;
            for r in 0..3 {
                y[3 * i + r] = li[r] - y[3 * i + r];
            }
        }
    }

    fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.pairwise.n;
        let mut t = Vec::with_capacity(6 * n + 9 * self.pairwise.stored_block_count());
        for (i, l) in self.lambda.blocks.iter().enumerate() {
            // Lambda_i - I_3, upper entries of the symmetric block.
            for r in 0..3 {
                for c in r..3 {
                    let v = l[(r, c)] - if r == c { 1.0 } else { 0.0 };
                    if v != 0.0 {
                        t.push((3 * i + r, 3 * i + c, v));
                    } else if r == c {
                        // Keep an explicit diagonal so factorizations see it.
                        t.push((3 * i + r, 3 * i + c, 0.0));
                    }
                }
            }
        }
        for (i, row) in self.pairwise.rows.iter().enumerate() {
            for &(j, b) in row {
                for r in 0..3 {
                    for c in 0..3 {
                        t.push((3 * i + r, 3 * j + c, -b[(r, c)]));
                    }
                }
            }
        }
        t
    }
}

/// Stacked 3n x 3 matrix of per-node 3x3 blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    blocks: Vec<Matrix3<f64>>,
}

impl BlockVector {
    pub fn from_blocks(blocks: Vec<Matrix3<f64>>) -> Self {
        BlockVector { blocks }
    }

    pub fn from_rotations(rotations: &[Rotation]) -> Self {
        BlockVector {
            blocks: rotations.iter().map(|r| *r.matrix()).collect(),
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self, GraphError> {
        if m.ncols() != 3 || m.nrows() % 3 != 0 {
            return Err(GraphError::BadShape {
                expected_rows: m.nrows() / 3 * 3,
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let blocks = (0..m.nrows() / 3)
            .map(|i| m.fixed_view::<3, 3>(3 * i, 0).into_owned())
            .collect();
        Ok(BlockVector { blocks })
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &Matrix3<f64> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Matrix3<f64>] {
        &self.blocks
    }

    pub fn set_block(&mut self, i: usize, m: Matrix3<f64>) {
        self.blocks[i] = m;
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3 * self.blocks.len(), 3);
        for (i, b) in self.blocks.iter().enumerate() {
            m.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(b);
        }
        m
    }

    /// Interprets every block as a rotation, failing on the first block that
    /// is not one within tolerance.
    pub fn rotations(&self) -> Result<Vec<Rotation>, GraphError> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(index, b)| {
                Rotation::try_from_matrix(*b)
                    .map_err(|source| GraphError::BlockNotRotation { index, source })
            })
            .collect()
    }

    /// Right-multiplies every block by `g` (a gauge change).
    pub fn right_multiply(&self, g: &Matrix3<f64>) -> BlockVector {
        BlockVector {
            blocks: self.blocks.iter().map(|b| b * g).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }
}
