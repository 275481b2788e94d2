//! Network topologies, combination matrices and Laplacians.
//!
//! Agents are indexed `0..K`. A [`Topology`] is an undirected weighted
//! graph without self-loops; the weights `c_{lk}` parametrize the
//! Laplacian `L = diag(C 1) - C`. A [`CombinationMatrix`] is the
//! left-stochastic matrix `A` that agents use to fuse neighbor iterates,
//! `w_k <- sum_l a_{lk} w_l`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::stacked::NetworkVector;

/// Column sums and symmetry are checked to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

const PERRON_RESIDUAL: f64 = 1e-12;
const PERRON_MAX_ITERS: usize = 1_000_000;

/// Undirected edge with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: usize,
    edges: Vec<Edge>,
}

impl Topology {
    /// Builds a topology from `(l, k, c_{lk})` triples. Pairs are stored with
    /// the lower index first and sorted; duplicates, self-loops and
    /// non-positive weights are rejected.
    pub fn new(nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Parameter("node count K must be at least 1".into()));
        }
        let mut out: Vec<Edge> = Vec::new();
        for (l, k, w) in edges {
            if l >= nodes || k >= nodes {
                return Err(Error::Parameter(format!(
                    "edge ({l}, {k}) references a node outside 0..{nodes}"
                )));
            }
            if l == k {
                return Err(Error::Parameter(format!("self-loop at node {l}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!(
                    "edge ({l}, {k}) has non-positive weight {w}"
                )));
            }
            let (a, b) = if l < k { (l, k) } else { (k, l) };
            out.push(Edge { a, b, weight: w });
        }
        out.sort_by_key(|x| (x.a, x.b));
        if let Some(d) = out.windows(2).find(|p| p[0].a == p[1].a && p[0].b == p[1].b) {
            return Err(Error::Parameter(format!(
                "duplicate edge ({}, {})",
                d[0].a, d[0].b
            )));
        }
        Ok(Self { nodes, edges: out })
    }

    /// Unit-weight topology from node pairs.
    pub fn unweighted(nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(nodes, pairs.into_iter().map(|(a, b)| (a, b, 1.0)))
    }

    /// Weighted graph carried by the off-diagonal support of a symmetric
    /// combination matrix, with `c_{lk} = a_{lk}`.
    pub fn from_combination(a: &CombinationMatrix) -> Result<Self> {
        if !a.is_symmetric(STOCHASTIC_TOL) {
            return Err(Error::Contract(
                "edge weights can only be read from a symmetric combination matrix".into(),
            ));
        }
        let m = a.matrix();
        let k = m.nrows();
        let mut edges = Vec::new();
        for col in 0..k {
            for row in 0..col {
                if m[(row, col)] > 0.0 {
                    edges.push((row, col, m[(row, col)]));
                }
            }
        }
        Self::new(k, edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.edges.iter().filter(|e| e.a == k || e.b == k).count()
    }

    /// Neighbors of `k`, excluding `k` itself, ascending.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| match (e.a == k, e.b == k) {
                (true, _) => Some(e.b),
                (_, true) => Some(e.a),
                _ => None,
            })
            .collect();
        n.sort_unstable();
        n
    }

    /// Weighted adjacency `C`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.nodes, self.nodes);
        for e in &self.edges {
            c[(e.a, e.b)] = e.weight;
            c[(e.b, e.a)] = e.weight;
        }
        c
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.nodes];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        reachable_count(&adj, 0) == self.nodes
    }

    /// Same edges, every weight replaced by `w`.
    pub fn with_uniform_weight(&self, w: f64) -> Result<Self> {
        Self::new(self.nodes, self.edges.iter().map(|e| (e.a, e.b, w)))
    }
}

fn reachable_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyKind {
    Ring,
    Path,
    /// `rows x (K / rows)` lattice; `None` picks the most square factorization.
    Grid { rows: Option<usize> },
    Complete,
    /// Node 0 is the hub.
    Star,
    ErdosRenyi { p: f64, max_attempts: usize },
}

impl TopologyKind {
    pub fn erdos_renyi(p: f64) -> Self {
        TopologyKind::ErdosRenyi { p, max_attempts: 100 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Path => "path",
            TopologyKind::Grid { .. } => "grid",
            TopologyKind::Complete => "complete",
            TopologyKind::Star => "star",
            TopologyKind::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

/// Generates a unit-weight topology. Deterministic in `(kind, nodes, seed)`;
/// only Erdos-Renyi graphs consume the seed.
pub fn build_topology(kind: &TopologyKind, nodes: usize, seed: u64) -> Result<Topology> {
    if nodes == 0 {
        return Err(Error::Parameter("node count K must be at least 1".into()));
    }
    let k = nodes;
    match kind {
        TopologyKind::Ring => {
            let pairs: Vec<_> = match k {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..k).map(|i| (i, (i + 1) % k)).collect(),
            };
            Topology::unweighted(k, pairs)
        }
        TopologyKind::Path => Topology::unweighted(k, (1..k).map(|i| (i - 1, i))),
        TopologyKind::Grid { rows } => {
            let rows = match rows {
                Some(0) => return Err(Error::Parameter("grid needs at least one row".into())),
                Some(r) => *r,
                None => (1..=k).filter(|r| k.is_multiple_of(*r) && r * r <= k).max().unwrap_or(1),
            };
            if !k.is_multiple_of(rows) {
                return Err(Error::Parameter(format!(
                    "grid rows {rows} do not divide K = {k}"
                )));
            }
            let cols = k / rows;
            let mut pairs = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let u = r * cols + c;
                    if c + 1 < cols {
                        pairs.push((u, u + 1));
                    }
                    if r + 1 < rows {
                        pairs.push((u, u + cols));
                    }
                }
            }
            Topology::unweighted(k, pairs)
        }
        TopologyKind::Complete => {
            Topology::unweighted(k, (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))))
        }
        TopologyKind::Star => Topology::unweighted(k, (1..k).map(|i| (0, i))),
        TopologyKind::ErdosRenyi { p, max_attempts } => {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Parameter(format!(
                    "edge probability must lie in (0, 1], got {p}"
                )));
            }
            for attempt in 0..*max_attempts {
                let mut rng = rng::stream(seed, attempt as u64, Purpose::Links, u64::MAX);
                let mut pairs = Vec::new();
                for a in 0..k {
                    for b in a + 1..k {
                        if rng.random::<f64>() < *p {
                            pairs.push((a, b));
                        }
                    }
                }
                let t = Topology::unweighted(k, pairs)?;
                if t.is_connected() {
                    return Ok(t);
                }
            }
            Err(Error::Generation(format!(
                "no connected Erdos-Renyi graph with K = {k}, p = {p} after {max_attempts} attempts"
            )))
        }
    }
}

/// Left-stochastic combination matrix `A` (columns sum to one).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    matrix: DMatrix<f64>,
    /// Non-zero entries of each column as `(l, a_{lk})`, `l` ascending.
    columns: Vec<Vec<(usize, f64)>>,
}

impl CombinationMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::shape(
                "non-empty square matrix",
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        for ((r, c), v) in matrix
            .iter()
            .enumerate()
            .map(|(i, v)| ((i % matrix.nrows(), i / matrix.nrows()), v))
        {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Structure(format!(
                    "combination weight a[{r},{c}] = {v} is not a non-negative number"
                )));
            }
        }
        for (c, col) in matrix.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Structure(format!(
                    "column {c} sums to {s}, combination matrices must be left-stochastic"
                )));
            }
        }
        let columns = matrix
            .column_iter()
            .map(|col| {
                col.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(l, &v)| (l, v))
                    .collect()
            })
            .collect();
        Ok(Self { matrix, columns })
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k)).expect("identity is stochastic")
    }

    /// Exact averaging `(1/K) 1 1^T`.
    pub fn averaging(k: usize) -> Self {
        Self::new(DMatrix::from_element(k, k, 1.0 / k as f64)).expect("averaging is stochastic")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn entry(&self, l: usize, k: usize) -> f64 {
        self.matrix[(l, k)]
    }

    /// Non-zero `(l, a_{lk})` pairs of column `k`.
    pub fn column(&self, k: usize) -> &[(usize, f64)] {
        &self.columns[k]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|r| (0..r).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= tol))
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.matrix
            .row_iter()
            .all(|row| (row.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// `(I + A) / 2`: same stationary vector, spectrum moved into `[0, 1]`
    /// for symmetric `A`.
    pub fn lazy(&self) -> Self {
        let k = self.size();
        let m = (DMatrix::identity(k, k) + &self.matrix) * 0.5;
        Self::new(m).expect("convex combination of stochastic matrices")
    }

    /// `out_k = sum_l a_{lk} in_l` for a single agent.
    #[inline]
    pub fn combine_block(&self, k: usize, input: &NetworkVector, out: &mut [f64]) {
        let col = &self.columns[k];
        let (l0, a0) = col[0];
        for (o, x) in out.iter_mut().zip(input.block(l0)) {
            *o = a0 * x;
        }
        for &(l, a) in &col[1..] {
            for (o, x) in out.iter_mut().zip(input.block(l)) {
                *o += a * x;
            }
        }
    }

    /// Network-wide combination `out = (A^T (x) I_M) input`.
    pub fn combine(&self, input: &NetworkVector, out: &mut NetworkVector) {
        debug_assert!(input.same_shape(out) && input.agents() == self.size());
        for k in 0..self.size() {
            self.combine_block(k, input, out.block_mut(k));
        }
    }

    /// Support graph of `A` (off-diagonal entries) is strongly connected.
    pub fn is_strongly_connected(&self) -> bool {
        let k = self.size();
        let mut fwd = vec![Vec::new(); k];
        let mut bwd = vec![Vec::new(); k];
        for c in 0..k {
            for &(r, _) in &self.columns[c] {
                if r != c {
                    fwd[r].push(c);
                    bwd[c].push(r);
                }
            }
        }
        reachable_count(&fwd, 0) == k && reachable_count(&bwd, 0) == k
    }
}

/// Metropolis-Hastings rule: `a_{lk} = 1 / (1 + max(d_l, d_k))` on edges,
/// self-weight absorbing the remainder. Symmetric and doubly stochastic.
pub fn metropolis_weights(t: &Topology) -> Result<CombinationMatrix> {
    if !t.is_connected() {
        return Err(Error::Structure(
            "Metropolis weights need a connected topology".into(),
        ));
    }
    let k = t.node_count();
    let deg: Vec<usize> = (0..k).map(|i| t.degree(i)).collect();
    let mut a = DMatrix::zeros(k, k);
    for e in t.edges() {
        let w = 1.0 / (1 + deg[e.a].max(deg[e.b])) as f64;
        a[(e.a, e.b)] = w;
        a[(e.b, e.a)] = w;
    }
    fill_self_weights(&mut a);
    CombinationMatrix::new(a)
}

/// Every edge gets weight `w`; self-weights `1 - d_k w` must stay non-negative.
pub fn uniform_weights(t: &Topology, w: f64) -> Result<CombinationMatrix> {
    let k = t.node_count();
    if let Some(node) = (0..k).find(|&i| t.degree(i) as f64 * w > 1.0 + STOCHASTIC_TOL) {
        return Err(Error::Parameter(format!(
            "edge weight {w} gives node {node} (degree {}) a negative self-weight",
            t.degree(node)
        )));
    }
    if !(w > 0.0) {
        return Err(Error::Parameter(format!("edge weight must be positive, got {w}")));
    }
    let mut a = DMatrix::zeros(k, k);
    for e in t.edges() {
        a[(e.a, e.b)] = w;
        a[(e.b, e.a)] = w;
    }
    fill_self_weights(&mut a);
    CombinationMatrix::new(a)
}

fn fill_self_weights(a: &mut DMatrix<f64>) {
    for c in 0..a.ncols() {
        let off: f64 = (0..a.nrows()).filter(|&r| r != c).map(|r| a[(r, c)]).sum();
        a[(c, c)] = (1.0 - off).max(0.0);
    }
}

/// Symmetric, zero row-sum, non-positive off-diagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let k = m.nrows();
        for r in 0..k {
            let s: f64 = m.row(r).iter().sum();
            if s.abs() > 1e-10 {
                return Err(Error::Structure(format!("Laplacian row {r} sums to {s}")));
            }
            for c in 0..k {
                if (m[(r, c)] - m[(c, r)]).abs() > 1e-12 {
                    return Err(Error::Structure("Laplacian must be symmetric".into()));
                }
                if r != c && m[(r, c)] > 0.0 {
                    return Err(Error::Structure(format!(
                        "Laplacian off-diagonal entry ({r}, {c}) is positive"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(self.0.clone())
    }
}

pub(crate) fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `L = diag(C 1) - C`.
pub fn laplacian_from_topology(t: &Topology) -> LaplacianMatrix {
    let c = t.adjacency();
    let deg = DMatrix::from_diagonal(&c.column_sum());
    LaplacianMatrix(deg - c)
}

/// `A = I - L`, rejected when any entry would be negative.
pub fn adjacency_from_laplacian(l: &LaplacianMatrix) -> Result<CombinationMatrix> {
    let k = l.size();
    let a = DMatrix::identity(k, k) - l.matrix();
    for c in 0..k {
        for r in 0..k {
            if a[(r, c)] < 0.0 {
                return Err(Error::Scaling {
                    row: r,
                    col: c,
                    value: a[(r, c)],
                });
            }
        }
    }
    CombinationMatrix::new(a)
}

/// Perron vector `A p = p`, `1^T p = 1`, by power iteration.
///
/// Requires a primitive `A`; this is checked through the sufficient
/// condition of a strongly connected support with at least one positive
/// self-weight.
pub fn perron_vector(a: &CombinationMatrix) -> Result<DVector<f64>> {
    let k = a.size();
    if !a.is_strongly_connected() {
        return Err(Error::Structure(
            "combination matrix is not primitive: its graph is not connected".into(),
        ));
    }
    if !(0..k).any(|i| a.entry(i, i) > 0.0) {
        return Err(Error::Structure(
            "combination matrix has no positive self-weight; primitivity not guaranteed".into(),
        ));
    }
    let m = a.matrix();
    let mut p = DVector::from_element(k, 1.0 / k as f64);
    for _ in 0..PERRON_MAX_ITERS {
        let next = m * &p;
        let residual = (&next - &p).lp_norm(1);
        p = next;
        if residual <= PERRON_RESIDUAL {
            let s = p.sum();
            return Ok(p / s);
        }
    }
    Err(Error::Numerical(format!(
        "power iteration did not reach residual {PERRON_RESIDUAL:e} in {PERRON_MAX_ITERS} iterations"
    )))
}

/// `lambda = rho(A - (1/K) 1 1^T)` for symmetric doubly stochastic `A`.
pub fn mixing_rate(a: &CombinationMatrix) -> Result<f64> {
    if !a.is_symmetric(STOCHASTIC_TOL) || !a.is_doubly_stochastic(STOCHASTIC_TOL) {
        return Err(Error::Contract(
            "mixing rate is defined here for symmetric doubly stochastic matrices only".into(),
        ));
    }
    let k = a.size();
    let centered = a.matrix() - DMatrix::from_element(k, k, 1.0 / k as f64);
    let ev = sorted_eigenvalues(centered);
    Ok(ev.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())).min(1.0))
}

/// `E x K` factor with `B^T B = L`: edge `(l, k)`, `l < k`, contributes a row
/// with `+sqrt(c)` at `l` and `-sqrt(c)` at `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceFactor {
    matrix: DMatrix<f64>,
    rows: Vec<(usize, usize, f64)>,
}

impl IncidenceFactor {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn edge_count(&self) -> usize {
        self.rows.len()
    }

    /// `(positive column, negative column, sqrt(c))` per row.
    pub fn rows(&self) -> &[(usize, usize, f64)] {
        &self.rows
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.matrix.transpose() * &self.matrix
    }
}

pub fn incidence_factor(t: &Topology) -> IncidenceFactor {
    let mut b = DMatrix::zeros(t.edge_count(), t.node_count());
    let mut rows = Vec::with_capacity(t.edge_count());
    for (row, e) in t.edges().iter().enumerate() {
        let s = e.weight.sqrt();
        b[(row, e.a)] = s;
        b[(row, e.b)] = -s;
        rows.push((e.a, e.b, s));
    }
    IncidenceFactor { matrix: b, rows }
}

/// `W^T (L (x) I_M) W`, which equals `(1/2) sum_k sum_l c_{lk} ||w_k - w_l||^2`
/// (each unordered edge counted once).
pub fn variation_measure(w: &NetworkVector, l: &LaplacianMatrix) -> Result<f64> {
    if w.agents() != l.size() {
        return Err(Error::shape(
            format!("{} blocks", l.size()),
            format!("{} blocks", w.agents()),
        ));
    }
    let m = l.matrix();
    let k = l.size();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let lab = m[(a, b)];
            if lab != 0.0 {
                total += lab * crate::stacked::dot(w.block(a), w.block(b));
            }
        }
    }
    Ok(total)
}

/// Random link failures: each edge of `A` survives independently with
/// probability `keep_prob`; a dropped edge's weight moves onto both
/// endpoints' self-weights. Deterministic in `(seed, iteration)`.
pub fn realize_link_failures(
    a: &CombinationMatrix,
    keep_prob: f64,
    iteration: usize,
    seed: u64,
) -> Result<CombinationMatrix> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Parameter(format!(
            "link keep probability must lie in (0, 1], got {keep_prob}"
        )));
    }
    if keep_prob == 1.0 {
        return Ok(a.clone());
    }
    let mut rng = rng::stream(seed, iteration as u64, Purpose::Links, 0);
    let mut m = a.matrix().clone();
    let k = a.size();
    for c in 0..k {
        for r in 0..c {
            if m[(r, c)] == 0.0 && m[(c, r)] == 0.0 {
                continue;
            }
            if rng.random::<f64>() >= keep_prob {
                let (up, down) = (m[(r, c)], m[(c, r)]);
                m[(c, c)] += up;
                m[(r, r)] += down;
                m[(r, c)] = 0.0;
                m[(c, r)] = 0.0;
            }
        }
    }
    CombinationMatrix::new(m)
}

/// `E[A_i]` under [`realize_link_failures`].
pub fn expected_link_failure_matrix(a: &CombinationMatrix, keep_prob: f64) -> CombinationMatrix {
    let k = a.size();
    let src = a.matrix();
    let mut m = src.clone();
    for c in 0..k {
        for r in 0..c {
            let (up, down) = (src[(r, c)], src[(c, r)]);
            m[(r, c)] = keep_prob * up;
            m[(c, r)] = keep_prob * down;
            m[(c, c)] += (1.0 - keep_prob) * up;
            m[(r, r)] += (1.0 - keep_prob) * down;
        }
    }
    CombinationMatrix::new(m).expect("expectation of stochastic matrices")
}

/// Federated-style schedule: exact averaging when `iteration` is a multiple
/// of `period`, identity otherwise.
pub fn periodic_matrix(k: usize, iteration: usize, period: usize) -> Result<CombinationMatrix> {
    if period == 0 {
        return Err(Error::Parameter("averaging period must be at least 1".into()));
    }
    Ok(if iteration.is_multiple_of(period) {
        CombinationMatrix::averaging(k)
    } else {
        CombinationMatrix::identity(k)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule {
    Metropolis,
    /// `(I + A_metropolis) / 2`.
    LazyMetropolis,
    /// Constant weight on every edge.
    Uniform(f64),
}

impl WeightRule {
    pub fn build(&self, t: &Topology) -> Result<CombinationMatrix> {
        match self {
            WeightRule::Metropolis => metropolis_weights(t),
            WeightRule::LazyMetropolis => Ok(metropolis_weights(t)?.lazy()),
            WeightRule::Uniform(w) => uniform_weights(t, *w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStats {
    pub perron: DVector<f64>,
    /// Only defined for symmetric doubly stochastic `A`.
    pub mixing_rate: Option<f64>,
    pub connected: bool,
}

/// Everything the algorithms need to know about the graph.
///
/// `laplacian` is the Laplacian of the topology's own weights (used by the
/// graph filter and the disagreement metric). Penalty and primal-dual
/// methods use the Laplacian implied by the combination matrix,
/// `penalty_laplacian = I - A`, together with its incidence factor.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub combination: CombinationMatrix,
    pub laplacian: LaplacianMatrix,
    pub penalty_laplacian: LaplacianMatrix,
    pub penalty_incidence: IncidenceFactor,
    pub stats: NetworkStats,
}

impl Network {
    pub fn new(topology: Topology, rule: WeightRule) -> Result<Self> {
        let a = rule.build(&topology)?;
        Self::with_combination(topology, a)
    }

    pub fn with_combination(topology: Topology, combination: CombinationMatrix) -> Result<Self> {
        if combination.size() != topology.node_count() {
            return Err(Error::shape(
                format!("{0}x{0} combination matrix", topology.node_count()),
                format!("{0}x{0}", combination.size()),
            ));
        }
        let laplacian = laplacian_from_topology(&topology);
        let symmetric = combination.is_symmetric(STOCHASTIC_TOL);
        let (penalty_laplacian, penalty_incidence) = if symmetric {
            let weighted = Topology::from_combination(&combination)?;
            (laplacian_from_topology(&weighted), incidence_factor(&weighted))
        } else {
            (laplacian.clone(), incidence_factor(&topology))
        };
        let doubly = combination.is_doubly_stochastic(STOCHASTIC_TOL);
        // any doubly stochastic A fixes the uniform vector, primitive or not
        let perron = if doubly {
            DVector::from_element(combination.size(), 1.0 / combination.size() as f64)
        } else {
            perron_vector(&combination)?
        };
        let mixing = if symmetric && doubly {
            Some(mixing_rate(&combination)?)
        } else {
            None
        };
        let connected = topology.is_connected();
        Ok(Self {
            topology,
            combination,
            laplacian,
            penalty_laplacian,
            penalty_incidence,
            stats: NetworkStats {
                perron,
                mixing_rate: mixing,
                connected,
            },
        })
    }

    pub fn agents(&self) -> usize {
        self.topology.node_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path3() -> Topology {
        build_topology(&TopologyKind::Path, 3, 0).unwrap()
    }

    #[test]
    fn named_topologies() {
        let ring = build_topology(&TopologyKind::Ring, 3, 0).unwrap();
        let pairs: Vec<_> = ring.edges().iter().map(|e| (e.a, e.b, e.weight)).collect();
        assert_eq!(pairs, vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]);

        let star = build_topology(&TopologyKind::Star, 4, 0).unwrap();
        let pairs: Vec<_> = star.edges().iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3)]);

        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        assert_eq!(c2.edge_count(), 1);

        let grid = build_topology(&TopologyKind::Grid { rows: None }, 6, 0).unwrap();
        assert_eq!(grid.edge_count(), 7);
        assert!(grid.is_connected());
    }

    #[test]
    fn topology_validation() {
        assert!(matches!(
            build_topology(&TopologyKind::Ring, 0, 0),
            Err(Error::Parameter(_))
        ));
        assert!(Topology::unweighted(3, [(1, 1)]).is_err());
        assert!(Topology::unweighted(3, [(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(3, [(0, 1, 0.0)]).is_err());
        assert!(matches!(
            build_topology(&TopologyKind::erdos_renyi(0.0), 5, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn erdos_renyi_is_deterministic_and_connected() {
        let kind = TopologyKind::erdos_renyi(0.4);
        let a = build_topology(&kind, 12, 99).unwrap();
        let b = build_topology(&kind, 12, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
    }

    #[test]
    fn erdos_renyi_attempt_cap() {
        let kind = TopologyKind::ErdosRenyi {
            p: 1e-6,
            max_attempts: 3,
        };
        assert!(matches!(build_topology(&kind, 10, 1), Err(Error::Generation(_))));
    }

    #[test]
    fn metropolis_path3() {
        let a = metropolis_weights(&path3()).unwrap();
        let m = a.matrix();
        assert_abs_diff_eq!(m[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 2)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(2, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m[(0, 2)], 0.0);
        assert!(a.is_symmetric(0.0) && a.is_doubly_stochastic(1e-15));
    }

    #[test]
    fn metropolis_small_cases() {
        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        let a = metropolis_weights(&c2).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_element(2, 2, 0.5));
        let single = build_topology(&TopologyKind::Ring, 1, 0).unwrap();
        assert_eq!(metropolis_weights(&single).unwrap().matrix(), &DMatrix::identity(1, 1));
        let split = Topology::unweighted(3, [(0, 1)]).unwrap();
        assert!(matches!(metropolis_weights(&split), Err(Error::Structure(_))));
    }

    #[test]
    fn laplacians() {
        let l = laplacian_from_topology(&path3());
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l.matrix(), &expect);
        let single = build_topology(&TopologyKind::Ring, 1, 0).unwrap();
        assert_eq!(laplacian_from_topology(&single).matrix(), &DMatrix::zeros(1, 1));
        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(laplacian_from_topology(&c2).matrix(), &expect);
    }

    #[test]
    fn adjacency_from_laplacian_cases() {
        let zero = LaplacianMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(adjacency_from_laplacian(&zero).unwrap().matrix(), &DMatrix::identity(2, 2));

        let c2 = build_topology(&TopologyKind::Complete, 2, 0)
            .unwrap()
            .with_uniform_weight(0.5)
            .unwrap();
        let a = adjacency_from_laplacian(&laplacian_from_topology(&c2)).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_element(2, 2, 0.5));

        let p3 = path3().with_uniform_weight(1.0 / 3.0).unwrap();
        let a = adjacency_from_laplacian(&laplacian_from_topology(&p3)).unwrap();
        let mh = metropolis_weights(&path3()).unwrap();
        assert!((a.matrix() - mh.matrix()).abs().max() < 1e-15);

        let err = adjacency_from_laplacian(&laplacian_from_topology(&path3())).unwrap_err();
        assert!(matches!(err, Error::Scaling { row: 1, col: 1, .. }));
    }

    #[test]
    fn perron_vectors() {
        let ring = build_topology(&TopologyKind::Ring, 4, 0).unwrap();
        let p = perron_vector(&metropolis_weights(&ring).unwrap()).unwrap();
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 0.25, epsilon = 1e-12);
        }
        assert!(perron_vector(&CombinationMatrix::identity(2)).is_err());

        let a = CombinationMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75])).unwrap();
        let p = perron_vector(&a).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-12);
        assert!((a.matrix() * &p - &p).abs().max() < 1e-10);
    }

    #[test]
    fn mixing_rates() {
        assert_abs_diff_eq!(mixing_rate(&CombinationMatrix::averaging(5)).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mixing_rate(&CombinationMatrix::identity(3)).unwrap(), 1.0, epsilon = 1e-12);
        let a = metropolis_weights(&path3()).unwrap();
        assert_abs_diff_eq!(mixing_rate(&a).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        let asym = CombinationMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75])).unwrap();
        assert!(matches!(mixing_rate(&asym), Err(Error::Contract(_))));
    }

    #[test]
    fn incidence_factors() {
        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        let b = incidence_factor(&c2);
        assert_eq!(b.matrix(), &DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(b.gram(), *laplacian_from_topology(&c2).matrix());

        let p3 = path3();
        let diff = incidence_factor(&p3).gram() - laplacian_from_topology(&p3).matrix();
        assert!(diff.abs().max() < 1e-12);

        let empty = Topology::unweighted(3, []).unwrap();
        let b = incidence_factor(&empty);
        assert_eq!(b.edge_count(), 0);
        assert_eq!(b.gram(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn variation_measure_cases() {
        let l = laplacian_from_topology(&path3());
        let same = NetworkVector::replicate(&[1.5, -2.0], 3);
        assert_abs_diff_eq!(variation_measure(&same, &l).unwrap(), 0.0, epsilon = 1e-12);

        let w = NetworkVector::from_blocks(&[[0.0], [1.0], [2.0]]).unwrap();
        assert_abs_diff_eq!(variation_measure(&w, &l).unwrap(), 2.0, epsilon = 1e-12);

        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        let w = NetworkVector::from_blocks(&[[0.0], [1.0]]).unwrap();
        assert_abs_diff_eq!(
            variation_measure(&w, &laplacian_from_topology(&c2)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let bad = NetworkVector::zeros(2, 1);
        assert!(matches!(variation_measure(&bad, &l), Err(Error::Shape { .. })));
    }

    #[test]
    fn link_failure_and_periodic_realizations() {
        let ring = build_topology(&TopologyKind::Ring, 5, 0).unwrap();
        let a = metropolis_weights(&ring).unwrap();
        assert_eq!(realize_link_failures(&a, 1.0, 3, 9).unwrap(), a);
        assert!(realize_link_failures(&a, 0.0, 3, 9).is_err());
        assert!(realize_link_failures(&a, 1.5, 3, 9).is_err());

        let r1 = realize_link_failures(&a, 0.5, 7, 11).unwrap();
        let r2 = realize_link_failures(&a, 0.5, 7, 11).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.is_doubly_stochastic(1e-12) && r1.is_symmetric(1e-15));

        for i in 0..4 {
            assert_eq!(periodic_matrix(3, i, 1).unwrap(), CombinationMatrix::averaging(3));
        }
        assert_eq!(periodic_matrix(3, 2, 5).unwrap(), CombinationMatrix::identity(3));
        assert!(periodic_matrix(3, 2, 0).is_err());
    }

    #[test]
    fn complete2_dropped_edge_gives_identity() {
        let c2 = build_topology(&TopologyKind::Complete, 2, 0).unwrap();
        let a = metropolis_weights(&c2).unwrap();
        let dropped = (0..64)
            .map(|i| realize_link_failures(&a, 0.5, i, 3).unwrap())
            .find(|m| m.entry(0, 1) == 0.0)
            .expect("some iteration drops the edge");
        assert_eq!(dropped.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn network_bundle() {
        let ring = build_topology(&TopologyKind::Ring, 6, 0).unwrap();
        let net = Network::new(ring, WeightRule::Metropolis).unwrap();
        let gram = net.penalty_incidence.gram();
        let expect = DMatrix::identity(6, 6) - net.combination.matrix();
        assert!((gram - &expect).abs().max() < 1e-12);
        assert!((net.penalty_laplacian.matrix() - expect).abs().max() < 1e-12);
        assert!(net.stats.connected);
        let lam = net.stats.mixing_rate.unwrap();
        assert!(lam > 0.0 && lam < 1.0);
    }
}
