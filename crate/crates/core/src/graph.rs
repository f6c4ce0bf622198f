//! Attributed graph storage, GCN normalization and neighborhood queries.
//!
//! Adjacency is kept in CSR form with both directions of every undirected
//! edge stored and each row sorted ascending, so iteration order is fixed.

use std::collections::BTreeSet;

use crate::error::{GgadError, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    features: DenseMatrix,
    labels: Option<Vec<u8>>,
}

impl Graph {
    /// Builds a symmetric, deduplicated, self-loop-free graph. Self-loops in
    /// the input are dropped; direction is ignored.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(GgadError::FeatureShapeMismatch {
                rows: features.rows(),
                expected: num_nodes,
            });
        }
        for node in 0..num_nodes {
            if let Some(col) = features.row(node).iter().position(|v| !v.is_finite()) {
                return Err(GgadError::NonFiniteFeature { node, col });
            }
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(GgadError::CountMismatch(format!(
                    "{} labels for {num_nodes} nodes",
                    l.len()
                )));
            }
        }
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(GgadError::EndpointOutOfRange { node, num_nodes });
                }
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut indptr = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            indptr[u + 1] += 1;
        }
        for i in 0..num_nodes {
            indptr[i + 1] += indptr[i];
        }
        let indices = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Self { num_nodes, indptr, indices, features, labels })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.indptr[v + 1] - self.indptr[v]
    }

    /// Sorted neighbors of `v`. Panics if `v` is out of range.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes)
            .flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
            .filter(|(u, v)| u < v)
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes {
            return Err(GgadError::NodeOutOfRange { node: v, num_nodes: self.num_nodes });
        }
        Ok(())
    }
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` in CSR form, self-loops merged into sorted rows.
///
/// `degrees` are raw degrees (without the self-loop) of the graph the
/// weights were computed from; a restricted copy keeps the original values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    degrees: Vec<usize>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Column indices and weights of row `v`, self-loop included.
    pub fn row(&self, v: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[v]..self.indptr[v + 1];
        (&self.indices[r.clone()], &self.weights[r])
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let (cols, w) = self.row(u);
        cols.binary_search(&v).ok().map(|i| w[i])
    }

    /// Neighbors of `v` within this structure, self-loop excluded.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(v).0.iter().copied().filter(move |&u| u != v)
    }

    pub fn neighbor_count(&self, v: usize) -> usize {
        self.row(v).0.len() - 1
    }

    /// Keeps only the rows/columns in `nodes` (sorted, unique). Local id `i`
    /// corresponds to `nodes[i]`; weights and degrees are copied unchanged.
    pub fn restrict(&self, nodes: &[usize]) -> NormalizedAdjacency {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut indptr = Vec::with_capacity(nodes.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for &v in nodes {
            let (cols, w) = self.row(v);
            for (&u, &wu) in cols.iter().zip(w) {
                if local[u] != usize::MAX {
                    indices.push(local[u]);
                    weights.push(wu);
                }
            }
            indptr.push(indices.len());
        }
        let degrees = nodes.iter().map(|&v| self.degrees[v]).collect();
        NormalizedAdjacency { indptr, indices, weights, degrees }
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.num_nodes();
        let mut m = DenseMatrix::zeros(n, n);
        for v in 0..n {
            let (cols, w) = self.row(v);
            for (&u, &wu) in cols.iter().zip(w) {
                m.set(v, u, wu);
            }
        }
        m
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let degrees: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::with_capacity(2 * g.num_edges() + n);
    let mut weights = Vec::with_capacity(2 * g.num_edges() + n);
    for v in 0..n {
        let nbrs = g.neighbors(v);
        let split = nbrs.partition_point(|&u| u < v);
        let row = nbrs[..split].iter().chain(std::iter::once(&v)).chain(&nbrs[split..]);
        for &u in row {
            indices.push(u);
            weights.push(inv_sqrt[v] * inv_sqrt[u]);
        }
        indptr.push(indices.len());
    }
    NormalizedAdjacency { indptr, indices, weights, degrees }
}

/// Direct neighbors of `v`, ascending, `v` itself excluded.
pub fn ego_network(g: &Graph, v: usize) -> Result<Vec<usize>> {
    g.check_node(v)?;
    Ok(g.neighbors(v).to_vec())
}

/// All nodes within `k` hops of `seeds` (sorted) and the induced edges
/// `(u, v)`, `u < v`, in lexicographic order.
pub fn khop_closure(
    g: &Graph,
    seeds: &[usize],
    k: usize,
) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
    let nodes = khop_nodes(g, seeds, k)?;
    let mut inside = vec![false; g.num_nodes()];
    for &v in &nodes {
        inside[v] = true;
    }
    let mut edges = Vec::new();
    for &u in &nodes {
        for &v in g.neighbors(u) {
            if u < v && inside[v] {
                edges.push((u, v));
            }
        }
    }
    Ok((nodes, edges))
}

/// Node part of [`khop_closure`].
pub fn khop_nodes(g: &Graph, seeds: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut seen = vec![false; g.num_nodes()];
    let mut frontier = Vec::new();
    for &s in seeds {
        g.check_node(s)?;
        if !seen[s] {
            seen[s] = true;
            frontier.push(s);
        }
    }
    for _ in 0..k {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok((0..g.num_nodes()).filter(|&v| seen[v]).collect())
}

/// Sorted set of nodes, handy for tests and split bookkeeping.
pub fn node_set(nodes: &[usize]) -> BTreeSet<usize> {
    nodes.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges, DenseMatrix::zeros(n, 1), None).unwrap()
    }

    fn random_graph(rng: &mut Rng, n: usize, p: f64) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.uniform() < p {
                    edges.push((u, v));
                }
            }
        }
        plain(n, &edges)
    }

    #[test]
    fn build_symmetrizes() {
        let g = plain(2, &[(0, 1)]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn build_dedups() {
        assert_eq!(plain(2, &[(0, 1), (1, 0), (0, 1)]), plain(2, &[(0, 1)]));
    }

    #[test]
    fn build_drops_self_loops() {
        let g = plain(2, &[(0, 0), (0, 1)]);
        assert_eq!(g.num_edges(), 1);
        assert!(!g.has_edge(0, 0));
    }

    #[test]
    fn build_rejects_bad_input() {
        let err = Graph::new(2, &[(0, 5)], DenseMatrix::zeros(2, 1), None).unwrap_err();
        assert!(matches!(err, GgadError::EndpointOutOfRange { node: 5, num_nodes: 2 }));
        let err = Graph::new(3, &[], DenseMatrix::zeros(2, 1), None).unwrap_err();
        assert!(matches!(err, GgadError::FeatureShapeMismatch { rows: 2, expected: 3 }));
        let mut x = DenseMatrix::zeros(2, 2);
        x.set(1, 1, f64::NAN);
        let err = Graph::new(2, &[], x, None).unwrap_err();
        assert!(matches!(err, GgadError::NonFiniteFeature { node: 1, col: 1 }));
    }

    #[test]
    fn normalize_single_edge() {
        let adj = normalize_adjacency(&plain(2, &[(0, 1)]));
        for (u, v) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_abs_diff_eq!(adj.weight(u, v).unwrap(), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_isolated_node() {
        let adj = normalize_adjacency(&plain(3, &[(0, 1)]));
        assert_eq!(adj.row(2), (&[2usize][..], &[1.0][..]));
    }

    #[test]
    fn normalize_star() {
        let adj = normalize_adjacency(&plain(4, &[(0, 1), (0, 2), (0, 3)]));
        assert_abs_diff_eq!(adj.weight(0, 0).unwrap(), 0.25, epsilon = 1e-15);
        for leaf in 1..4 {
            assert_abs_diff_eq!(adj.weight(0, leaf).unwrap(), 0.353_553_390_593_273_8, epsilon = 1e-12);
        }
    }

    #[test]
    fn ego_examples() {
        let path = plain(3, &[(0, 1), (1, 2)]);
        assert_eq!(ego_network(&path, 1).unwrap(), vec![0, 2]);
        assert!(ego_network(&plain(2, &[]), 0).unwrap().is_empty());
        let tri = plain(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(ego_network(&tri, 0).unwrap(), vec![1, 2]);
        assert!(matches!(ego_network(&tri, 3), Err(GgadError::NodeOutOfRange { .. })));
    }

    #[test]
    fn khop_examples() {
        let chain = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let (nodes, edges) = khop_closure(&chain, &[0], 2).unwrap();
        assert_eq!(nodes, vec![0, 1, 2]);
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        let (nodes, edges) = khop_closure(&chain, &[0], 0).unwrap();
        assert_eq!(nodes, vec![0]);
        assert!(edges.is_empty());
        let star = plain(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let (nodes, edges) = khop_closure(&star, &[3], 2).unwrap();
        assert_eq!(nodes, vec![0, 1, 2, 3, 4]);
        assert_eq!(edges.len(), 4);
        assert!(matches!(khop_closure(&star, &[9], 1), Err(GgadError::NodeOutOfRange { .. })));
    }

    #[test]
    fn restrict_keeps_full_graph_weights() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let adj = normalize_adjacency(&g);
        let sub = adj.restrict(&[1, 2]);
        assert_eq!(sub.num_nodes(), 2);
        assert_eq!(sub.weight(0, 1), adj.weight(1, 2));
        assert_eq!(sub.weight(0, 0), adj.weight(1, 1));
        assert_eq!(sub.degrees(), &[2, 2]);
    }

    /// Dense `D̃^{-1/2}(A+I)D̃^{-1/2}` computed straight from the definition.
    fn dense_normalized(g: &Graph) -> DenseMatrix {
        let n = g.num_nodes();
        let mut a = DenseMatrix::identity(n);
        for (u, v) in g.edges() {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, a.get(i, j) / (deg[i] * deg[j]).sqrt());
            }
        }
        out
    }

    fn bfs_oracle(g: &Graph, seeds: &[usize], k: usize) -> BTreeSet<usize> {
        let mut set: BTreeSet<usize> = seeds.iter().copied().collect();
        for _ in 0..k {
            let mut next = set.clone();
            for &u in &set {
                next.extend(g.neighbors(u));
            }
            set = next;
        }
        set
    }

    proptest! {
        #[test]
        fn normalization_matches_dense(seed in 0u64..1000, n in 1usize..=50) {
            let g = random_graph(&mut Rng::new(seed), n, 0.15);
            let adj = normalize_adjacency(&g);
            let dense = adj.to_dense();
            prop_assert!(dense.max_abs_diff(&dense_normalized(&g)) <= 1e-12);
            for u in 0..n {
                prop_assert!(adj.weight(u, u).is_some());
                let (cols, w) = adj.row(u);
                for (&v, &wv) in cols.iter().zip(w) {
                    prop_assert!(wv > 0.0 && wv <= 1.0);
                    prop_assert_eq!(adj.weight(v, u), Some(wv));
                }
            }
        }

        #[test]
        fn khop_matches_bfs(seed in 0u64..1000, n in 1usize..=100, k in 0usize..4) {
            let mut rng = Rng::new(seed);
            let g = random_graph(&mut rng, n, 3.0 / n as f64);
            let seeds: Vec<usize> = (0..1 + rng.below(3)).map(|_| rng.below(n)).collect();
            let (nodes, edges) = khop_closure(&g, &seeds, k).unwrap();
            let oracle = bfs_oracle(&g, &seeds, k);
            prop_assert_eq!(node_set(&nodes), oracle.clone());
            let expected: Vec<(usize, usize)> = g
                .edges()
                .filter(|(u, v)| oracle.contains(u) && oracle.contains(v))
                .collect();
            prop_assert_eq!(edges, expected);
        }

        #[test]
        fn ego_is_one_hop_minus_self(seed in 0u64..500, n in 1usize..60) {
            let mut rng = Rng::new(seed);
            let g = random_graph(&mut rng, n, 0.1);
            let v = rng.below(n);
            let mut hop: Vec<usize> = khop_closure(&g, &[v], 1).unwrap().0;
            hop.retain(|&u| u != v);
            prop_assert_eq!(ego_network(&g, v).unwrap(), hop);
        }
    }
}
