//! Corporation-to-graph: turn one feature vector into a connected
//! feature-interaction graph by thresholding its self-outer product.
//!
//! The threshold starts at the largest interaction and is lowered by a fixed
//! step until the graph (ignoring self-loops) is connected. Once the
//! threshold reaches the smallest interaction every pair is adjacent, which
//! bounds the number of iterations.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Default threshold step for features scaled to `[0, 1]`.
pub const DEFAULT_STEP: f64 = 0.01;

/// The `d x d` interaction map `x xᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMap {
    values: Matrix,
}

impl InteractionMap {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn max(&self) -> f64 {
        self.values
            .as_slice()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn interaction_map(x: &[f64]) -> InteractionMap {
    let d = x.len();
    let mut values = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            values[(i, j)] = x[i] * x[j];
        }
    }
    InteractionMap { values }
}

/// Square binary matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                bits.push(f(i, j));
            }
        }
        Adjacency { n, bits }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Unordered off-diagonal pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// `A_ij = 1` iff `Ã_ij >= r`.
pub fn threshold_activate(map: &InteractionMap, r: f64) -> Adjacency {
    let v = &map.values;
    Adjacency::from_fn(map.dim(), |i, j| v[(i, j)] >= r)
}

/// Whether every node is reachable from node 0 through off-diagonal entries.
pub fn is_connected(adjacency: &Adjacency) -> Result<bool> {
    if !adjacency.is_symmetric() {
        return Err(Error::Contract("adjacency matrix is not symmetric".into()));
    }
    let n = adjacency.size();
    if n <= 1 {
        return Ok(true);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        for (j, visited) in seen.iter_mut().enumerate() {
            if j != i && !*visited && adjacency.get(i, j) {
                *visited = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    Ok(reached == n)
}

/// Per-corporation graph. Node `i` carries the scalar attribute `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    attrs: Vec<f64>,
    adjacency: Adjacency,
    threshold: f64,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    iterations: usize,
}

impl FeatureGraph {
    fn assemble(attrs: Vec<f64>, adjacency: Adjacency, threshold: f64, iterations: usize) -> Self {
        let edges = adjacency.edges();
        let mut neighbors = vec![Vec::new(); attrs.len()];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        FeatureGraph {
            attrs,
            adjacency,
            threshold,
            edges,
            neighbors,
            iterations,
        }
    }

    /// A graph with explicit edges; the diagonal of the adjacency follows the
    /// thresholding rule `x_i² >= threshold`.
    pub fn from_edges(attrs: Vec<f64>, edges: &[(usize, usize)], threshold: f64) -> Result<Self> {
        let n = attrs.len();
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = attrs[i] * attrs[i] >= threshold;
        }
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) is invalid for a graph with {n} nodes"
                )));
            }
            bits[i * n + j] = true;
            bits[j * n + i] = true;
        }
        Ok(Self::assemble(attrs, Adjacency { n, bits }, threshold, 0))
    }

    pub fn num_nodes(&self) -> usize {
        self.attrs.len()
    }

    pub fn attrs(&self) -> &[f64] {
        &self.attrs
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Off-diagonal neighbours of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Number of thresholds tried before the graph became connected.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Node relabeling: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let attrs = perm.iter().map(|&p| self.attrs[p]).collect();
        let adjacency = Adjacency::from_fn(n, |i, j| self.adjacency.get(perm[i], perm[j]));
        Self::assemble(attrs, adjacency, self.threshold, self.iterations)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph feature_graph {\n");
        let _ = writeln!(out, "  label=\"threshold={}\";", self.threshold);
        for (i, x) in self.attrs.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"x{i}={x}\"];");
        }
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "  n{i} -- n{j};");
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            d: self.num_nodes(),
            threshold: self.threshold,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            attrs: self.attrs.clone(),
        }
    }
}

/// Serialized graph: `{d, threshold, edges: [[i, j], ...], attrs: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub d: usize,
    pub threshold: f64,
    pub edges: Vec<[usize; 2]>,
    pub attrs: Vec<f64>,
}

impl TryFrom<GraphJson> for FeatureGraph {
    type Error = Error;

    fn try_from(g: GraphJson) -> Result<Self> {
        if g.attrs.len() != g.d {
            return Err(Error::Validation(format!(
                "graph declares d={} but carries {} attributes",
                g.d,
                g.attrs.len()
            )));
        }
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|e| (e[0], e[1])).collect();
        FeatureGraph::from_edges(g.attrs, &edges, g.threshold)
    }
}

/// Upper bound on thresholds tried by [`build_graph`].
pub fn max_iterations(map: &InteractionMap, step: f64) -> usize {
    ((map.max() - map.min()) / step).ceil() as usize + 1
}

/// Lowers the threshold from `max(Ã)` in decrements of `step` and returns the
/// graph at the first threshold whose adjacency is connected.
pub fn build_graph(x: &[f64], step: f64) -> Result<FeatureGraph> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("threshold step must be positive, got {step}")));
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot build a graph from an empty vector".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature {i} is {}", x[i])));
    }
    let map = interaction_map(x);
    let (max, min) = (map.max(), map.min());
    let last = max_iterations(&map, step) - 1;
    for k in 0..=last {
        // r_k = max - k * step, computed directly so the sequence does not drift
        let mut r = max - k as f64 * step;
        if k == last {
            r = r.min(min);
        }
        let adjacency = threshold_activate(&map, r);
        if is_connected(&adjacency)? {
            return Ok(FeatureGraph::assemble(x.to_vec(), adjacency, r, k + 1));
        }
    }
    unreachable!("a threshold at or below min(Ã) yields the complete graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interaction_map_examples() {
        assert_eq!(
            interaction_map(&[1.0, 1.0]).values(),
            &Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]])
        );
        assert_eq!(interaction_map(&[0.0; 4]).values(), &Matrix::zeros(4, 4));
        let x = [3.0, 2.0, 1.0];
        let m = interaction_map(&x);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.values()[(i, j)], x[i] * x[j]);
            }
        }
        assert_eq!(
            m.values(),
            &Matrix::from_rows(&[vec![9.0, 6.0, 3.0], vec![6.0, 4.0, 2.0], vec![3.0, 2.0, 1.0]])
        );
    }

    #[test]
    fn threshold_examples() {
        let m = interaction_map(&[3.0, 2.0, 1.0]);
        assert_eq!(threshold_activate(&m, f64::NEG_INFINITY).count_ones(), 9);
        let a = threshold_activate(&m, 6.0);
        let ones: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| a.get(i, j))
            .collect();
        assert_eq!(ones, vec![(0, 0), (0, 1), (1, 0)]);
        assert!(threshold_activate(&m, m.max()).count_ones() >= 1);
    }

    #[test]
    fn connectivity_examples() {
        let id = Adjacency::from_fn(3, |i, j| i == j);
        assert!(!is_connected(&id).unwrap());
        let path = Adjacency::from_fn(3, |i, j| i.abs_diff(j) == 1);
        assert!(is_connected(&path).unwrap());
        assert!(is_connected(&Adjacency::from_fn(1, |_, _| false)).unwrap());
        let asym = Adjacency::from_fn(2, |i, j| i == 0 && j == 1);
        assert!(matches!(is_connected(&asym), Err(Error::Contract(_))));
    }

    #[test]
    fn build_graph_examples() {
        let g = build_graph(&[1.0, 1.0], 0.5).unwrap();
        assert_eq!(g.threshold(), 1.0);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.iterations(), 1);

        let g = build_graph(&[3.0, 2.0, 1.0], 1.0).unwrap();
        assert_eq!(g.threshold(), 3.0);
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
        assert!(!g.adjacency().get(1, 2));

        let g = build_graph(&[0.0; 5], 0.01).unwrap();
        assert_eq!(g.threshold(), 0.0);
        assert_eq!(g.edges().len(), 10);
        assert_eq!(g.iterations(), 1);

        let g = build_graph(&[0.7], 0.01).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn build_graph_rejects_bad_step() {
        assert!(matches!(build_graph(&[1.0, 2.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(build_graph(&[1.0, 2.0], -0.1), Err(Error::Config(_))));
        assert!(matches!(build_graph(&[1.0, 2.0], f64::NAN), Err(Error::Config(_))));
    }

    #[test]
    fn negative_entries_allow_negative_threshold() {
        let g = build_graph(&[0.9, -0.8, 0.1], 0.05).unwrap();
        assert!(g.threshold() < 0.0);
        assert!(is_connected(g.adjacency()).unwrap());
    }

    #[test]
    fn json_and_dot_forms() {
        let g = build_graph(&[0.2, 0.9, 0.5, 0.4], 0.01).unwrap();
        let json = serde_json::to_string(&g.to_json()).unwrap();
        let back: GraphJson = serde_json::from_str(&json).unwrap();
        let rebuilt = FeatureGraph::try_from(back).unwrap();
        assert_eq!(rebuilt.edges(), g.edges());
        assert_eq!(rebuilt.adjacency(), g.adjacency());
        let dot = g.to_dot();
        assert!(dot.starts_with("graph feature_graph {"));
        assert_eq!(dot.matches(" -- ").count(), g.edges().len());
    }

    fn edge_set(x: &[f64], r: f64) -> Vec<(usize, usize)> {
        threshold_activate(&interaction_map(x), r).edges()
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(
            x in prop::collection::vec(-1.0f64..1.0, 1..12),
            r1 in -1.0f64..1.0,
            r2 in -1.0f64..1.0,
        ) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let low = edge_set(&x, lo);
            for e in edge_set(&x, hi) {
                prop_assert!(low.contains(&e));
            }
        }

        #[test]
        fn interaction_map_is_symmetric_rank_one(x in prop::collection::vec(-2.0f64..2.0, 1..10)) {
            let m = interaction_map(&x);
            let v = m.values();
            for i in 0..x.len() {
                prop_assert!(v[(i, i)] >= 0.0);
                for j in 0..x.len() {
                    prop_assert_eq!(v[(i, j)], v[(j, i)]);
                    // every 2x2 minor vanishes
                    for k in 0..x.len() {
                        for l in 0..x.len() {
                            let minor = v[(i, j)] * v[(k, l)] - v[(i, l)] * v[(k, j)];
                            prop_assert!(minor.abs() < 1e-12);
                        }
                    }
                }
            }
        }

        #[test]
        fn build_graph_commutes_with_relabeling(
            x in prop::collection::vec(0.0f64..1.0, 2..16),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..x.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let px: Vec<f64> = perm.iter().map(|&p| x[p]).collect();

            let m = interaction_map(&x);
            let pm = interaction_map(&px);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    prop_assert_eq!(pm.values()[(i, j)], m.values()[(perm[i], perm[j])]);
                }
            }

            let g = build_graph(&x, 0.05).unwrap();
            let pg = build_graph(&px, 0.05).unwrap();
            prop_assert_eq!(pg.threshold(), g.threshold());
            prop_assert_eq!(pg, g.permuted(&perm));
        }
    }
}
