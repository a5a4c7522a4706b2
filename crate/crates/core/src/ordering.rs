//! Total orders from scores versus total orders from pairwise comparators.
//!
//! Ranking by a per-document score needs one score per document and a sort.
//! The pairwise route builds the full preference graph, `O(n^2)` comparator
//! calls, and topologically sorts it. When the comparator is a
//! sign-preserving function of a score difference the two agree, which is
//! what [`verify_theorem1`] checks; the quadratic route exists only as that
//! oracle.

use std::collections::{BTreeSet, HashSet, VecDeque};

use crate::{Error, Result};

/// Indices ordered by descending score; equal scores keep ascending index order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Directed graph with an edge `(i, j)` whenever `d_i` is preferred to `d_j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PreferenceGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl PreferenceGraph {
    pub fn new(n: usize) -> Self {
        PreferenceGraph {
            n,
            edges: BTreeSet::new(),
        }
    }

    /// Adds an edge. Self-loops and out-of-range vertices are rejected.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::Precondition(format!(
                "invalid edge ({i}, {j}) in a graph of {} vertices",
                self.n
            )));
        }
        self.edges.insert((i, j));
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// True when exactly one of `(i, j)` and `(j, i)` is present for every `i != j`.
    pub fn is_tournament(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.has_edge(i, j) != self.has_edge(j, i)))
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
        }
        adj
    }
}

/// Evaluates `h` on every ordered pair and keeps the positive ones as edges.
pub fn build_graph<H: FnMut(usize, usize) -> f64>(mut h: H, n: usize) -> Result<PreferenceGraph> {
    let mut g = PreferenceGraph::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let (fwd, back) = (h(i, j), h(j, i));
            match (fwd > 0.0, back > 0.0) {
                (true, true) => return Err(Error::Inconsistent(i, j)),
                (true, false) => {
                    g.edges.insert((i, j));
                }
                (false, true) => {
                    g.edges.insert((j, i));
                }
                (false, false) => {}
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopoOutcome {
    /// Every edge points forward in `order`. `unique` holds when consecutive
    /// vertices are all joined by an edge, i.e. the order is a Hamiltonian path.
    Sorted { order: Vec<usize>, unique: bool },
    /// Vertices left with non-zero in-degree when Kahn's algorithm stalled.
    Cycle { witness: Vec<usize> },
}

/// Kahn's algorithm; ready vertices are taken lowest index first.
pub fn topo_sort(g: &PreferenceGraph) -> TopoOutcome {
    let adj = g.adjacency();
    let mut indegree = vec![0usize; g.n];
    for &(_, j) in &g.edges {
        indegree[j] += 1;
    }
    let mut ready: VecDeque<usize> = (0..g.n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(g.n);
    while let Some(v) = ready.pop_front() {
        order.push(v);
        for &w in &adj[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.push_back(w);
            }
        }
    }
    if order.len() < g.n {
        let witness = (0..g.n).filter(|&v| indegree[v] > 0).collect();
        return TopoOutcome::Cycle { witness };
    }
    let unique = order.windows(2).all(|w| g.has_edge(w[0], w[1]));
    TopoOutcome::Sorted { order, unique }
}

/// Checks that the unique topological sort of the tournament induced by
/// `h(i, j) = psi(f(i) - f(j))` equals the descending-score order of `f`.
///
/// `psi` must preserve sign. Tied scores violate the no-tie hypothesis and
/// are reported as a precondition error.
pub fn verify_theorem1<P: Fn(f64) -> f64>(scores: &[f64], psi: P) -> Result<bool> {
    let mut seen = HashSet::new();
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Precondition(format!("score {i} is not finite")));
        }
        // +0.0 and -0.0 tie, so compare on a canonical bit pattern
        if !seen.insert((s + 0.0).to_bits()) {
            return Err(Error::Precondition(format!("score tie at value {s}")));
        }
    }
    let g = build_graph(|i, j| psi(scores[i] - scores[j]), scores.len())?;
    if !g.is_tournament() {
        return Ok(false);
    }
    match topo_sort(&g) {
        TopoOutcome::Sorted { order, unique } => Ok(unique && order == rank_by_score(scores)),
        TopoOutcome::Cycle { .. } => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> PreferenceGraph {
        let mut g = PreferenceGraph::new(n);
        for &(i, j) in edges {
            g.add_edge(i, j).unwrap();
        }
        g
    }

    #[test]
    fn rank_by_score_cases() {
        assert_eq!(rank_by_score(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_by_score(&[3.0, 2.0, 1.0, 0.0]), vec![0, 1, 2, 3]);
        assert_eq!(rank_by_score(&[7.0]), vec![0]);
        assert_eq!(rank_by_score(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
        assert!(rank_by_score(&[]).is_empty());
    }

    #[test]
    fn build_graph_cases() {
        let g = build_graph(|i, j| if (i, j) == (0, 1) { 1.0 } else { -1.0 }, 2).unwrap();
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(build_graph(|_, _| 1.0, 0).unwrap().num_edges(), 0);

        let f = [0.3, -1.0, 2.5, 0.7, 1.1];
        let g = build_graph(|i, j| f[i] - f[j], f.len()).unwrap();
        assert_eq!(g.num_edges(), f.len() * (f.len() - 1) / 2);
        assert!(g.is_tournament());
    }

    #[test]
    fn inconsistent_comparator_rejected() {
        assert!(matches!(build_graph(|_, _| 1.0, 3), Err(Error::Inconsistent(0, 1))));
    }

    #[test]
    fn topo_sort_cases() {
        assert_eq!(
            topo_sort(&graph(3, &[(0, 1), (1, 2)])),
            TopoOutcome::Sorted { order: vec![0, 1, 2], unique: true }
        );
        assert!(matches!(topo_sort(&graph(3, &[(0, 1), (1, 2), (2, 0)])), TopoOutcome::Cycle { ref witness } if witness == &vec![0, 1, 2]));
        match topo_sort(&graph(3, &[(0, 1), (0, 2)])) {
            TopoOutcome::Sorted { order, unique } => {
                assert_eq!(order[0], 0);
                assert!(!unique);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(graph(2, &[]).add_edge(1, 1).is_err());
    }

    #[test]
    fn theorem1_small_cases() {
        assert!(verify_theorem1(&[0.4], |x| x).unwrap());
        assert!(verify_theorem1(&[], |x| x).unwrap());
        assert!(matches!(verify_theorem1(&[1.0, 2.0, 1.0], |x| x), Err(Error::Precondition(_))));
        assert!(matches!(verify_theorem1(&[0.0, -0.0], |x| x), Err(Error::Precondition(_))));
    }

    #[test]
    fn theorem1_holds_for_random_scores() {
        for n in 1..=8 {
            for seed in 0..100 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + n as u64);
                let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
                assert!(verify_theorem1(&f, |x| x).unwrap());
                assert!(verify_theorem1(&f, |x| x * x * x).unwrap());
                assert!(verify_theorem1(&f, |x| x.tanh()).unwrap());
            }
        }
    }

    #[test]
    fn sign_flipping_psi_reverses_the_order() {
        let f = [0.2, 1.5, -0.7, 0.9];
        assert!(!verify_theorem1(&f, |x| -x).unwrap());
        let g = build_graph(|i, j| -(f[i] - f[j]), f.len()).unwrap();
        let mut expected = rank_by_score(&f);
        expected.reverse();
        assert_eq!(topo_sort(&g), TopoOutcome::Sorted { order: expected, unique: true });
    }

    #[test]
    fn reversing_one_tournament_edge_creates_a_cycle() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(3..9);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let f: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
            let mut g = build_graph(|i, j| f[i] - f[j], n).unwrap();
            // flip the edge between the top and the bottom document
            let order = rank_by_score(&f);
            let (top, bottom) = (order[0], order[n - 1]);
            g.edges.remove(&(top, bottom));
            g.edges.insert((bottom, top));
            assert!(matches!(topo_sort(&g), TopoOutcome::Cycle { .. }), "seed {seed}");
        }
    }
}
