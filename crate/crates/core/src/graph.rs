//! Immutable simple undirected graphs with dense node ids.
//!
//! Adjacency is stored in compressed sparse row form with sorted neighbor
//! lists. Algorithms that peel nodes away keep their own alive-mask rather
//! than mutating the graph.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a normalized graph: self-loops are dropped, duplicates merged and
    /// every pair reordered so that `u < v`.
    pub fn from_edge_list(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            for node in [a, b] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::from_sorted_edges(n, edges))
    }

    /// `edges` must be sorted, deduplicated, in range and with `u < v`.
    fn from_sorted_edges(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        // Sorted edge order fills every neighbor list in ascending order for
        // the `v` side; the `u` side needs a sort afterwards.
        for &(u, v) in &edges {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Graph {
            n,
            edges,
            offsets,
            neighbors,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_sorted_edges(n, Vec::new())
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        Self::from_sorted_edges(n, edges)
    }

    pub fn path(n: usize) -> Self {
        let edges = (1..n).map(|v| (v - 1, v)).collect();
        Self::from_sorted_edges(n, edges)
    }

    /// Star with center 0 and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let edges = (1..=leaves).map(|v| (0, v)).collect();
        Self::from_sorted_edges(leaves + 1, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted list of edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn complement(&self) -> Graph {
        let mut edges = Vec::new();
        for u in 0..self.n {
            let mut nbrs = self.neighbors(u).iter().copied().peekable();
            for v in u + 1..self.n {
                while nbrs.next_if(|&w| w < v).is_some() {}
                if nbrs.next_if_eq(&v).is_none() {
                    edges.push((u, v));
                }
            }
        }
        Self::from_sorted_edges(self.n, edges)
    }

    /// Subgraph induced by `keep`, relabeled to `0..keep.len()` in the order
    /// given. The returned map sends new ids to original ids.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<(Graph, Vec<usize>)> {
        let mut new_id = vec![usize::MAX; self.n];
        for (i, &v) in keep.iter().enumerate() {
            if v >= self.n {
                return Err(Error::NodeOutOfRange { node: v, n: self.n });
            }
            new_id[v] = i;
        }
        let mut pairs = Vec::new();
        for &(u, v) in &self.edges {
            if new_id[u] != usize::MAX && new_id[v] != usize::MAX {
                pairs.push((new_id[u], new_id[v]));
            }
        }
        let mut map: Vec<usize> = vec![0; keep.len()];
        for v in 0..self.n {
            if new_id[v] != usize::MAX {
                map[new_id[v]] = v;
            }
        }
        Ok((Graph::from_edge_list(map.len(), &pairs)?, map))
    }

    fn membership(&self, set: &[usize]) -> Vec<bool> {
        let mut member = vec![false; self.n];
        for &v in set {
            if v < self.n {
                member[v] = true;
            }
        }
        member
    }

    /// Every pair of distinct members is adjacent.
    pub fn is_clique(&self, set: &[usize]) -> bool {
        if set.iter().any(|&v| v >= self.n) {
            return false;
        }
        let member = self.membership(set);
        let nodes: Vec<usize> = (0..self.n).filter(|&v| member[v]).collect();
        let k = nodes.len();
        nodes
            .iter()
            .all(|&v| self.neighbors(v).iter().filter(|&&u| member[u]).count() == k - 1)
    }

    /// Every edge has at least one endpoint in the set.
    pub fn is_vertex_cover(&self, set: &[usize]) -> bool {
        if set.iter().any(|&v| v >= self.n) {
            return false;
        }
        let member = self.membership(set);
        self.edges.iter().all(|&(u, v)| member[u] || member[v])
    }

    /// No edge has both endpoints in the set.
    pub fn is_independent_set(&self, set: &[usize]) -> bool {
        if set.iter().any(|&v| v >= self.n) {
            return false;
        }
        let member = self.membership(set);
        self.edges.iter().all(|&(u, v)| !(member[u] && member[v]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_edge_list_normalizes() {
        let g = Graph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.degrees(), vec![1, 2, 1]);

        let g = Graph::from_edge_list(3, &[(0, 1), (1, 0), (2, 2)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn from_edge_list_rejects_out_of_range() {
        let err = Graph::from_edge_list(2, &[(0, 5)]).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { node: 5, n: 2 }));
    }

    #[test]
    fn complement_examples() {
        assert_eq!(Graph::complete(3).complement(), Graph::empty(3));
        assert_eq!(Graph::empty(3).complement(), Graph::complete(3));
        assert_eq!(Graph::path(3).complement().edges(), &[(0, 2)]);
    }

    #[test]
    fn induced_subgraph_examples() {
        let (h, map) = Graph::complete(3).induced_subgraph(&[0, 1]).unwrap();
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.edges(), &[(0, 1)]);
        assert_eq!(map, vec![0, 1]);

        let g = Graph::path(5);
        let all: Vec<usize> = (0..5).collect();
        let (h, map) = g.induced_subgraph(&all).unwrap();
        assert_eq!(h, g);
        assert_eq!(map, all);

        let (h, _) = Graph::path(3).induced_subgraph(&[0, 2]).unwrap();
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.edge_count(), 0);
    }

    #[test]
    fn predicates() {
        assert!(Graph::complete(3).is_clique(&[0, 1, 2]));
        let edge = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
        assert!(!edge.is_independent_set(&[0, 1]));
        assert!(Graph::path(3).is_vertex_cover(&[1]));
        assert!(!Graph::path(3).is_clique(&[0, 2]));
        assert!(Graph::empty(4).is_clique(&[]));
        assert!(Graph::empty(4).is_clique(&[2]));
        assert!(!Graph::empty(4).is_vertex_cover(&[7]));
    }

    #[test]
    fn adjacency_matches_edges() {
        let g = Graph::from_edge_list(5, &[(3, 0), (4, 0), (1, 0), (2, 3)]).unwrap();
        assert_eq!(g.neighbors(0), &[1, 3, 4]);
        assert_eq!(g.neighbors(3), &[0, 2]);
        assert!(g.has_edge(2, 3) && g.has_edge(3, 2) && !g.has_edge(1, 2));
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..12).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..40)
                .prop_map(move |pairs| Graph::from_edge_list(n, &pairs).unwrap())
        })
    }

    fn arb_graph_and_set() -> impl Strategy<Value = (Graph, Vec<usize>)> {
        arb_graph().prop_flat_map(|g| {
            let n = g.node_count();
            (
                Just(g),
                proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=n),
            )
        })
    }

    proptest! {
        #[test]
        fn complement_is_involution(g in arb_graph()) {
            prop_assert_eq!(g.complement().complement(), g);
        }

        #[test]
        fn independent_set_is_clique_in_complement((g, s) in arb_graph_and_set()) {
            prop_assert_eq!(g.is_independent_set(&s), g.complement().is_clique(&s));
        }

        #[test]
        fn cover_complements_independent_set((g, s) in arb_graph_and_set()) {
            let rest: Vec<usize> = (0..g.node_count()).filter(|v| !s.contains(v)).collect();
            prop_assert_eq!(g.is_vertex_cover(&s), g.is_independent_set(&rest));
        }

        #[test]
        fn invariants_hold(g in arb_graph()) {
            let mut total = 0;
            for v in 0..g.node_count() {
                prop_assert_eq!(g.degree(v), g.neighbors(v).len());
                prop_assert!(!g.neighbors(v).contains(&v));
                prop_assert!(g.neighbors(v).windows(2).all(|w| w[0] < w[1]));
                total += g.degree(v);
            }
            prop_assert_eq!(total, 2 * g.edge_count());
            for &(u, v) in g.edges() {
                prop_assert!(u < v && g.has_edge(u, v));
            }
        }
    }
}
