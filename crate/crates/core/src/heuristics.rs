//! Greedy baselines for MIS, MVC and MC.
//!
//! Degree-driven peeling keeps one bucket per current degree; each bucket is
//! a min-heap of node ids so ties resolve to the lowest index. Stale entries
//! are skipped on pop.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::problems::{DiscreteSolution, ProblemKind};

struct DegreeBuckets {
    buckets: Vec<BinaryHeap<Reverse<usize>>>,
    degree: Vec<usize>,
    alive: Vec<bool>,
}

impl DegreeBuckets {
    fn new(g: &Graph) -> Self {
        let degree = g.degrees();
        let max = degree.iter().copied().max().unwrap_or(0);
        let mut buckets = vec![BinaryHeap::new(); max + 1];
        for (v, &d) in degree.iter().enumerate() {
            buckets[d].push(Reverse(v));
        }
        DegreeBuckets {
            buckets,
            degree,
            alive: vec![true; g.node_count()],
        }
    }

    fn is_current(&self, v: usize, d: usize) -> bool {
        self.alive[v] && self.degree[v] == d
    }

    /// Lowest-index live node in bucket `d`, if any.
    fn peek(&mut self, d: usize) -> Option<usize> {
        while let Some(&Reverse(v)) = self.buckets[d].peek() {
            if self.is_current(v, d) {
                return Some(v);
            }
            self.buckets[d].pop();
        }
        None
    }

    fn decrement(&mut self, v: usize) {
        self.degree[v] -= 1;
        let d = self.degree[v];
        self.buckets[d].push(Reverse(v));
    }

    /// Marks `v` dead and lowers the degree of its live neighbors.
    fn remove(&mut self, g: &Graph, v: usize) {
        self.alive[v] = false;
        for &u in g.neighbors(v) {
            if self.alive[u] {
                self.decrement(u);
            }
        }
    }
}

/// Random greedy: visit nodes in a seeded random order, keep each node whose
/// neighbors are all still unselected.
pub fn rga_mis(g: &Graph, seed: u64) -> DiscreteSolution {
    let n = g.node_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut alive = vec![true; n];
    let mut chosen = vec![false; n];
    for v in order {
        if !alive[v] {
            continue;
        }
        chosen[v] = true;
        alive[v] = false;
        for &u in g.neighbors(v) {
            alive[u] = false;
        }
    }
    DiscreteSolution::from_values(chosen)
}

/// Degree greedy: repeatedly take the live node of minimum current degree and
/// delete it with its neighbors.
pub fn dga_mis(g: &Graph) -> DiscreteSolution {
    let n = g.node_count();
    let mut q = DegreeBuckets::new(g);
    let mut chosen = vec![false; n];
    let mut low = 0;
    let mut remaining = n;
    while remaining > 0 {
        let v = loop {
            if let Some(v) = q.peek(low) {
                break v;
            }
            low += 1;
        };
        chosen[v] = true;
        let mut doomed = vec![v];
        doomed.extend(g.neighbors(v).iter().copied().filter(|&u| q.alive[u]));
        for &u in &doomed {
            q.alive[u] = false;
        }
        remaining -= doomed.len();
        for &u in &doomed {
            for &w in g.neighbors(u) {
                if q.alive[w] {
                    q.decrement(w);
                    low = low.min(q.degree[w]);
                }
            }
        }
    }
    DiscreteSolution::from_values(chosen)
}

/// Max-degree greedy cover: take the node covering the most uncovered edges
/// until none remain.
pub fn greedy_mvc(g: &Graph) -> DiscreteSolution {
    let n = g.node_count();
    let mut q = DegreeBuckets::new(g);
    let mut chosen = vec![false; n];
    let mut high = q.buckets.len().saturating_sub(1);
    while high > 0 {
        match q.peek(high) {
            Some(v) => {
                chosen[v] = true;
                q.remove(g, v);
            }
            None => high -= 1,
        }
    }
    DiscreteSolution::from_values(chosen)
}

/// Clique via degree greedy on the complement graph.
pub fn toenshoff_greedy_mc(g: &Graph) -> DiscreteSolution {
    dga_mis(&g.complement())
}

/// The degree-driven baseline for `kind`.
pub fn greedy_baseline(kind: ProblemKind, g: &Graph) -> DiscreteSolution {
    match kind {
        ProblemKind::MaxIndependentSet => dga_mis(g),
        ProblemKind::MinVertexCover => greedy_mvc(g),
        ProblemKind::MaxClique => toenshoff_greedy_mc(g),
    }
}

/// Seeded random-greedy counterpart of [`greedy_baseline`]: RGA for MIS,
/// RGA on the complement for MC, and the complement of an RGA independent
/// set for MVC.
pub fn random_greedy(kind: ProblemKind, g: &Graph, seed: u64) -> DiscreteSolution {
    match kind {
        ProblemKind::MaxIndependentSet => rga_mis(g, seed),
        ProblemKind::MaxClique => rga_mis(&g.complement(), seed),
        ProblemKind::MinVertexCover => {
            DiscreteSolution::from_values(rga_mis(g, seed).values().iter().map(|b| !b).collect())
        }
    }
}
