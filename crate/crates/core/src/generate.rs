//! Seeded instance generators: RB-model graphs, random regular graphs and
//! Erdős–Rényi graphs.
//!
//! Every generator is a pure function of its parameters; the same seed yields
//! the same edge list on every platform (ChaCha8 stream).

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Full-restart budget for random regular graph generation.
pub const RRG_RETRY_BUDGET: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbParams {
    /// Number of cliques.
    pub groups: usize,
    /// Nodes per clique.
    pub group_size: usize,
    /// Constraint tightness in (0, 1).
    pub rho: f64,
    pub seed: u64,
}

impl RbParams {
    /// 200-node sizing (20 groups of 10).
    pub fn rb200(rho: f64, seed: u64) -> Self {
        RbParams {
            groups: 20,
            group_size: 10,
            rho,
            seed,
        }
    }

    /// 500-node sizing (25 groups of 20).
    pub fn rb500(rho: f64, seed: u64) -> Self {
        RbParams {
            groups: 25,
            group_size: 20,
            rho,
            seed,
        }
    }

    /// 1000-node sizing (40 groups of 25).
    pub fn rb1000(rho: f64, seed: u64) -> Self {
        RbParams {
            groups: 40,
            group_size: 25,
            rho,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::InvalidParameter(format!(
                "RB groups must be >= 2, got {}",
                self.groups
            )));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "RB group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "RB rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Number of constraint iterations: round(r * groups * ln(groups)) with
    /// r = -ln(group_size) / (ln(groups) * ln(1 - rho)).
    pub fn iterations(&self) -> usize {
        let n = self.groups as f64;
        let a = (self.group_size as f64).ln() / n.ln();
        let r = -a / (1.0 - self.rho).ln();
        (r * n * n.ln()).round() as usize
    }

    /// Cross-group pairs added per iteration: round(rho * group_size^2).
    pub fn pairs_per_iteration(&self) -> usize {
        (self.rho * (self.group_size * self.group_size) as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrgParams {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// RB-model graph: `groups` disjoint cliques of `group_size` nodes joined by
/// random cross-group edges. Any independent set has at most `groups` nodes.
pub fn gen_rb(p: &RbParams) -> Result<Graph> {
    p.validate()?;
    let k = p.group_size;
    let v = p.groups * k;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut edges = Vec::new();
    for g in 0..p.groups {
        let base = g * k;
        for a in 0..k {
            for b in a + 1..k {
                edges.push((base + a, base + b));
            }
        }
    }

    let per_iter = p.pairs_per_iteration();
    let mut chosen = HashSet::with_capacity(per_iter);
    for _ in 0..p.iterations() {
        let g1 = rng.gen_range(0..p.groups);
        let mut g2 = rng.gen_range(0..p.groups - 1);
        if g2 >= g1 {
            g2 += 1;
        }
        chosen.clear();
        while chosen.len() < per_iter {
            let a = g1 * k + rng.gen_range(0..k);
            let b = g2 * k + rng.gen_range(0..k);
            if chosen.insert((a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    Graph::from_edge_list(v, &edges)
}

/// Uniform-ish random `d`-regular simple graph by stub pairing with local
/// re-pairing of conflicting stubs; a round that gets stuck restarts from
/// scratch, up to [`RRG_RETRY_BUDGET`] times.
pub fn gen_rrg(p: &RrgParams) -> Result<Graph> {
    if (p.n * p.d) % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "n*d must be even (n={}, d={})",
            p.n, p.d
        )));
    }
    if p.d >= p.n && !(p.d == 0 && p.n == 0) {
        return Err(Error::InvalidParameter(format!(
            "degree {} must be smaller than node count {}",
            p.d, p.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for _ in 0..RRG_RETRY_BUDGET {
        if let Some(edges) = try_pairing(p.n, p.d, &mut rng) {
            return Graph::from_edge_list(p.n, &edges);
        }
    }
    Err(Error::GenerationFailed {
        n: p.n,
        d: p.d,
        attempts: RRG_RETRY_BUDGET,
    })
}

fn try_pairing(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(n * d / 2);
    let mut order = Vec::with_capacity(n * d / 2);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();

    while !stubs.is_empty() {
        // BTreeMap keeps leftover stubs in a deterministic order.
        let mut leftover: BTreeMap<usize, usize> = BTreeMap::new();
        stubs.shuffle(rng);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && edges.insert((a, b)) {
                order.push((a, b));
            } else {
                *leftover.entry(a).or_default() += 1;
                *leftover.entry(b).or_default() += 1;
            }
        }
        if !leftover.is_empty() && !has_suitable_pair(&edges, &leftover) {
            return None;
        }
        stubs = leftover
            .into_iter()
            .flat_map(|(v, c)| std::iter::repeat_n(v, c))
            .collect();
    }
    Some(order)
}

fn has_suitable_pair(edges: &HashSet<(usize, usize)>, leftover: &BTreeMap<usize, usize>) -> bool {
    let nodes: Vec<usize> = leftover.keys().copied().collect();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            if !edges.contains(&(a, b)) {
                return true;
            }
        }
    }
    false
}

/// Erdős–Rényi G(n, p): each unordered pair is an edge independently with
/// probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "edge probability must lie in [0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edge_list(n, &edges)
}
