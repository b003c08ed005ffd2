//! Max clique, minimum vertex cover and maximum independent set as penalty
//! relaxations, with sequential rounding and an exhaustive oracle.
//!
//! All three relaxed losses are affine in every single coordinate, which is
//! what makes the coordinate-wise rounding monotone.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Hard node-count cap for [`exact_optimum`].
pub const EXACT_NODE_LIMIT: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    MaxClique,
    MinVertexCover,
    MaxIndependentSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl ProblemKind {
    pub fn sense(self) -> Sense {
        match self {
            ProblemKind::MinVertexCover => Sense::Minimize,
            ProblemKind::MaxClique | ProblemKind::MaxIndependentSet => Sense::Maximize,
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            ProblemKind::MaxClique => 2.0,
            ProblemKind::MinVertexCover => 5.0,
            ProblemKind::MaxIndependentSet => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::MaxClique => "mc",
            ProblemKind::MinVertexCover => "mvc",
            ProblemKind::MaxIndependentSet => "mis",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" | "max-clique" => Ok(ProblemKind::MaxClique),
            "mvc" | "vertex-cover" => Ok(ProblemKind::MinVertexCover),
            "mis" | "independent-set" => Ok(ProblemKind::MaxIndependentSet),
            other => Err(Error::InvalidParameter(format!(
                "unknown problem '{other}'"
            ))),
        }
    }
}

impl Sense {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Maximize => a > b,
            Sense::Minimize => a < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub beta: f64,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(ProblemSpec { kind, beta })
    }

    pub fn with_default_beta(kind: ProblemKind) -> Self {
        ProblemSpec {
            kind,
            beta: kind.default_beta(),
        }
    }

    pub fn sense(&self) -> Sense {
        self.kind.sense()
    }
}

/// Soft node assignment with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment(Vec<f64>);

impl SoftAssignment {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidParameter(format!(
                "soft assignment entry {bad} outside [0, 1]"
            )));
        }
        Ok(SoftAssignment(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Nodes sorted by descending value, ties by ascending index.
    pub fn confidence_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        order
    }
}

impl From<&DiscreteSolution> for SoftAssignment {
    fn from(x: &DiscreteSolution) -> Self {
        SoftAssignment(
            x.values
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }
}

/// Binary node assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscreteSolution {
    values: Vec<bool>,
}

impl DiscreteSolution {
    pub fn from_values(values: Vec<bool>) -> Self {
        DiscreteSolution { values }
    }

    pub fn from_selected(n: usize, selected: &[usize]) -> Result<Self> {
        let mut values = vec![false; n];
        for &v in selected {
            if v >= n {
                return Err(Error::NodeOutOfRange { node: v, n });
            }
            values[v] = true;
        }
        Ok(DiscreteSolution { values })
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&v| self.values[v]).collect()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }
}

fn check_len(g: &Graph, len: usize) -> Result<()> {
    if len != g.node_count() {
        return Err(Error::LengthMismatch {
            expected: g.node_count(),
            actual: len,
        });
    }
    Ok(())
}

fn loss_of(spec: &ProblemSpec, g: &Graph, x: &[f64]) -> f64 {
    let beta = spec.beta;
    match spec.kind {
        ProblemKind::MaxIndependentSet => {
            let inside: f64 = g.edges().iter().map(|&(i, j)| x[i] * x[j]).sum();
            -x.iter().sum::<f64>() + beta * inside
        }
        ProblemKind::MinVertexCover => {
            let uncovered: f64 = g
                .edges()
                .iter()
                .map(|&(i, j)| (1.0 - x[i]) * (1.0 - x[j]))
                .sum();
            x.iter().sum::<f64>() + beta * uncovered
        }
        ProblemKind::MaxClique => {
            let inside: f64 = g.edges().iter().map(|&(i, j)| x[i] * x[j]).sum();
            let total: f64 = x.iter().sum();
            let squares: f64 = x.iter().map(|v| v * v).sum();
            // sum over ordered pairs i != j of x_i x_j
            let ordered = total * total - squares;
            -(beta + 1.0) * inside + 0.5 * beta * ordered
        }
    }
}

/// Penalty relaxation `f_r(x) + beta * g_r(x)`.
pub fn relaxed_loss(spec: &ProblemSpec, g: &Graph, x: &SoftAssignment) -> Result<f64> {
    check_len(g, x.len())?;
    Ok(loss_of(spec, g, x.values()))
}

/// The relaxed loss evaluated at a binary point, i.e. `f(X) + beta * g(X)`.
pub fn penalized_objective(spec: &ProblemSpec, g: &Graph, x: &DiscreteSolution) -> Result<f64> {
    relaxed_loss(spec, g, &SoftAssignment::from(x))
}

pub fn is_feasible(kind: ProblemKind, g: &Graph, x: &DiscreteSolution) -> bool {
    let s = x.selected();
    match kind {
        ProblemKind::MaxClique => g.is_clique(&s),
        ProblemKind::MinVertexCover => g.is_vertex_cover(&s),
        ProblemKind::MaxIndependentSet => g.is_independent_set(&s),
    }
}

/// Number of selected nodes and whether the selection satisfies the
/// constraint.
pub fn discrete_objective(
    spec: &ProblemSpec,
    g: &Graph,
    x: &DiscreteSolution,
) -> Result<(f64, bool)> {
    check_len(g, x.len())?;
    Ok((x.count() as f64, is_feasible(spec.kind, g, x)))
}

/// Partial-sum state for sequential rounding. Each candidate evaluation costs
/// O(1) and each commit O(deg).
#[derive(Debug, Clone)]
pub struct RoundingState<'g> {
    spec: ProblemSpec,
    graph: &'g Graph,
    x: Vec<f64>,
    fixed: Vec<bool>,
    /// Sum of current values over each node's neighbors.
    neighbor_sum: Vec<f64>,
    total: f64,
    loss: f64,
}

impl<'g> RoundingState<'g> {
    pub fn new(spec: &ProblemSpec, g: &'g Graph, x: &SoftAssignment) -> Result<Self> {
        check_len(g, x.len())?;
        let x = x.values().to_vec();
        let neighbor_sum = (0..g.node_count())
            .map(|v| g.neighbors(v).iter().map(|&u| x[u]).sum())
            .collect();
        let total = x.iter().sum();
        let loss = loss_of(spec, g, &x);
        Ok(RoundingState {
            spec: *spec,
            graph: g,
            fixed: vec![false; x.len()],
            x,
            neighbor_sum,
            total,
            loss,
        })
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    /// d loss / d x_i holding every other coordinate at its current value.
    fn slope(&self, i: usize) -> f64 {
        let beta = self.spec.beta;
        let s = self.neighbor_sum[i];
        match self.spec.kind {
            ProblemKind::MaxIndependentSet => -1.0 + beta * s,
            ProblemKind::MinVertexCover => 1.0 - beta * (self.graph.degree(i) as f64 - s),
            ProblemKind::MaxClique => -(beta + 1.0) * s + beta * (self.total - self.x[i]),
        }
    }

    /// Loss with `x_i` set to 0 and to 1, everything else unchanged.
    pub fn candidate_losses(&self, i: usize) -> (f64, f64) {
        let slope = self.slope(i);
        let xi = self.x[i];
        (self.loss - slope * xi, self.loss + slope * (1.0 - xi))
    }

    pub fn set(&mut self, i: usize, value: bool) {
        let (l0, l1) = self.candidate_losses(i);
        let t = if value { 1.0 } else { 0.0 };
        let delta = t - self.x[i];
        for &u in self.graph.neighbors(i) {
            self.neighbor_sum[u] += delta;
        }
        self.total += delta;
        self.x[i] = t;
        self.fixed[i] = true;
        self.loss = if value { l1 } else { l0 };
    }

    /// Fixes `x_i` to the better binary value; ties go to 1 for maximization
    /// problems and to 0 for minimization.
    pub fn fix(&mut self, i: usize) -> bool {
        let (l0, l1) = self.candidate_losses(i);
        let value = match self.spec.sense() {
            Sense::Maximize => l1 <= l0,
            Sense::Minimize => l1 < l0,
        };
        self.set(i, value);
        value
    }

    pub fn into_solution(self) -> DiscreteSolution {
        DiscreteSolution::from_values(self.x.iter().map(|&v| v >= 0.5).collect())
    }
}

/// Rounding result with the loss after every step.
#[derive(Debug, Clone)]
pub struct RoundingTrace {
    pub solution: DiscreteSolution,
    pub initial_loss: f64,
    /// `step_losses[k]` is the loss after fixing `order[k]`.
    pub step_losses: Vec<f64>,
}

/// Sequential rounding in the given node order. `order` must be a
/// permutation of the nodes.
pub fn round_traced(
    spec: &ProblemSpec,
    g: &Graph,
    x: &SoftAssignment,
    order: &[usize],
) -> Result<RoundingTrace> {
    check_len(g, order.len())?;
    let mut state = RoundingState::new(spec, g, x)?;
    let initial_loss = state.loss();
    let mut step_losses = Vec::with_capacity(order.len());
    for &i in order {
        if i >= g.node_count() {
            return Err(Error::NodeOutOfRange {
                node: i,
                n: g.node_count(),
            });
        }
        if state.is_fixed(i) {
            return Err(Error::InvalidParameter(format!(
                "rounding order visits node {i} twice"
            )));
        }
        state.fix(i);
        step_losses.push(state.loss());
    }
    Ok(RoundingTrace {
        solution: state.into_solution(),
        initial_loss,
        step_losses,
    })
}

pub fn round(
    spec: &ProblemSpec,
    g: &Graph,
    x: &SoftAssignment,
    order: &[usize],
) -> Result<DiscreteSolution> {
    round_traced(spec, g, x, order).map(|t| t.solution)
}

/// Rounding in descending-confidence order.
pub fn round_default(
    spec: &ProblemSpec,
    g: &Graph,
    x: &SoftAssignment,
) -> Result<DiscreteSolution> {
    round(spec, g, x, &x.confidence_order())
}

/// Exhaustive optimum for graphs with at most [`EXACT_NODE_LIMIT`] nodes.
pub fn exact_optimum(spec: &ProblemSpec, g: &Graph) -> Result<(f64, DiscreteSolution)> {
    let n = g.node_count();
    if n > EXACT_NODE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: EXACT_NODE_LIMIT,
        });
    }
    let best = match spec.kind {
        ProblemKind::MaxIndependentSet => max_independent_set(g),
        ProblemKind::MaxClique => max_independent_set(&g.complement()),
        ProblemKind::MinVertexCover => {
            let full = if n == 0 { 0 } else { (1u32 << n) - 1 };
            full & !max_independent_set(g)
        }
    };
    let witness = DiscreteSolution::from_values((0..n).map(|v| best >> v & 1 == 1).collect());
    Ok((witness.count() as f64, witness))
}

/// Bitmask branch and bound; returns the members of a maximum independent set.
fn max_independent_set(g: &Graph) -> u32 {
    let n = g.node_count();
    let adj: Vec<u32> = (0..n)
        .map(|v| g.neighbors(v).iter().fold(0u32, |m, &u| m | 1 << u))
        .collect();
    let mut best = 0u32;
    let all = if n == 0 { 0 } else { u32::MAX >> (32 - n) };
    mis_branch(&adj, all, 0, &mut best);
    best
}

fn mis_branch(adj: &[u32], candidates: u32, current: u32, best: &mut u32) {
    if candidates == 0 {
        if current.count_ones() > best.count_ones() {
            *best = current;
        }
        return;
    }
    if current.count_ones() + candidates.count_ones() <= best.count_ones() {
        return;
    }
    // Branch on the candidate with the most candidate neighbors; a candidate
    // with at most one is always safe to take.
    let mut pick = candidates.trailing_zeros() as usize;
    let mut pick_deg = 0;
    let mut rest = candidates;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let d = (adj[v] & candidates).count_ones();
        if d <= 1 {
            mis_branch(
                adj,
                candidates & !(1 << v) & !adj[v],
                current | 1 << v,
                best,
            );
            return;
        }
        if d > pick_deg {
            pick = v;
            pick_deg = d;
        }
    }
    mis_branch(
        adj,
        candidates & !(1 << pick) & !adj[pick],
        current | 1 << pick,
        best,
    );
    mis_branch(adj, candidates & !(1 << pick), current, best);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuaranteeReport {
    /// `f(X) + beta * g(X)` of the rounded solution.
    pub rounded_penalized: f64,
    /// The rounded solution does not exceed the soft loss (1e-6 slack).
    pub bound_holds: bool,
    /// The soft loss was below beta, so feasibility is required.
    pub feasibility_required: bool,
    pub feasible: bool,
}

impl GuaranteeReport {
    pub fn passed(&self) -> bool {
        self.bound_holds && (!self.feasibility_required || self.feasible)
    }
}

pub fn guarantee_check(
    spec: &ProblemSpec,
    g: &Graph,
    loss_value: f64,
    x: &DiscreteSolution,
) -> Result<GuaranteeReport> {
    let rounded_penalized = penalized_objective(spec, g, x)?;
    Ok(GuaranteeReport {
        rounded_penalized,
        bound_holds: rounded_penalized <= loss_value + 1e-6,
        feasibility_required: loss_value < spec.beta,
        feasible: is_feasible(spec.kind, g, x),
    })
}
