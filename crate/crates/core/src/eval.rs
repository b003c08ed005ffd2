//! Multi-trial evaluation, approximation rates and summaries.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Instance, RefKind, Reference};
use crate::error::{Error, Result};
use crate::gin::{forward, FeatureInit, ModelParams};
use crate::graph::Graph;
use crate::heuristics::{
    dga_mis, greedy_baseline, greedy_mvc, random_greedy, rga_mis, toenshoff_greedy_mc,
};
use crate::problems::{
    discrete_objective, relaxed_loss, round_default, DiscreteSolution, ProblemKind, ProblemSpec,
    Sense,
};
use crate::train::finetune_one_step;

/// Approximation rate `found / reference`.
pub fn apr(found: f64, reference: f64, _sense: Sense) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::NonPositiveReference(reference));
    }
    Ok(found / reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Fast,
    Medium,
    Accurate,
    /// Accurate, then one fine-tune step on the best trial.
    FineTune,
}

impl Protocol {
    pub fn trials(self) -> usize {
        match self {
            Protocol::Fast => 1,
            Protocol::Medium => 4,
            Protocol::Accurate | Protocol::FineTune => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Fast => "fast",
            Protocol::Medium => "medium",
            Protocol::Accurate => "accurate",
            Protocol::FineTune => "finetune",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Protocol::Fast),
            "medium" => Ok(Protocol::Medium),
            "accurate" => Ok(Protocol::Accurate),
            "finetune" => Ok(Protocol::FineTune),
            other => Err(Error::InvalidParameter(format!(
                "unknown protocol '{other}'"
            ))),
        }
    }
}

/// Input features used at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalFeatures {
    /// Trial `t` seeds one random node.
    SingleNodeSeed,
    /// Trial 0 uses the degree greedy solution, later trials seeded random
    /// greedy solutions.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub features: EvalFeatures,
    /// Report the greedy feature solution when the model does worse.
    pub fallback: bool,
    pub finetune_lr: f64,
    /// Fail on instances lacking a reference value.
    pub require_reference: bool,
    pub seed: u64,
    pub method: String,
}

impl EvalConfig {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        EvalConfig {
            protocol,
            features: EvalFeatures::SingleNodeSeed,
            fallback: true,
            finetune_lr: 5e-5,
            require_reference: false,
            seed,
            method: "model".into(),
        }
    }
}

/// Result of one method on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub instance_id: String,
    pub n: usize,
    pub m: usize,
    pub problem: ProblemKind,
    pub method: String,
    pub trials: usize,
    pub apr: Option<f64>,
    pub ref_kind: Option<RefKind>,
    /// Reported objective; `None` when no feasible solution was found.
    pub objective: Option<f64>,
    pub feasible: bool,
    /// Best feasible objective of the model itself.
    pub model_objective: Option<f64>,
    /// Best greedy feature objective, when greedy features were used.
    pub greedy_objective: Option<f64>,
    pub used_fallback: bool,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    pub time_ms_forward: f64,
    pub time_ms_round: f64,
    pub time_ms_finetune: f64,
    pub solution: DiscreteSolution,
}

impl RunRecord {
    pub fn total_time_ms(&self) -> f64 {
        self.time_ms_forward + self.time_ms_round + self.time_ms_finetune
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-instance trial stream; the first `k` draws never depend on the
/// protocol, so trial sets nest.
fn trial_rng(seed: u64, instance_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv(instance_id.as_bytes()))
}

struct Trial {
    feat: FeatureInit,
    greedy: Option<DiscreteSolution>,
}

fn trial_inputs(cfg: &EvalConfig, kind: ProblemKind, inst: &Instance) -> Vec<Trial> {
    let g = &inst.graph;
    let n = g.node_count();
    let mut rng = trial_rng(cfg.seed, &inst.id);
    (0..cfg.protocol.trials())
        .map(|t| {
            let node = if n == 0 { 0 } else { rng.gen_range(0..n) };
            let rga_seed: u64 = rng.gen();
            match cfg.features {
                EvalFeatures::SingleNodeSeed => Trial {
                    feat: FeatureInit::SingleNodeSeed(node),
                    greedy: None,
                },
                EvalFeatures::Greedy => {
                    let sol = if t == 0 {
                        greedy_baseline(kind, g)
                    } else {
                        random_greedy(kind, g, rga_seed)
                    };
                    Trial {
                        feat: FeatureInit::GreedySolution(sol.clone()),
                        greedy: Some(sol),
                    }
                }
            }
        })
        .collect()
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn attach_reference(
    record: &mut RunRecord,
    reference: Option<Reference>,
    require: bool,
) -> Result<()> {
    match reference {
        Some(r) => {
            record.ref_kind = Some(r.kind);
            record.apr = match record.objective {
                Some(obj) if record.feasible => Some(apr(obj, r.value, record.problem.sense())?),
                _ => None,
            };
            Ok(())
        }
        None if require => Err(Error::MissingReference(record.instance_id.clone())),
        None => Ok(()),
    }
}

fn evaluate_instance(
    model: &ModelParams,
    inst: &Instance,
    spec: &ProblemSpec,
    cfg: &EvalConfig,
) -> Result<RunRecord> {
    let g = &inst.graph;
    let sense = spec.sense();
    let trials = trial_inputs(cfg, spec.kind, inst);
    let (mut t_fwd, mut t_round, mut t_ft) = (0.0, 0.0, 0.0);

    // best trial: feasible first, then objective, earliest on ties
    let mut best: Option<(usize, f64, bool, f64, DiscreteSolution)> = None;
    for (t, trial) in trials.iter().enumerate() {
        let start = Instant::now();
        let x = forward(model, g, &trial.feat)?;
        t_fwd += ms(start);
        let start = Instant::now();
        let sol = round_default(spec, g, &x)?;
        t_round += ms(start);
        let (obj, feasible) = discrete_objective(spec, g, &sol)?;
        let loss = relaxed_loss(spec, g, &x)?;
        let better = match &best {
            None => true,
            Some((_, bobj, bfeas, _, _)) => {
                (feasible && !bfeas) || (feasible == *bfeas && sense.better(obj, *bobj))
            }
        };
        if better {
            best = Some((t, obj, feasible, loss, sol));
        }
    }
    let (best_t, mut obj, mut feasible, loss_before, mut sol) =
        best.ok_or_else(|| Error::InvalidParameter("protocol with zero trials".into()))?;

    let mut loss_after = None;
    if cfg.protocol == Protocol::FineTune {
        let feat = &trials[best_t].feat;
        let start = Instant::now();
        let tuned = finetune_one_step(model, g, feat, spec, cfg.finetune_lr)?;
        t_ft += ms(start);
        let start = Instant::now();
        let x = forward(&tuned, g, feat)?;
        t_fwd += ms(start);
        let start = Instant::now();
        sol = round_default(spec, g, &x)?;
        t_round += ms(start);
        (obj, feasible) = discrete_objective(spec, g, &sol)?;
        loss_after = Some(relaxed_loss(spec, g, &x)?);
    }

    let model_objective = feasible.then_some(obj);
    let greedy_best = trials
        .iter()
        .filter_map(|t| t.greedy.as_ref())
        .map(|s| (discrete_objective(spec, g, s).map(|(o, _)| o), s))
        .try_fold(None::<(f64, &DiscreteSolution)>, |acc, (o, s)| {
            let o = o?;
            Ok::<_, Error>(match acc {
                Some((bo, _)) if !sense.better(o, bo) => acc,
                _ => Some((o, s)),
            })
        })?;
    let mut used_fallback = false;
    if cfg.fallback {
        if let Some((gobj, gsol)) = greedy_best {
            if !feasible || sense.better(gobj, obj) {
                obj = gobj;
                feasible = true;
                sol = gsol.clone();
                used_fallback = true;
            }
        }
    }

    let mut record = RunRecord {
        instance_id: inst.id.clone(),
        n: g.node_count(),
        m: g.edge_count(),
        problem: spec.kind,
        method: cfg.method.clone(),
        trials: trials.len(),
        apr: None,
        ref_kind: None,
        objective: feasible.then_some(obj),
        feasible,
        model_objective,
        greedy_objective: greedy_best.map(|(o, _)| o),
        used_fallback,
        loss_before: Some(loss_before),
        loss_after,
        time_ms_forward: t_fwd,
        time_ms_round: t_round,
        time_ms_finetune: t_ft,
        solution: sol,
    };
    attach_reference(&mut record, inst.reference, cfg.require_reference)?;
    Ok(record)
}

/// Evaluates `model` on every instance, one record per instance in input
/// order. Fine-tuned parameters never outlive their instance.
pub fn evaluate(
    model: &ModelParams,
    instances: &[Instance],
    spec: &ProblemSpec,
    cfg: &EvalConfig,
) -> Result<Vec<RunRecord>> {
    model.check()?;
    instances
        .par_iter()
        .map(|inst| evaluate_instance(model, inst, spec, cfg))
        .collect()
}

/// Classical solvers available as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Rga,
    Dga,
    GreedyMvc,
    Toenshoff,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Rga => "rga",
            Baseline::Dga => "dga",
            Baseline::GreedyMvc => "greedy-mvc",
            Baseline::Toenshoff => "toenshoff",
        }
    }

    pub fn solve(self, g: &Graph, seed: u64) -> DiscreteSolution {
        match self {
            Baseline::Rga => rga_mis(g, seed),
            Baseline::Dga => dga_mis(g),
            Baseline::GreedyMvc => greedy_mvc(g),
            Baseline::Toenshoff => toenshoff_greedy_mc(g),
        }
    }

    pub fn problem(self) -> ProblemKind {
        match self {
            Baseline::Rga | Baseline::Dga => ProblemKind::MaxIndependentSet,
            Baseline::GreedyMvc => ProblemKind::MinVertexCover,
            Baseline::Toenshoff => ProblemKind::MaxClique,
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rga" => Ok(Baseline::Rga),
            "dga" => Ok(Baseline::Dga),
            "greedy-mvc" => Ok(Baseline::GreedyMvc),
            "toenshoff" => Ok(Baseline::Toenshoff),
            other => Err(Error::InvalidParameter(format!(
                "unknown baseline '{other}'"
            ))),
        }
    }
}

/// Runs a heuristic on every instance; its wall time is reported as the
/// forward phase.
pub fn evaluate_baseline(
    baseline: Baseline,
    instances: &[Instance],
    seed: u64,
    require_reference: bool,
) -> Result<Vec<RunRecord>> {
    let spec = ProblemSpec::with_default_beta(baseline.problem());
    instances
        .par_iter()
        .map(|inst| {
            let g = &inst.graph;
            let start = Instant::now();
            let sol = baseline.solve(g, seed ^ fnv(inst.id.as_bytes()));
            let elapsed = ms(start);
            let (obj, feasible) = discrete_objective(&spec, g, &sol)?;
            let mut record = RunRecord {
                instance_id: inst.id.clone(),
                n: g.node_count(),
                m: g.edge_count(),
                problem: spec.kind,
                method: baseline.as_str().into(),
                trials: 1,
                apr: None,
                ref_kind: None,
                objective: feasible.then_some(obj),
                feasible,
                model_objective: None,
                greedy_objective: None,
                used_fallback: false,
                loss_before: None,
                loss_after: None,
                time_ms_forward: elapsed,
                time_ms_round: 0.0,
                time_ms_finetune: 0.0,
                solution: sol,
            };
            attach_reference(&mut record, inst.reference, require_reference)?;
            Ok(record)
        })
        .collect()
}

/// Per-instance best feasible objective across several runs, in the order
/// instance ids first appear.
pub fn best_found(runs: &[&[RunRecord]]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, Sense)> = Vec::new();
    for rec in runs.iter().flat_map(|r| r.iter()) {
        let Some(obj) = rec.objective.filter(|_| rec.feasible) else {
            continue;
        };
        let sense = rec.problem.sense();
        match out.iter_mut().find(|(id, _, _)| *id == rec.instance_id) {
            Some(entry) => {
                if sense.better(obj, entry.1) {
                    entry.1 = obj;
                }
            }
            None => out.push((rec.instance_id.clone(), obj, sense)),
        }
    }
    out.into_iter().map(|(id, v, _)| (id, v)).collect()
}

/// Re-scores records against best-found references.
pub fn apply_best_found(records: &mut [RunRecord], refs: &[(String, f64)]) -> Result<()> {
    for rec in records {
        let reference = refs
            .iter()
            .find(|(id, _)| *id == rec.instance_id)
            .map(|&(_, value)| Reference {
                value,
                kind: RefKind::BestFound,
            });
        attach_reference(rec, reference, false)?;
    }
    Ok(())
}

/// Mean and population standard deviation of the ApR over records that
/// have one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Records without a feasible solution.
    pub infeasible: usize,
    /// Mean wall time per graph, in seconds.
    pub seconds_per_graph: f64,
}

pub fn summarize(records: &[RunRecord]) -> Summary {
    let aprs: Vec<f64> = records.iter().filter_map(|r| r.apr).collect();
    let count = aprs.len();
    let (mean, std) = if count == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = aprs.iter().sum::<f64>() / count as f64;
        let var = aprs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / count as f64;
        (mean, var.sqrt())
    };
    let seconds_per_graph = if records.is_empty() {
        0.0
    } else {
        records.iter().map(RunRecord::total_time_ms).sum::<f64>() / records.len() as f64 / 1e3
    };
    Summary {
        mean,
        std,
        count,
        infeasible: records.iter().filter(|r| !r.feasible).count(),
        seconds_per_graph,
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}
