//! EGN training, Meta-EGN meta-training and per-instance fine-tuning.
//!
//! Both trainers count budgets in optimizer steps. EGN walks shuffled epochs
//! batch by batch; Meta-EGN draws one random batch per step. Every inner
//! adaptation is a plain gradient step; only the outer update may be Adam.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::gin::{make_features, param_vars, record_forward, FeatureInit, ModelParams};
use crate::graph::Graph;
use crate::heuristics::greedy_baseline;
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState};
use crate::problems::{
    discrete_objective, round_default, ProblemKind, ProblemSpec, Sense, SoftAssignment,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterOptimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    /// Differentiates through the inner gradient step.
    Exact,
    /// Treats the adapted parameters as independent leaves.
    FirstOrder,
}

/// How node features are produced during training and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScheme {
    /// A fresh uniformly random seed node on every visit.
    RandomSeed,
    /// Indicator of the problem's greedy baseline solution.
    Greedy,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub optimizer: OuterOptimizer,
    pub meta_mode: MetaMode,
    pub eval_every: usize,
    pub features: FeatureScheme,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_problem(kind: ProblemKind) -> Self {
        TrainConfig {
            inner_lr: 5e-5,
            outer_lr: match kind {
                ProblemKind::MaxIndependentSet => 1e-4,
                ProblemKind::MaxClique | ProblemKind::MinVertexCover => 1e-3,
            },
            batch_size: 32,
            max_iters: 1000,
            optimizer: OuterOptimizer::Adam,
            meta_mode: MetaMode::Exact,
            eval_every: 50,
            features: FeatureScheme::RandomSeed,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.inner_lr > 0.0) {
            return bad("inner_lr must be positive");
        }
        if !(self.outer_lr > 0.0) {
            return bad("outer_lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }
}

/// Records the relaxed loss of an `n x 1` soft assignment.
pub fn record_loss<'g>(tape: &Tape<'g>, spec: &ProblemSpec, g: &'g Graph, x: Var) -> Var {
    let beta = spec.beta;
    // sum over edges of a_i b_i equals half of sum_i a_i (A a)_i
    let edge_products = |a: Var| {
        let na = tape.neighbor_sum(a, g);
        let s = tape.sum(tape.mul(a, na));
        tape.scale(s, 0.5)
    };
    match spec.kind {
        ProblemKind::MaxIndependentSet => {
            let count = tape.sum(x);
            let penalty = edge_products(x);
            tape.sub(tape.scale(penalty, beta), count)
        }
        ProblemKind::MinVertexCover => {
            let count = tape.sum(x);
            let y = tape.affine(x, -1.0, 1.0);
            let penalty = edge_products(y);
            tape.add(count, tape.scale(penalty, beta))
        }
        ProblemKind::MaxClique => {
            let inside = edge_products(x);
            let s = tape.sum(x);
            let sq = tape.sum(tape.mul(x, x));
            let pairs = tape.sub(tape.mul(s, s), sq);
            tape.sub(
                tape.scale(pairs, beta / 2.0),
                tape.scale(inside, beta + 1.0),
            )
        }
    }
}

/// Relaxed loss of the model output, evaluated without recording gradients.
pub fn instance_loss(
    params: &ModelParams,
    g: &Graph,
    feat: &FeatureInit,
    spec: &ProblemSpec,
) -> Result<f64> {
    let features = make_features(g, feat)?;
    loss_at(params, g, &features, spec)
}

fn loss_at(params: &ModelParams, g: &Graph, features: &Tensor, spec: &ProblemSpec) -> Result<f64> {
    params.check()?;
    let tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let x = tape.constant(features.clone());
    let out = record_forward(&tape, &params.config, &vars, g, x);
    Ok(tape.item(record_loss(&tape, spec, g, out)))
}

fn read_all(tape: &Tape<'_>, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| tape.value(v).clone()).collect()
}

/// Loss and its parameter gradient on one instance.
pub fn instance_grad(
    params: &ModelParams,
    g: &Graph,
    features: &Tensor,
    spec: &ProblemSpec,
) -> Result<(f64, Vec<Tensor>)> {
    params.check()?;
    let tape = Tape::new();
    let theta = param_vars(&tape, params);
    let x = tape.constant(features.clone());
    let out = record_forward(&tape, &params.config, &theta, g, x);
    let loss = record_loss(&tape, spec, g, out);
    let grads = tape.grad(loss, &theta)?;
    Ok((tape.item(loss), read_all(&tape, &grads)))
}

/// Outcome of one inner adaptation and its outer gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGrad {
    /// Loss at the shared parameters.
    pub pre_loss: f64,
    /// Loss at the adapted parameters.
    pub post_loss: f64,
    /// Gradient of `post_loss` with respect to the shared parameters.
    pub grads: Vec<Tensor>,
}

/// Meta-gradient of `theta -> loss(theta - alpha * grad loss(theta))` for an
/// arbitrary loss recorded by `loss` on `tape`.
pub fn maml_grad_on_tape<'g>(
    tape: &Tape<'g>,
    theta: &[Tensor],
    alpha: f64,
    mode: MetaMode,
    loss: impl Fn(&[Var]) -> Var,
) -> Result<MetaGrad> {
    let shared: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
    let l0 = loss(&shared);
    let inner = tape.grad(l0, &shared)?;
    let pre_loss = tape.item(l0);
    match mode {
        MetaMode::Exact => {
            let adapted: Vec<Var> = shared
                .iter()
                .zip(&inner)
                .map(|(&p, &g)| tape.sub(p, tape.scale(g, alpha)))
                .collect();
            let l1 = loss(&adapted);
            let outer = tape.grad(l1, &shared)?;
            Ok(MetaGrad {
                pre_loss,
                post_loss: tape.item(l1),
                grads: read_all(tape, &outer),
            })
        }
        MetaMode::FirstOrder => {
            let stepped = sgd_step(theta, &read_all(tape, &inner), alpha)?;
            let adapted: Vec<Var> = stepped.into_iter().map(|t| tape.param(t)).collect();
            let l1 = loss(&adapted);
            let outer = tape.grad(l1, &adapted)?;
            Ok(MetaGrad {
                pre_loss,
                post_loss: tape.item(l1),
                grads: read_all(tape, &outer),
            })
        }
    }
}

/// Meta-gradient of the relaxed loss on one instance.
pub fn meta_grad(
    params: &ModelParams,
    g: &Graph,
    features: &Tensor,
    spec: &ProblemSpec,
    alpha: f64,
    mode: MetaMode,
) -> Result<MetaGrad> {
    params.check()?;
    let tape = Tape::new();
    let x = tape.constant(features.clone());
    let cfg = params.config;
    maml_grad_on_tape(&tape, &params.tensors, alpha, mode, |theta| {
        let out = record_forward(&tape, &cfg, theta, g, x);
        record_loss(&tape, spec, g, out)
    })
}

/// One plain gradient step on a single instance; `params` is not modified.
pub fn finetune_one_step(
    params: &ModelParams,
    g: &Graph,
    feat: &FeatureInit,
    spec: &ProblemSpec,
    alpha: f64,
) -> Result<ModelParams> {
    let features = make_features(g, feat)?;
    let (_, grads) = instance_grad(params, g, &features, spec)?;
    params.with_tensors(sgd_step(&params.tensors, &grads, alpha)?)
}

/// `k` plain gradient steps, with the loss before each step and after the last.
pub fn finetune_trace(
    params: &ModelParams,
    g: &Graph,
    feat: &FeatureInit,
    spec: &ProblemSpec,
    alpha: f64,
    k: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("fine-tune needs k >= 1".into()));
    }
    let features = make_features(g, feat)?;
    let mut cur = params.clone();
    let mut losses = Vec::with_capacity(k + 1);
    for _ in 0..k {
        let (loss, grads) = instance_grad(&cur, g, &features, spec)?;
        losses.push(loss);
        cur = cur.with_tensors(sgd_step(&cur.tensors, &grads, alpha)?)?;
    }
    losses.push(loss_at(&cur, g, &features, spec)?);
    Ok((cur, losses))
}

pub fn finetune_k_steps(
    params: &ModelParams,
    g: &Graph,
    feat: &FeatureInit,
    spec: &ProblemSpec,
    alpha: f64,
    k: usize,
) -> Result<ModelParams> {
    finetune_trace(params, g, feat, spec, alpha, k).map(|(p, _)| p)
}

/// Objective of the trivially feasible solution: empty set, or every node
/// for a cover.
pub fn trivial_objective(kind: ProblemKind, g: &Graph) -> f64 {
    match kind {
        ProblemKind::MinVertexCover => g.node_count() as f64,
        ProblemKind::MaxClique | ProblemKind::MaxIndependentSet => 0.0,
    }
}

/// Validation summary; `apr` is present only when every instance has a
/// reference value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValScore {
    pub loss: f64,
    pub apr: Option<f64>,
}

impl ValScore {
    /// Strict improvement of `self` over `other`.
    pub fn better_than(&self, other: &ValScore, sense: Sense) -> bool {
        match (self.apr, other.apr) {
            (Some(a), Some(b)) => sense.better(a, b),
            _ => self.loss < other.loss,
        }
    }
}

/// One row of the training-dynamics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsRecord {
    pub iteration: usize,
    pub train_loss_pre_adapt: Option<f64>,
    pub train_loss_post_adapt: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_apr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ModelParams,
    pub iteration: usize,
    pub score: ValScore,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub best: Option<Snapshot>,
    pub dynamics: Vec<DynamicsRecord>,
}

impl TrainState {
    /// Best validation snapshot, or the current parameters without one.
    pub fn best_params(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.params, |s| &s.params)
    }
}

/// Per-instance feature source fixed at the start of training.
enum FeatureSource {
    Seeded,
    Fixed(Tensor),
}

fn prepare_sources(
    instances: &[Instance],
    kind: ProblemKind,
    scheme: FeatureScheme,
) -> Result<Vec<FeatureSource>> {
    instances
        .iter()
        .map(|inst| match scheme {
            FeatureScheme::RandomSeed => Ok(FeatureSource::Seeded),
            FeatureScheme::Greedy => Ok(FeatureSource::Fixed(make_features(
                &inst.graph,
                &FeatureInit::GreedySolution(greedy_baseline(kind, &inst.graph)),
            )?)),
            FeatureScheme::Constant => Ok(FeatureSource::Fixed(make_features(
                &inst.graph,
                &FeatureInit::Constant,
            )?)),
        })
        .collect()
}

fn draw_features(source: &FeatureSource, g: &Graph, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    match source {
        FeatureSource::Fixed(t) => Ok(t.clone()),
        FeatureSource::Seeded => {
            let n = g.node_count();
            if n == 0 {
                return Ok(Tensor::zeros(0, 1));
            }
            make_features(g, &FeatureInit::SingleNodeSeed(rng.gen_range(0..n)))
        }
    }
}

/// Mean loss and rounded quality over a validation split with fixed features.
pub fn validate(
    params: &ModelParams,
    val: &[Instance],
    features: &[Tensor],
    spec: &ProblemSpec,
) -> Result<ValScore> {
    let rows: Vec<(f64, Option<f64>)> = val
        .par_iter()
        .zip(features.par_iter())
        .map(|(inst, feat)| -> Result<(f64, Option<f64>)> {
            let g = &inst.graph;
            let x = crate::gin::forward_features(params, g, feat)?;
            let loss = crate::problems::relaxed_loss(spec, g, &x)?;
            let sol = round_default(spec, g, &x)?;
            let (obj, feasible) = discrete_objective(spec, g, &sol)?;
            let obj = if feasible {
                obj
            } else {
                trivial_objective(spec.kind, g)
            };
            let apr = match inst.reference {
                Some(r) if r.value > 0.0 => Some(obj / r.value),
                _ => None,
            };
            Ok((loss, apr))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(ValScore {
            loss: 0.0,
            apr: None,
        });
    }
    let m = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / m;
    let apr = rows
        .iter()
        .map(|r| r.1)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / m);
    Ok(ValScore { loss, apr })
}

#[derive(Clone, Copy)]
enum Method {
    Egn,
    Meta,
}

struct Trainer<'a> {
    spec: ProblemSpec,
    cfg: TrainConfig,
    train: &'a [Instance],
    sources: Vec<FeatureSource>,
    val: &'a [Instance],
    val_features: Vec<Tensor>,
}

impl<'a> Trainer<'a> {
    fn new(
        spec: ProblemSpec,
        cfg: TrainConfig,
        train: &'a [Instance],
        val: &'a [Instance],
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        let sources = prepare_sources(train, spec.kind, cfg.features)?;
        // validation seed nodes come from their own stream so they stay fixed
        let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a1d);
        let val_features = prepare_sources(val, spec.kind, cfg.features)?
            .iter()
            .zip(val)
            .map(|(s, inst)| draw_features(s, &inst.graph, &mut vrng))
            .collect::<Result<_>>()?;
        Ok(Trainer {
            spec,
            cfg,
            train,
            sources,
            val,
            val_features,
        })
    }

    fn evaluate(&self, state: &mut TrainState, record: &mut DynamicsRecord) -> Result<()> {
        if self.val.is_empty() {
            return Ok(());
        }
        let score = validate(&state.params, self.val, &self.val_features, &self.spec)?;
        record.val_loss = Some(score.loss);
        record.val_apr = score.apr;
        let improved = match &state.best {
            None => true,
            Some(best) => score.better_than(&best.score, self.spec.sense()),
        };
        if improved {
            state.best = Some(Snapshot {
                params: state.params.clone(),
                iteration: state.iteration,
                score,
            });
        }
        Ok(())
    }

    /// Batch mean of per-instance losses and gradients.
    fn batch_step(
        &self,
        params: &ModelParams,
        batch: &[(usize, Tensor)],
        method: Method,
    ) -> Result<(f64, Option<f64>, Vec<Tensor>)> {
        let per: Vec<(f64, Option<f64>, Vec<Tensor>)> = batch
            .par_iter()
            .map(|(i, feat)| {
                let g = &self.train[*i].graph;
                match method {
                    Method::Egn => {
                        instance_grad(params, g, feat, &self.spec).map(|(l, gr)| (l, None, gr))
                    }
                    Method::Meta => meta_grad(
                        params,
                        g,
                        feat,
                        &self.spec,
                        self.cfg.inner_lr,
                        self.cfg.meta_mode,
                    )
                    .map(|m| (m.pre_loss, Some(m.post_loss), m.grads)),
                }
            })
            .collect::<Result<_>>()?;
        let m = per.len() as f64;
        let mut sum: Vec<Tensor> = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let (mut pre, mut post) = (0.0, 0.0);
        for (l0, l1, grads) in &per {
            pre += l0;
            post += l1.unwrap_or(0.0);
            for (s, g) in sum.iter_mut().zip(grads) {
                for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        for s in &mut sum {
            for a in s.data_mut() {
                *a /= m;
            }
        }
        let post = matches!(method, Method::Meta).then_some(post / m);
        Ok((pre / m, post, sum))
    }

    fn run(&self, init: ModelParams, method: Method) -> Result<TrainState> {
        init.check()?;
        let mut state = TrainState {
            adam: match self.cfg.optimizer {
                OuterOptimizer::Adam => Some(AdamState::new(&init.tensors)),
                OuterOptimizer::Sgd => None,
            },
            params: init,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed),
            best: None,
            dynamics: Vec::new(),
        };
        let mut first = DynamicsRecord {
            iteration: 0,
            train_loss_pre_adapt: None,
            train_loss_post_adapt: None,
            val_loss: None,
            val_apr: None,
        };
        self.evaluate(&mut state, &mut first)?;
        state.dynamics.push(first);

        let n = self.train.len();
        let mut epoch: Vec<usize> = Vec::new();
        let mut cursor = 0;
        let adam_cfg = AdamConfig::with_lr(self.cfg.outer_lr);
        while state.iteration < self.cfg.max_iters {
            let indices: Vec<usize> = match method {
                Method::Egn => {
                    if cursor >= epoch.len() {
                        epoch = sample(&mut state.rng, n, n).into_vec();
                        cursor = 0;
                    }
                    let end = (cursor + self.cfg.batch_size).min(n);
                    let chunk = epoch[cursor..end].to_vec();
                    cursor = end;
                    chunk
                }
                Method::Meta => sample(&mut state.rng, n, self.cfg.batch_size.min(n)).into_vec(),
            };
            let batch = indices
                .into_iter()
                .map(|i| {
                    draw_features(&self.sources[i], &self.train[i].graph, &mut state.rng)
                        .map(|f| (i, f))
                })
                .collect::<Result<Vec<_>>>()?;
            let (pre, post, grads) = self.batch_step(&state.params, &batch, method)?;
            let next = match state.adam.as_mut() {
                Some(adam) => adam_step(adam, &state.params.tensors, &grads, &adam_cfg)?,
                None => sgd_step(&state.params.tensors, &grads, self.cfg.outer_lr)?,
            };
            state.params = state.params.with_tensors(next)?;
            state.iteration += 1;
            let mut record = DynamicsRecord {
                iteration: state.iteration,
                train_loss_pre_adapt: Some(pre),
                train_loss_post_adapt: post,
                val_loss: None,
                val_apr: None,
            };
            if state.iteration % self.cfg.eval_every == 0 || state.iteration == self.cfg.max_iters {
                self.evaluate(&mut state, &mut record)?;
            }
            state.dynamics.push(record);
        }
        Ok(state)
    }
}

/// Mini-batch training of the mean relaxed loss.
pub fn train_egn(
    init: ModelParams,
    train: &[Instance],
    val: &[Instance],
    spec: &ProblemSpec,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    Trainer::new(*spec, *cfg, train, val)?.run(init, Method::Egn)
}

/// Meta-training: the outer step follows the batch mean of losses measured
/// after one inner gradient step per instance.
pub fn train_meta_egn(
    init: ModelParams,
    train: &[Instance],
    val: &[Instance],
    spec: &ProblemSpec,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    Trainer::new(*spec, *cfg, train, val)?.run(init, Method::Meta)
}

/// Soft assignment after one fine-tune step, the form evaluation uses.
pub fn finetuned_forward(
    params: &ModelParams,
    g: &Graph,
    feat: &FeatureInit,
    spec: &ProblemSpec,
    alpha: f64,
) -> Result<SoftAssignment> {
    let tuned = finetune_one_step(params, g, feat, spec, alpha)?;
    crate::gin::forward(&tuned, g, feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{RefKind, Split};
    use crate::generate::{gen_er, gen_rrg, RrgParams};
    use crate::gin::{init_params, GinConfig};
    use crate::problems::relaxed_loss;

    fn tiny() -> GinConfig {
        GinConfig {
            layers: 2,
            hidden_dim: 6,
            mlp_depth: 2,
            input_dim: 1,
            epsilon: 0.0,
        }
    }

    fn specs() -> [ProblemSpec; 3] {
        [
            ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet),
            ProblemSpec::with_default_beta(ProblemKind::MinVertexCover),
            ProblemSpec::with_default_beta(ProblemKind::MaxClique),
        ]
    }

    fn dataset(count: usize, seed: u64) -> Vec<Instance> {
        (0..count)
            .map(|i| {
                Instance::new(
                    format!("g{i}"),
                    gen_er(10, 0.3, seed * 1000 + i as u64).unwrap(),
                    Split::Train,
                )
            })
            .collect()
    }

    #[test]
    fn zero_head_single_edge_mis_loss() {
        let mut p = init_params(&tiny(), 1).unwrap();
        let k = p.tensors.len();
        p.tensors[k - 2] = Tensor::zeros(6, 1);
        let g = Graph::path(2);
        let spec = ProblemSpec::new(ProblemKind::MaxIndependentSet, 2.0).unwrap();
        let l = instance_loss(&p, &g, &FeatureInit::SingleNodeSeed(0), &spec).unwrap();
        assert!((l + 0.5).abs() < 1e-12);
    }

    #[test]
    fn taped_loss_matches_direct_loss() {
        for seed in 0..10 {
            let g = gen_er(12, 0.4, seed).unwrap();
            let p = init_params(&tiny(), seed).unwrap();
            let feat = FeatureInit::SingleNodeSeed(seed as usize % 12);
            let x = crate::gin::forward(&p, &g, &feat).unwrap();
            for spec in specs() {
                let a = instance_loss(&p, &g, &feat, &spec).unwrap();
                let b = relaxed_loss(&spec, &g, &x).unwrap();
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn empty_graph_mis_loss_is_negative_sum() {
        let g = Graph::empty(4);
        let p = init_params(&tiny(), 2).unwrap();
        let spec = ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet);
        let x = crate::gin::forward(&p, &g, &FeatureInit::Constant).unwrap();
        let l = instance_loss(&p, &g, &FeatureInit::Constant, &spec).unwrap();
        assert!((l + x.values().iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn quadratic_meta_gradient_closed_form() {
        let theta = [Tensor::scalar(1.0)];
        let sq = |tape: &Tape<'_>, p: &[Var]| tape.sum(tape.mul(p[0], p[0]));
        let tape = Tape::new();
        let exact =
            maml_grad_on_tape(&tape, &theta, 0.1, MetaMode::Exact, |p| sq(&tape, p)).unwrap();
        assert!((exact.grads[0].item() - 1.28).abs() < 1e-12);
        assert!((exact.post_loss - 0.64).abs() < 1e-12);
        let tape = Tape::new();
        let fo =
            maml_grad_on_tape(&tape, &theta, 0.1, MetaMode::FirstOrder, |p| sq(&tape, p)).unwrap();
        assert!((fo.grads[0].item() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn zero_inner_rate_reduces_to_plain_gradient() {
        for (seed, spec) in specs().into_iter().enumerate() {
            let g = gen_er(9, 0.4, seed as u64).unwrap();
            let p = init_params(&tiny(), seed as u64 + 3).unwrap();
            let f = make_features(&g, &FeatureInit::SingleNodeSeed(1)).unwrap();
            let (_, plain) = instance_grad(&p, &g, &f, &spec).unwrap();
            for mode in [MetaMode::Exact, MetaMode::FirstOrder] {
                let m = meta_grad(&p, &g, &f, &spec, 0.0, mode).unwrap();
                for (a, b) in m.grads.iter().zip(&plain) {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        assert!((x - y).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn finetune_examples() {
        let g = gen_er(10, 0.3, 5).unwrap();
        let p = init_params(&tiny(), 5).unwrap();
        let spec = ProblemSpec::with_default_beta(ProblemKind::MinVertexCover);
        let feat = FeatureInit::SingleNodeSeed(3);
        assert_eq!(finetune_one_step(&p, &g, &feat, &spec, 0.0).unwrap(), p);
        let one = finetune_one_step(&p, &g, &feat, &spec, 1e-3).unwrap();
        assert_eq!(
            finetune_k_steps(&p, &g, &feat, &spec, 1e-3, 1).unwrap(),
            one
        );
        assert!(finetune_k_steps(&p, &g, &feat, &spec, 1e-3, 0).is_err());

        let f = make_features(&g, &feat).unwrap();
        let (_, grads) = instance_grad(&p, &g, &f, &spec).unwrap();
        let manual = sgd_step(&p.tensors, &grads, 1e-3).unwrap();
        assert_eq!(one.tensors, manual);
    }

    #[test]
    fn five_step_traces_mostly_descend() {
        let spec = ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet);
        let mut monotone = 0;
        for seed in 0..20 {
            let g = gen_er(12, 0.3, 100 + seed).unwrap();
            let p = init_params(&tiny(), seed).unwrap();
            let feat = FeatureInit::SingleNodeSeed(seed as usize % 12);
            let (_, trace) = finetune_trace(&p, &g, &feat, &spec, 5e-5, 5).unwrap();
            if trace.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
        assert!(monotone >= 18, "{monotone}/20");
    }

    #[test]
    fn zero_budget_returns_initial_params() {
        let data = dataset(4, 1);
        let p = init_params(&tiny(), 9).unwrap();
        let spec = ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet);
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::for_problem(ProblemKind::MaxIndependentSet)
        };
        for st in [
            train_egn(p.clone(), &data, &data, &spec, &cfg).unwrap(),
            train_meta_egn(p.clone(), &data, &[], &spec, &cfg).unwrap(),
        ] {
            assert_eq!(st.best_params(), &p);
            assert_eq!(st.iteration, 0);
        }
    }

    #[test]
    fn training_is_deterministic_and_snapshots_best() {
        let data = dataset(6, 2);
        let val: Vec<Instance> = dataset(3, 3)
            .into_iter()
            .map(|i| i.with_reference(4.0, RefKind::Exact))
            .collect();
        let spec = ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet);
        let cfg = TrainConfig {
            max_iters: 12,
            batch_size: 4,
            eval_every: 3,
            outer_lr: 1e-2,
            ..TrainConfig::for_problem(ProblemKind::MaxIndependentSet)
        };
        let p = init_params(&tiny(), 4).unwrap();
        for run in [train_egn, train_meta_egn] {
            let a = run(p.clone(), &data, &val, &spec, &cfg).unwrap();
            let b = run(p.clone(), &data, &val, &spec, &cfg).unwrap();
            assert_eq!(a.params, b.params);
            assert_eq!(a.dynamics, b.dynamics);
            assert_eq!(a.dynamics.len(), 13);

            let best = a.best.as_ref().unwrap();
            let scored: Vec<f64> = a.dynamics.iter().filter_map(|d| d.val_apr).collect();
            let top = scored.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(best.score.apr, Some(top));
            let again = validate(
                &best.params,
                &val,
                &Trainer::new(spec, cfg, &data, &val).unwrap().val_features,
                &spec,
            )
            .unwrap();
            assert_eq!(again.apr, Some(top));
        }
    }

    #[test]
    fn egn_single_instance_loss_descends() {
        let g = gen_rrg(&RrgParams {
            n: 20,
            d: 3,
            seed: 1,
        })
        .unwrap();
        let data = vec![Instance::new("g", g, Split::Train)];
        let spec = ProblemSpec::with_default_beta(ProblemKind::MaxIndependentSet);
        let cfg = TrainConfig {
            max_iters: 300,
            batch_size: 1,
            outer_lr: 1e-3,
            features: FeatureScheme::Greedy,
            ..TrainConfig::for_problem(ProblemKind::MaxIndependentSet)
        };
        let st = train_egn(init_params(&tiny(), 1).unwrap(), &data, &[], &spec, &cfg).unwrap();
        let losses: Vec<f64> = st
            .dynamics
            .iter()
            .filter_map(|d| d.train_loss_pre_adapt)
            .collect();
        let windows: Vec<bool> = losses.windows(50).map(|w| w[49] <= w[0]).collect();
        let ok = windows.iter().filter(|&&b| b).count();
        assert!(
            ok as f64 >= 0.95 * windows.len() as f64,
            "{ok}/{}",
            windows.len()
        );
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::for_problem(ProblemKind::MaxClique);
        assert!(base.validate().is_ok());
        assert_eq!(base.outer_lr, 1e-3);
        assert_eq!(
            TrainConfig::for_problem(ProblemKind::MaxIndependentSet).outer_lr,
            1e-4
        );
        for bad in [
            TrainConfig {
                inner_lr: 0.0,
                ..base
            },
            TrainConfig {
                outer_lr: -1.0,
                ..base
            },
            TrainConfig {
                batch_size: 0,
                ..base
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
