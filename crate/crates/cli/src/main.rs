use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use egn_core::dataset::{split_of, Instance, RefKind, Reference, Split};
use egn_core::eval::{
    apply_best_found, best_found, evaluate, evaluate_baseline, summarize, Baseline, EvalConfig,
    EvalFeatures, Protocol, RunRecord,
};
use egn_core::generate::{gen_er, gen_rb, gen_rrg, RbParams, RrgParams};
use egn_core::gin::{init_params, FeatureInit, GinConfig, ModelParams};
use egn_core::heuristics::greedy_baseline;
use egn_core::io::{
    load_checkpoint, load_dataset, load_graph, save_checkpoint, save_dataset, save_dynamics,
    save_records, Manifest,
};
use egn_core::problems::{exact_optimum, ProblemKind, ProblemSpec, EXACT_NODE_LIMIT};
use egn_core::train::{
    finetune_trace, train_egn, train_meta_egn, FeatureScheme, MetaMode, OuterOptimizer,
    TrainConfig, TrainState,
};

/// Unsupervised GNN solvers for max clique, vertex cover and independent set.
#[derive(Parser)]
#[command(name = "egn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a directory of random graphs plus a manifest.
    Generate(GenerateArgs),
    /// Train EGN or Meta-EGN and save a checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Fine-tune a checkpoint on one graph.
    Finetune(FinetuneArgs),
    /// Run a classical heuristic on a dataset split.
    Baseline(BaselineArgs),
    /// Annotate small instances with exact optima.
    Oracle(OracleArgs),
    /// Train both methods and export their training curves.
    Dynamics(DynamicsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Rrg,
    Rb,
    Er,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Mc,
    Mvc,
    Mis,
}

impl From<Problem> for ProblemKind {
    fn from(p: Problem) -> Self {
        match p {
            Problem::Mc => ProblemKind::MaxClique,
            Problem::Mvc => ProblemKind::MinVertexCover,
            Problem::Mis => ProblemKind::MaxIndependentSet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn select(self, all: Vec<Instance>) -> Vec<Instance> {
        match self {
            SplitArg::Train => split_of(&all, Split::Train),
            SplitArg::Val => split_of(&all, Split::Val),
            SplitArg::Test => split_of(&all, Split::Test),
            SplitArg::All => all,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Node count (rrg, er).
    #[arg(long)]
    n: Option<usize>,
    /// Degree (rrg).
    #[arg(long)]
    degree: Option<usize>,
    /// Edge probability (er).
    #[arg(long)]
    p: Option<f64>,
    /// Clique count (rb).
    #[arg(long)]
    groups: Option<usize>,
    /// Clique size (rb).
    #[arg(long)]
    group_size: Option<usize>,
    /// Constraint tightness (rb).
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Put every graph in one split instead of the 8:1:1 train/val/test cut.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Message-passing layers (default depends on the problem).
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    mlp_depth: usize,
}

impl ModelArgs {
    fn config(&self, kind: ProblemKind) -> GinConfig {
        let base = GinConfig::for_problem(kind);
        GinConfig {
            layers: self.layers.unwrap_or(base.layers),
            hidden_dim: self.hidden,
            mlp_depth: self.mlp_depth,
            ..base
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Seed,
    Greedy,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Egn,
    MetaEgn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    FirstOrder,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    problem: Problem,
    #[arg(long)]
    beta: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Features::Seed)]
    features: Features,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long, default_value_t = 5e-5)]
    inner_lr: f64,
    #[arg(long, value_enum, default_value_t = Optimizer::Adam)]
    optimizer: Optimizer,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    meta_mode: Mode,
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Method::MetaEgn)]
    method: Method,
    #[command(flatten)]
    training: TrainingArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the training curves here.
    #[arg(long)]
    dynamics: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to the problem stored in the checkpoint.
    #[arg(long, value_enum)]
    problem: Option<Problem>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_protocol, default_value = "fast")]
    protocol: Protocol,
    #[arg(long, value_enum, default_value_t = Features::Seed)]
    features: Features,
    /// Report raw model results even when the greedy input was better.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long, default_value_t = 5e-5)]
    finetune_lr: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Fail when an instance has no reference value.
    #[arg(long)]
    require_reference: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run this heuristic; instances without a reference are then
    /// scored against the best objective either method found.
    #[arg(long, value_parser = parse_baseline)]
    compare: Option<Baseline>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Graph file in the `p`/`e` format.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum)]
    problem: Option<Problem>,
    #[arg(long)]
    beta: Option<f64>,
    /// Seed node for single-node features; greedy features when absent.
    #[arg(long)]
    seed_node: Option<usize>,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Write the tuned parameters here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_baseline)]
    method: Baseline,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    require_reference: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    problem: Problem,
}

#[derive(Args)]
struct DynamicsArgs {
    #[command(flatten)]
    training: TrainingArgs,
    /// Directory receiving egn.csv and meta-egn.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: egn_core::Error| e.to_string())
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    s.parse().map_err(|e: egn_core::Error| e.to_string())
}

fn spec_for(kind: ProblemKind, beta: Option<f64>) -> Result<ProblemSpec> {
    Ok(match beta {
        Some(b) => ProblemSpec::new(kind, b)?,
        None => ProblemSpec::with_default_beta(kind),
    })
}

fn split_for(i: usize, count: usize, fixed: Option<SplitArg>) -> Split {
    match fixed {
        Some(SplitArg::Train) => Split::Train,
        Some(SplitArg::Val) => Split::Val,
        Some(SplitArg::Test) => Split::Test,
        Some(SplitArg::All) | None => {
            let train = count * 8 / 10;
            let val = count / 10;
            if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            }
        }
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let need = |v: Option<usize>, flag: &str| v.with_context(|| format!("--{flag} is required"));
    let mut instances = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let split = split_for(i, a.count, a.split);
        let id = format!("{}-{i:05}.txt", family_name(a.family));
        let inst = match a.family {
            Family::Rrg => {
                let p = RrgParams {
                    n: need(a.n, "n")?,
                    d: need(a.degree, "degree")?,
                    seed,
                };
                Instance::new(id, gen_rrg(&p)?, split)
            }
            Family::Er => {
                let p = a.p.context("--p is required")?;
                Instance::new(id, gen_er(need(a.n, "n")?, p, seed)?, split)
            }
            Family::Rb => {
                let p = RbParams {
                    groups: need(a.groups, "groups")?,
                    group_size: need(a.group_size, "group-size")?,
                    rho: a.rho,
                    seed,
                };
                Instance::new(id, gen_rb(&p)?, split)
            }
        };
        instances.push(inst);
    }
    save_dataset(&a.out, &instances, None)?;
    if let (Family::Rb, Some(groups)) = (a.family, a.groups) {
        // construction bounds: one node per clique is independent
        let mut manifest = Manifest::load(&a.out)?;
        for (entry, inst) in manifest.entries.iter_mut().zip(&instances) {
            let n = inst.graph.node_count() as f64;
            let bound = |value| Reference {
                value,
                kind: RefKind::Bound,
            };
            entry.set_reference(ProblemKind::MaxIndependentSet, bound(groups as f64));
            entry.set_reference(ProblemKind::MinVertexCover, bound(n - groups as f64));
        }
        manifest.save(&a.out)?;
    }
    println!("wrote {} graphs to {}", a.count, a.out.display());
    Ok(())
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Rrg => "rrg",
        Family::Rb => "rb",
        Family::Er => "er",
    }
}

fn train_config(t: &TrainingArgs, kind: ProblemKind) -> TrainConfig {
    let base = TrainConfig::for_problem(kind);
    TrainConfig {
        inner_lr: t.inner_lr,
        outer_lr: t.outer_lr.unwrap_or(base.outer_lr),
        batch_size: t.batch,
        max_iters: t.iters,
        optimizer: match t.optimizer {
            Optimizer::Adam => OuterOptimizer::Adam,
            Optimizer::Sgd => OuterOptimizer::Sgd,
        },
        meta_mode: match t.meta_mode {
            Mode::Exact => MetaMode::Exact,
            Mode::FirstOrder => MetaMode::FirstOrder,
        },
        eval_every: t.eval_every,
        features: match t.features {
            Features::Seed => FeatureScheme::RandomSeed,
            Features::Greedy => FeatureScheme::Greedy,
            Features::Constant => FeatureScheme::Constant,
        },
        seed: t.seed,
    }
}

fn run_training(t: &TrainingArgs, method: Method) -> Result<(TrainState, ProblemKind)> {
    let kind = ProblemKind::from(t.problem);
    let spec = spec_for(kind, t.beta)?;
    let all = load_dataset(&t.dataset, kind)?;
    let train = split_of(&all, Split::Train);
    let val = split_of(&all, Split::Val);
    if train.is_empty() {
        bail!("dataset {} has no training instances", t.dataset.display());
    }
    let init = init_params(&t.model.config(kind), t.seed)?;
    let cfg = train_config(t, kind);
    let state = match method {
        Method::Egn => train_egn(init, &train, &val, &spec, &cfg)?,
        Method::MetaEgn => train_meta_egn(init, &train, &val, &spec, &cfg)?,
    };
    Ok((state, kind))
}

fn train(a: &TrainArgs) -> Result<()> {
    let (state, kind) = run_training(&a.training, a.method)?;
    save_checkpoint(&a.out, state.best_params(), Some(kind))?;
    if let Some(path) = &a.dynamics {
        save_dynamics(path, &state.dynamics)?;
    }
    match &state.best {
        Some(best) => println!(
            "saved snapshot from iteration {} (val loss {:.4}{}) to {}",
            best.iteration,
            best.score.loss,
            best.score
                .apr
                .map(|a| format!(", val ApR {a:.4}"))
                .unwrap_or_default(),
            a.out.display()
        ),
        None => println!("saved final parameters to {}", a.out.display()),
    }
    Ok(())
}

fn resolve_problem(flag: Option<Problem>, stored: Option<ProblemKind>) -> Result<ProblemKind> {
    match (flag.map(ProblemKind::from), stored) {
        (Some(k), _) | (None, Some(k)) => Ok(k),
        (None, None) => bail!("--problem is required for checkpoints without a stored problem"),
    }
}

fn report(records: &[RunRecord], csv: Option<&Path>) -> Result<()> {
    let s = summarize(records);
    println!(
        "{} instances, ApR {} over {} scored, {} infeasible, {:.4} s/g",
        records.len(),
        s,
        s.count,
        s.infeasible,
        s.seconds_per_graph
    );
    if let Some(path) = csv {
        save_records(path, records)?;
    }
    Ok(())
}

fn eval_features(f: Features) -> Result<EvalFeatures> {
    match f {
        Features::Seed => Ok(EvalFeatures::SingleNodeSeed),
        Features::Greedy => Ok(EvalFeatures::Greedy),
        Features::Constant => bail!("constant features are not an evaluation protocol"),
    }
}

fn load_model(path: &Path) -> Result<(ModelParams, Option<ProblemKind>)> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((ck.params, ck.problem))
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let (model, stored) = load_model(&a.model)?;
    let kind = resolve_problem(a.problem, stored)?;
    let spec = spec_for(kind, a.beta)?;
    let data = a.split.select(load_dataset(&a.dataset, kind)?);
    let cfg = EvalConfig {
        protocol: a.protocol,
        features: eval_features(a.features)?,
        fallback: !a.no_fallback,
        finetune_lr: a.finetune_lr,
        require_reference: a.require_reference,
        seed: a.seed,
        method: format!("model-{}", a.protocol),
    };
    let mut records = evaluate(&model, &data, &spec, &cfg)?;
    let Some(baseline) = a.compare else {
        return report(&records, a.csv.as_deref());
    };
    if baseline.problem() != kind {
        bail!(
            "baseline {} solves {}, not {kind}",
            baseline.as_str(),
            baseline.problem()
        );
    }
    let mut other = evaluate_baseline(baseline, &data, a.seed, false)?;
    let unreferenced: Vec<&str> = data
        .iter()
        .filter(|i| i.reference.is_none())
        .map(|i| i.id.as_str())
        .collect();
    let refs: Vec<(String, f64)> = best_found(&[&records, &other])
        .into_iter()
        .filter(|(id, _)| unreferenced.contains(&id.as_str()))
        .collect();
    apply_best_found(&mut records, &refs)?;
    apply_best_found(&mut other, &refs)?;
    print!("{}: ", cfg.method);
    report(&records, None)?;
    print!("{}: ", baseline.as_str());
    report(&other, None)?;
    if let Some(path) = &a.csv {
        records.extend(other);
        save_records(path, &records)?;
    }
    Ok(())
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let (model, stored) = load_model(&a.model)?;
    let kind = resolve_problem(a.problem, stored)?;
    let spec = spec_for(kind, a.beta)?;
    let g = load_graph(&a.graph)?;
    let feat = match a.seed_node {
        Some(v) => FeatureInit::SingleNodeSeed(v),
        None => FeatureInit::GreedySolution(greedy_baseline(kind, &g)),
    };
    let (tuned, losses) = finetune_trace(&model, &g, &feat, &spec, a.lr, a.steps)?;
    let trace: Vec<String> = losses.iter().map(|l| format!("{l:.6}")).collect();
    println!("loss trace: {}", trace.join(" -> "));
    if let Some(out) = &a.out {
        save_checkpoint(out, &tuned, Some(kind))?;
    }
    Ok(())
}

fn baseline_cmd(a: &BaselineArgs) -> Result<()> {
    let data = a
        .split
        .select(load_dataset(&a.dataset, a.method.problem())?);
    let records = evaluate_baseline(a.method, &data, a.seed, a.require_reference)?;
    report(&records, a.csv.as_deref())
}

fn oracle_cmd(a: &OracleArgs) -> Result<()> {
    let kind = ProblemKind::from(a.problem);
    let spec = ProblemSpec::with_default_beta(kind);
    let mut manifest = Manifest::load(&a.dataset)?;
    let (mut done, mut skipped) = (0, 0);
    for entry in &mut manifest.entries {
        let g = load_graph(&a.dataset.join(&entry.file))?;
        if g.node_count() > EXACT_NODE_LIMIT {
            skipped += 1;
            continue;
        }
        let (value, _) = exact_optimum(&spec, &g)?;
        entry.set_reference(
            kind,
            Reference {
                value,
                kind: RefKind::Exact,
            },
        );
        done += 1;
    }
    manifest.save(&a.dataset)?;
    println!("annotated {done} instances, skipped {skipped} above {EXACT_NODE_LIMIT} nodes");
    Ok(())
}

fn dynamics_cmd(a: &DynamicsArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    for (method, file) in [(Method::Egn, "egn.csv"), (Method::MetaEgn, "meta-egn.csv")] {
        let (state, _) = run_training(&a.training, method)?;
        let path = a.out.join(file);
        save_dynamics(&path, &state.dynamics)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EGN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("EGN_THREADS='{v}'"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Dynamics(a) => dynamics_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
