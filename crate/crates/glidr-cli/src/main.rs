//! Command-line entry point: training, evaluation, rule extraction, ad-hoc
//! inference, dataset perturbation, and the runtime self-check suite.

mod artifacts;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use glidr::eval::{evaluate, EvalConfig, EvalModel};
use glidr::infer::{InferenceConfig, OpenEnd, Query};
use glidr::kg::{apply_mislabeling, load_split_dir, save_split_dir, KnowledgeBase, SplitKind};
use glidr::rng::derive_seed;
use glidr::rule::{extract_argmax, extract_top_p, slot_distributions, HardEnsemble};
use glidr::train::{train_relation, validation_weights, TrainConfig};

#[derive(Parser)]
#[command(
    name = "glidr",
    version,
    about = "Differentiable graph-like rule learning over knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per-relation rule ensembles and write checkpoints
    Train(CommonOpts),
    /// Rank completion queries of a split and report MRR/Hits@k
    Eval(EvalArgs),
    /// Extract explicit rules from trained checkpoints
    Extract(ExtractArgs),
    /// Score one ground query or rank completions of an open query
    Infer(InferArgs),
    /// Write a relation-mislabeled copy of a dataset
    Perturb(CommonOpts),
    /// Run the gradient, oracle-equivalence, and fixture self-checks
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Soft,
    Hard,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Dataset directory holding facts.txt/train.txt/valid.txt/test.txt
    #[arg(long, env = "GLIDR_DATA")]
    data: Option<PathBuf>,
    /// Output directory for checkpoints, rules, ranks, and reports
    #[arg(long, env = "GLIDR_OUT")]
    out: Option<PathBuf>,
    /// Restrict to these relation names (repeat or comma-separate)
    #[arg(long = "relation", env = "GLIDR_RELATION", value_delimiter = ',')]
    relation: Vec<String>,
    #[arg(long, env = "GLIDR_STEPS")]
    steps: Option<usize>,
    #[arg(long = "batch-size", env = "GLIDR_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long = "lr", env = "GLIDR_LR")]
    lr: Option<f64>,
    #[arg(long = "weight-decay", env = "GLIDR_WEIGHT_DECAY")]
    weight_decay: Option<f64>,
    #[arg(long = "n-vars", env = "GLIDR_N_VARS")]
    n_vars: Option<usize>,
    #[arg(long, env = "GLIDR_BODIES")]
    bodies: Option<usize>,
    #[arg(long = "r-max", env = "GLIDR_R_MAX")]
    r_max: Option<usize>,
    #[arg(long, env = "GLIDR_SEED")]
    seed: Option<u64>,
    /// Cumulative probability mass for top-p rule extraction
    #[arg(long, env = "GLIDR_P")]
    p: Option<f64>,
    /// Mislabeling probability for `perturb`
    #[arg(long = "noise-p", env = "GLIDR_NOISE_P")]
    noise_p: Option<f64>,
    /// Score with soft weights or extracted hard rules
    #[arg(long, env = "GLIDR_MODE", value_enum)]
    mode: Option<Mode>,
    /// Worker threads (default: available cores)
    #[arg(long, env = "GLIDR_WORKERS")]
    workers: Option<usize>,
    /// Flat key-value config file (lower precedence than flags and env)
    #[arg(long, env = "GLIDR_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Which split supplies the ranked queries
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    /// Append a `label,mrr,hits1,hits10,count` row to this CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Row label for the CSV / report (defaults to the dataset dir name)
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalSplit {
    Test,
    Valid,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Per-slot extraction strategy
    #[arg(long, value_enum, default_value = "top-p")]
    strategy: Strategy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Strategy {
    TopP,
    Argmax,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Head entity name (omit to rank head candidates)
    #[arg(long)]
    head: Option<String>,
    /// Tail entity name (omit to rank tail candidates)
    #[arg(long)]
    tail: Option<String>,
    /// How many ranked candidates to print for open queries
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Run the full-size check suites instead of the fast ones
    #[arg(long)]
    full: bool,
}

/// Flat key-value config file; keys mirror the run-configuration fields.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    relation: Option<Vec<String>>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    n_vars: Option<usize>,
    bodies: Option<usize>,
    r_max: Option<usize>,
    seed: Option<u64>,
    p: Option<f64>,
    noise_p: Option<f64>,
    mode: Option<String>,
    workers: Option<usize>,
}

/// Everything a command needs, after flag > env > file > default layering.
struct RunConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    relation: Vec<String>,
    train: TrainConfig,
    extraction_p: f64,
    noise_p: Option<f64>,
    mode: Mode,
    workers: Option<usize>,
}

impl RunConfig {
    fn resolve(opts: &CommonOpts) -> Result<RunConfig> {
        let file: FileConfig = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let defaults = TrainConfig::default();
        let mode = match opts.mode {
            Some(m) => m,
            None => match file.mode.as_deref() {
                None | Some("soft") => Mode::Soft,
                Some("hard") => Mode::Hard,
                Some(other) => bail!("config: unknown mode `{other}` (soft or hard)"),
            },
        };
        let train = TrainConfig {
            steps: opts.steps.or(file.steps).unwrap_or(defaults.steps),
            batch_size: opts
                .batch_size
                .or(file.batch_size)
                .unwrap_or(defaults.batch_size),
            learning_rate: opts
                .lr
                .or(file.learning_rate)
                .unwrap_or(defaults.learning_rate),
            weight_decay: opts
                .weight_decay
                .or(file.weight_decay)
                .unwrap_or(defaults.weight_decay),
            n_vars: opts.n_vars.or(file.n_vars).unwrap_or(defaults.n_vars),
            bodies: opts.bodies.or(file.bodies).unwrap_or(defaults.bodies),
            r_max: opts.r_max.or(file.r_max).unwrap_or(defaults.r_max),
            seed: opts.seed.or(file.seed).unwrap_or(defaults.seed),
        };
        train.validate()?;
        let extraction_p = opts.p.or(file.p).unwrap_or(0.25);
        if !(extraction_p > 0.0 && extraction_p <= 1.0) {
            bail!("extraction mass --p must lie in (0, 1]");
        }
        Ok(RunConfig {
            data: opts.data.clone().or(file.data),
            out: opts.out.clone().or(file.out),
            relation: if opts.relation.is_empty() {
                file.relation.unwrap_or_default()
            } else {
                opts.relation.clone()
            },
            train,
            extraction_p,
            noise_p: opts.noise_p.or(file.noise_p),
            mode,
            workers: opts.workers.or(file.workers),
        })
    }

    fn data(&self) -> Result<&Path> {
        self.data.as_deref().context("--data DIR is required")
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out DIR is required")
    }

    fn load_kb(&self) -> Result<KnowledgeBase> {
        let dir = self.data()?;
        load_split_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
    }

    fn relation_ids(&self, kb: &KnowledgeBase) -> Result<Option<Vec<usize>>> {
        if self.relation.is_empty() {
            return Ok(None);
        }
        let mut ids = Vec::new();
        for name in &self.relation {
            let id = kb
                .relation_id(name)
                .with_context(|| format!("unknown relation `{name}`"))?;
            ids.push(id);
        }
        Ok(Some(ids))
    }

    fn inference(&self) -> InferenceConfig {
        InferenceConfig::with_rounds(self.train.r_max)
    }

    fn init_workers(&self) {
        if let Some(n) = self.workers {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(opts) => cmd_train(&opts),
        Command::Eval(args) => cmd_eval(&args),
        Command::Extract(args) => cmd_extract(&args),
        Command::Infer(args) => cmd_infer(&args),
        Command::Perturb(opts) => cmd_perturb(&opts),
        Command::Check(args) => cmd_check(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_train(opts: &CommonOpts) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(opts)?;
    cfg.init_workers();
    let kb = cfg.load_kb()?;
    let out = cfg.out()?;
    std::fs::create_dir_all(out)?;
    let relations: Vec<usize> = match cfg.relation_ids(&kb)? {
        Some(ids) => ids,
        None => (0..kb.num_relations()).collect(),
    };
    let mut trained = 0usize;
    for relation in relations {
        let name = kb.relation_names[relation].clone();
        match train_relation(&kb, relation, &cfg.train) {
            Ok((mut ensemble, trace)) => {
                let scores = validation_weights(&ensemble, &kb, relation, &cfg.train)?;
                ensemble = ensemble.with_scores(scores);
                artifacts::save_ensemble(out, &kb, &ensemble)?;
                artifacts::save_loss_trace(out, &artifacts::relation_tag(relation, &name), &trace)?;
                let last = trace.last().map_or(f64::NAN, |r| r.mean_loss);
                println!("trained {name}: final mean loss {last:.4}");
                trained += 1;
            }
            Err(glidr::Error::NoTrainPositives(_)) => {
                println!("skipped {name}: no train positives");
            }
            Err(e) => return Err(e.into()),
        }
    }
    println!(
        "checkpoints for {trained} relation(s) under {}",
        artifacts::checkpoints_dir(out).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&args.common)?;
    cfg.init_workers();
    let kb = cfg.load_kb()?;
    let out = cfg.out()?;
    let model = match cfg.mode {
        Mode::Soft => EvalModel::Soft(artifacts::load_ensembles(out, &kb)?),
        Mode::Hard => EvalModel::Hard(artifacts::load_rules(out)?),
    };
    let split = match args.split {
        EvalSplit::Test => SplitKind::Test,
        EvalSplit::Valid => SplitKind::Valid,
    };
    let eval_cfg = EvalConfig {
        inference: cfg.inference(),
        seed: derive_seed(cfg.train.seed, "eval", &[]),
        split,
    };
    let (records, metrics) = evaluate(&model, &kb, &eval_cfg)?;
    artifacts::append_ranks(&out.join("ranks.jsonl"), &kb, &records)?;
    let label = args.label.clone().unwrap_or_else(|| {
        cfg.data
            .as_deref()
            .and_then(Path::file_name)
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".into())
    });
    let mode = match cfg.mode {
        Mode::Soft => "soft",
        Mode::Hard => "hard",
    };
    let split_name = match split {
        SplitKind::Test => "test",
        _ => "valid",
    };
    artifacts::write_report(
        out,
        &artifacts::EvalReport {
            label: &label,
            mode,
            split: split_name,
            seed: cfg.train.seed,
            metrics,
        },
    )?;
    if let Some(csv) = &args.csv {
        artifacts::append_csv(csv, &label, &metrics)?;
    }
    println!(
        "{label} [{mode}/{split_name}] mrr {:.4} hits@1 {:.4} hits@10 {:.4} ({} queries)",
        metrics.mrr, metrics.hits1, metrics.hits10, metrics.count
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(args: &ExtractArgs) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&args.common)?;
    let kb = cfg.load_kb()?;
    let out = cfg.out()?;
    let ensembles = artifacts::load_ensembles(out, &kb)?;
    let mut hard: HashMap<usize, HardEnsemble> = HashMap::new();
    for (relation, ensemble) in &ensembles {
        let mut rules = Vec::new();
        for body in &ensemble.bodies {
            let dist = slot_distributions(body);
            let rule = match args.strategy {
                Strategy::TopP => extract_top_p(&dist, cfg.extraction_p)?,
                Strategy::Argmax => extract_argmax(&dist),
            };
            rules.push(rule);
        }
        let mut he = HardEnsemble::new(*relation, rules);
        if let Some(scores) = &ensemble.body_scores {
            he = he.with_scores(scores.clone());
        }
        hard.insert(*relation, he);
    }
    artifacts::save_rules(out, &kb, cfg.extraction_p, &hard)?;
    println!(
        "extracted rules for {} relation(s) under {}",
        hard.len(),
        out.join("rules").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(args: &InferArgs) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&args.common)?;
    cfg.init_workers();
    let kb = cfg.load_kb()?;
    let out = cfg.out()?;
    let relation_name = match cfg.relation.as_slice() {
        [one] => one.clone(),
        _ => bail!("infer needs exactly one --relation"),
    };
    let relation = kb
        .relation_id(&relation_name)
        .with_context(|| format!("unknown relation `{relation_name}`"))?;
    let entity = |name: &str| {
        kb.entity_id(name)
            .with_context(|| format!("unknown entity `{name}`"))
    };
    let bg = glidr::eval::eval_background(&kb, SplitKind::Test);
    let b = glidr::kg::build_adjacency(&bg, kb.num_entities(), glidr::kg::build_extended(&kb))?;
    let model = match cfg.mode {
        Mode::Soft => EvalModel::Soft(artifacts::load_ensembles(out, &kb)?),
        Mode::Hard => EvalModel::Hard(artifacts::load_rules(out)?),
    };
    let score_all = |end: OpenEnd, fixed: usize| -> Result<Vec<f64>> {
        let candidates: Vec<usize> = (0..kb.num_entities()).collect();
        match &model {
            EvalModel::Soft(map) => {
                let ensemble = map
                    .get(&relation)
                    .with_context(|| format!("no checkpoint for `{relation_name}`"))?;
                Ok(glidr::infer::score_open_query(
                    end,
                    fixed,
                    relation,
                    &candidates,
                    ensemble,
                    &b,
                    &cfg.inference(),
                )?)
            }
            EvalModel::Hard(map) => {
                let ensemble = map
                    .get(&relation)
                    .with_context(|| format!("no extracted rules for `{relation_name}`"))?;
                let mut scores = vec![0.0; kb.num_entities()];
                for (bi, rule) in ensemble.bodies.iter().enumerate() {
                    let w = ensemble.body_weight(bi);
                    for (c, s) in scores.iter_mut().enumerate() {
                        let query = match end {
                            OpenEnd::Tail => Query {
                                head: fixed,
                                tail: c,
                                relation,
                            },
                            OpenEnd::Head => Query {
                                head: c,
                                tail: fixed,
                                relation,
                            },
                        };
                        if glidr::infer::run_hard(rule, query, &b, None)?.entailed_by_propagation()
                        {
                            *s += w;
                        }
                    }
                }
                Ok(scores)
            }
        }
    };

    match (&args.head, &args.tail) {
        (Some(h), Some(t)) => {
            let (h, t) = (entity(h)?, entity(t)?);
            let query = Query {
                head: h,
                tail: t,
                relation,
            };
            let score = match &model {
                EvalModel::Soft(map) => {
                    let ensemble = map
                        .get(&relation)
                        .with_context(|| format!("no checkpoint for `{relation_name}`"))?;
                    let mut total = 0.0;
                    for (bi, body) in ensemble.bodies.iter().enumerate() {
                        total += ensemble.body_weight(bi)
                            * glidr::autodiff::forward_scores(
                                &[query],
                                body,
                                &b,
                                &cfg.inference(),
                            )?[0];
                    }
                    total
                }
                EvalModel::Hard(map) => {
                    let ensemble = map
                        .get(&relation)
                        .with_context(|| format!("no extracted rules for `{relation_name}`"))?;
                    let mut total = 0.0;
                    for (bi, rule) in ensemble.bodies.iter().enumerate() {
                        if glidr::infer::run_hard(rule, query, &b, None)?.entailed_by_propagation()
                        {
                            total += ensemble.body_weight(bi);
                        }
                    }
                    total
                }
            };
            println!(
                "{}",
                serde_json::json!({
                    "head": kb.entity_names[h],
                    "relation": relation_name,
                    "tail": kb.entity_names[t],
                    "score": score,
                })
            );
        }
        (Some(name), None) | (None, Some(name)) => {
            let end = if args.head.is_some() {
                OpenEnd::Tail
            } else {
                OpenEnd::Head
            };
            let fixed = entity(name)?;
            let scores = score_all(end, fixed)?;
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let top: Vec<_> = order
                .into_iter()
                .take(args.top)
                .map(|c| serde_json::json!({"entity": kb.entity_names[c], "score": scores[c]}))
                .collect();
            println!(
                "{}",
                serde_json::json!({
                    "fixed": kb.entity_names[fixed],
                    "relation": relation_name,
                    "direction": if matches!(end, OpenEnd::Tail) { "tail" } else { "head" },
                    "candidates": top,
                })
            );
        }
        (None, None) => bail!("infer needs --head, --tail, or both"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_perturb(opts: &CommonOpts) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(opts)?;
    let kb = cfg.load_kb()?;
    let p = cfg.noise_p.context("--noise-p is required for perturb")?;
    let out = cfg.out()?;
    let noisy = apply_mislabeling(&kb, p, cfg.train.seed)?;
    save_split_dir(&noisy, out)?;
    let changed = noisy
        .facts
        .iter()
        .chain(noisy.train.iter())
        .zip(kb.facts.iter().chain(kb.train.iter()))
        .filter(|(a, b)| a.relation != b.relation)
        .count();
    println!(
        "wrote perturbed dataset to {} ({changed} of {} edges relabeled)",
        out.display(),
        kb.facts.len() + kb.train.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &CheckArgs) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&args.common)?;
    cfg.init_workers();
    let outcomes = glidr::selfcheck::run_all(!args.full, cfg.train.seed)?;
    let mut ok = true;
    for outcome in &outcomes {
        println!(
            "[{}] {}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.name,
            outcome.detail
        );
        ok &= outcome.pass;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
