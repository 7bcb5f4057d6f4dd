mod load;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pacs_core::io::checkpoint::{write_checkpoint, CheckpointMeta};
use pacs_core::io::container::read_container;
use pacs_core::io::feature_store;
use pacs_core::io::manifest::{
    read_jsonl, resolve_pairwise, JudgmentRecord, PairwiseRecord, RatedPair,
};
use pacs_core::io::report::{join_scores, read_scores, render_report};
use pacs_core::scoring::{ImageScorer, VideoScorer};
use pacs_core::train::{initial_heads, CorrelationBundle, CorrelationTask};
use pacs_core::{
    batch_score, foil_accuracy, grid_search, pairwise_accuracy, train, AdamWParams, AugmentedTuple,
    CaptionScorer, Checkpoint, CorrelationStat, EmbeddingStore, FeatureStore, FoilPair, HeadInit,
    LossConfig, Mode, PairwiseConfig, ScoreConfig, ScoreRecord, TrainConfig, TrainSplits, Variant,
};
use serde_json::json;

use load::EmbeddingArgs;

#[derive(Debug, Parser)]
#[command(
    name = "pacs",
    version,
    about = "Positive-augmented contrastive captioning metric"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finetune the projection heads on augmented tuples
    Train(TrainArgs),
    /// Score image captions
    Score(ScoreArgs),
    /// Score video captions
    ScoreVideo(ScoreArgs),
    /// Rank correlation between a score report and human judgments
    EvalCorr(EvalCorrArgs),
    /// Accuracy on human pairwise preferences
    EvalPairwise(EvalPairwiseArgs),
    /// Accuracy of preferring correct captions over foils
    EvalFoil(EvalFoilArgs),
    /// Grid search over the augmentation weights
    Tune(TuneArgs),
    /// Print container metadata
    Inspect { path: PathBuf },
}

#[derive(Debug, Args)]
struct TrainData {
    /// Augmented tuple manifest
    #[arg(long)]
    tuples: PathBuf,
    #[arg(long)]
    features_visual: PathBuf,
    #[arg(long)]
    features_text: PathBuf,
    /// Fraction of tuples held out for validation
    #[arg(long, default_value_t = 0.1)]
    val_split: f64,
    /// Initial heads; random orthonormal heads when absent
    #[arg(long)]
    init: Option<PathBuf>,
    /// Joint dimension of random initial heads
    #[arg(long, default_value_t = 512)]
    joint_dim: usize,
}

#[derive(Debug, Args)]
struct Optimization {
    #[arg(long, default_value_t = 0.0001)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Iterations without a new validation minimum before stopping
    #[arg(long, default_value_t = 1500)]
    patience: usize,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Validation cadence in iterations
    #[arg(long, default_value_t = 100)]
    val_every: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Learn the temperature jointly with the heads
    #[arg(long)]
    learn_tau: bool,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Optimization {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            patience_iters: self.patience,
            max_iters: self.max_iters,
            seed: self.seed,
            val_every: self.val_every,
            learn_temperature: self.learn_tau,
            adamw: AdamWParams {
                weight_decay: self.weight_decay,
                ..AdamWParams::default()
            },
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    opt: Optimization,
    #[arg(long, default_value_t = 0.05)]
    lambda_v: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_t: f64,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL loss history
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    emb: EmbeddingArgs,
    /// Score manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Use each record's reference captions
    #[arg(long)]
    refs: bool,
    /// Score scale (default 2 for images, 1 for videos)
    #[arg(long)]
    w: Option<f64>,
    /// Seed recorded in the report header
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatArg {
    KendallB,
    KendallC,
    Spearman,
}

impl From<StatArg> for CorrelationStat {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::KendallB => CorrelationStat::KendallB,
            StatArg::KendallC => CorrelationStat::KendallC,
            StatArg::Spearman => CorrelationStat::Spearman,
        }
    }
}

#[derive(Debug, Args)]
struct EvalCorrArgs {
    /// Score report
    #[arg(long)]
    scores: PathBuf,
    /// Judgment manifest
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long, value_enum, default_value_t = StatArg::KendallC)]
    stat: StatArg,
    /// Optional JSON summary path
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Image,
    Video,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Image => Mode::Image,
            ModeArg::Video => Mode::Video,
        }
    }
}

#[derive(Debug, Args)]
struct MetricArgs {
    #[command(flatten)]
    emb: EmbeddingArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Image)]
    mode: ModeArg,
    /// Use reference captions
    #[arg(long)]
    refs: bool,
    /// Score scale (default 2 for images, 1 for videos)
    #[arg(long)]
    w: Option<f64>,
    /// Optional JSON summary path
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalPairwiseArgs {
    /// Pairwise manifest
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long, default_value_t = 5)]
    draws: usize,
    #[arg(long, default_value_t = 5)]
    refs_per_draw: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalFoilArgs {
    /// Foil manifest
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    opt: Optimization,
    /// Human-rated media/caption pairs, resolved against the training
    /// feature containers
    #[arg(long)]
    eval_set: PathBuf,
    #[arg(long, value_enum, default_value_t = StatArg::KendallC)]
    stat: StatArg,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2])]
    grid_v: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2])]
    grid_t: Vec<f64>,
    /// Checkpoint of the best grid point
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => run_train(a),
        Command::Score(a) => run_score(a, Mode::Image),
        Command::ScoreVideo(a) => run_score(a, Mode::Video),
        Command::EvalCorr(a) => run_eval_corr(a),
        Command::EvalPairwise(a) => run_eval_pairwise(a),
        Command::EvalFoil(a) => run_eval_foil(a),
        Command::Tune(a) => run_tune(a),
        Command::Inspect { path } => run_inspect(path),
    }
}

struct Prepared {
    store: FeatureStore,
    splits: TrainSplits,
    init: HeadInit,
}

fn prepare(data: &TrainData, seed: u64) -> Result<Prepared> {
    let visual = read_container(&data.features_visual)
        .with_context(|| format!("reading {}", data.features_visual.display()))?;
    let text = read_container(&data.features_text)
        .with_context(|| format!("reading {}", data.features_text.display()))?;
    let store = feature_store(&visual, &text)?;
    let tuples: Vec<AugmentedTuple> = read_jsonl(&data.tuples)?;
    store.resolve(&tuples)?;
    let splits = TrainSplits::random(tuples, data.val_split, seed)?;
    let init = match load::heads(data.init.as_deref())? {
        Some(h) => HeadInit::Pretrained(h),
        None => HeadInit::Random {
            joint_dim: data.joint_dim,
        },
    };
    initial_heads(&init, &store, seed)?;
    Ok(Prepared {
        store,
        splits,
        init,
    })
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = a.opt.config();
    let loss = LossConfig {
        tau: a.opt.tau,
        lambda_v: a.lambda_v,
        lambda_t: a.lambda_t,
    };
    cfg.validate()?;
    loss.validate()?;
    let p = prepare(&a.data, cfg.seed)?;
    let out = train(&p.splits, &p.store, &p.init, &cfg, &loss)?;
    let ckpt = Checkpoint {
        heads: out.heads.clone(),
        meta: Some(CheckpointMeta {
            loss,
            train: cfg,
            iteration: out.best_iteration,
            best_val_loss: out.best_val_loss,
            tau: out.tau,
        }),
    };
    write_checkpoint(&ckpt, &a.out)?;
    if let Some(path) = &a.history {
        let mut text = String::new();
        for (i, l) in out.history.train_loss.iter().enumerate() {
            text.push_str(&json!({"iteration": i + 1, "train_loss": l}).to_string());
            text.push('\n');
        }
        for (i, l) in &out.history.validation {
            text.push_str(&json!({"iteration": i, "val_loss": l}).to_string());
            text.push('\n');
        }
        load::write_or_print(Some(path), &text)?;
    }
    println!(
        "train {} / val {} tuples, {} iterations, stop: {}",
        p.splits.train.len(),
        p.splits.val.len(),
        out.iterations,
        serde_json::to_value(out.stop_reason)?
            .as_str()
            .unwrap_or_default()
    );
    println!(
        "best iteration {} with validation loss {:.6}, tau {}",
        out.best_iteration, out.best_val_loss, out.tau
    );
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn run_score(a: ScoreArgs, mode: Mode) -> Result<()> {
    let store = load::store(&a.emb, mode)?;
    let records: Vec<ScoreRecord> = read_jsonl(&a.manifest)?;
    let variant = if a.refs { Variant::Ref } else { Variant::Free };
    let cfg = load::score_config(mode, a.w);
    let report = batch_score(&records, &store, mode, variant, &cfg)?;
    let scale = match mode {
        Mode::Image => cfg.w,
        Mode::Video => cfg.video_w,
    };
    let text = render_report(&report, scale, Some(a.seed));
    load::write_or_print(a.out.as_deref(), &text)?;
    if let Some(out) = &a.out {
        match report.mean {
            Some(m) => println!(
                "{} records, mean {m:.6}, written to {}",
                report.items.len(),
                out.display()
            ),
            None => println!("0 records, mean undefined, written to {}", out.display()),
        }
    }
    Ok(())
}

fn run_eval_corr(a: EvalCorrArgs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let judgments: Vec<JudgmentRecord> = read_jsonl(&a.judgments)?;
    let (metric, human) = join_scores(&scores, &judgments)?;
    let stat = CorrelationStat::from(a.stat);
    let value = stat.compute(&metric, &human)?;
    println!("statistic\tn\tvalue");
    println!("{stat}\t{}\t{value}", metric.len());
    if let Some(path) = &a.summary {
        let doc = json!({"statistic": stat.to_string(), "n": metric.len(), "value": value});
        load::write_or_print(Some(path), &format!("{doc:#}\n"))?;
    }
    Ok(())
}

/// Scorer plus idf built from the reference pool (or the candidates when no
/// references are given).
fn scorer<'a>(
    store: &'a EmbeddingStore,
    m: &MetricArgs,
    candidates: &[&str],
    refs: &[&str],
) -> Result<Box<dyn CaptionScorer + 'a>> {
    let mode = Mode::from(m.mode);
    let cfg: ScoreConfig = load::score_config(mode, m.w);
    let variant = if m.refs { Variant::Ref } else { Variant::Free };
    Ok(match mode {
        Mode::Image => Box::new(ImageScorer {
            store,
            cfg,
            variant,
        }),
        Mode::Video => {
            let corpus = if refs.is_empty() { candidates } else { refs };
            Box::new(VideoScorer {
                store,
                cfg,
                variant,
                idf: load::idf_for(store, corpus)?,
            })
        }
    })
}

fn sorted_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut v: Vec<&str> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn run_eval_pairwise(a: EvalPairwiseArgs) -> Result<()> {
    let records: Vec<PairwiseRecord> = read_jsonl(&a.pairs)?;
    let pairs = resolve_pairwise(records, a.seed)?;
    let mode = Mode::from(a.metric.mode);
    let store = load::store(&a.metric.emb, mode)?;
    let candidates = sorted_unique(pairs.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]));
    let refs = if a.metric.refs {
        sorted_unique(pairs.iter().flat_map(|p| p.refs.iter().map(String::as_str)))
    } else {
        Vec::new()
    };
    store.check_ids(
        mode,
        pairs.iter().map(|p| p.media.as_str()),
        candidates.iter().chain(&refs).copied(),
    )?;
    let scorer = scorer(&store, &a.metric, &candidates, &refs)?;
    let cfg = PairwiseConfig {
        refs_per_draw: a.refs_per_draw,
        draws: a.draws,
        seed: a.seed,
    };
    let acc = pairwise_accuracy(&pairs, scorer.as_ref(), &cfg)?;
    println!("category\taccuracy");
    for (cat, v) in &acc.per_category {
        println!("{cat}\t{:.2}", 100.0 * v);
    }
    println!("mean\t{:.2}", acc.mean_percent());
    println!("draws {}, seed {}", acc.draws, acc.seed);
    if let Some(path) = &a.metric.summary {
        load::write_or_print(Some(path), &format!("{:#}\n", serde_json::to_value(&acc)?))?;
    }
    Ok(())
}

fn run_eval_foil(a: EvalFoilArgs) -> Result<()> {
    let pairs: Vec<FoilPair> = read_jsonl(&a.pairs)?;
    let mode = Mode::from(a.metric.mode);
    let store = load::store(&a.metric.emb, mode)?;
    let candidates = sorted_unique(
        pairs
            .iter()
            .flat_map(|p| [p.correct.as_str(), p.foil.as_str()]),
    );
    let refs = if a.metric.refs {
        sorted_unique(pairs.iter().flat_map(|p| p.refs.iter().map(String::as_str)))
    } else {
        Vec::new()
    };
    if a.metric.refs {
        if let Some(p) = pairs.iter().find(|p| p.refs.is_empty()) {
            bail!("foil pair {} has no references", p.id);
        }
    }
    store.check_ids(
        mode,
        pairs.iter().map(|p| p.media.as_str()),
        candidates.iter().chain(&refs).copied(),
    )?;
    let scorer = scorer(&store, &a.metric, &candidates, &refs)?;
    let acc = foil_accuracy(&pairs, scorer.as_ref())?;
    println!("pairs\taccuracy");
    println!("{}\t{:.2}", pairs.len(), 100.0 * acc);
    if let Some(path) = &a.metric.summary {
        let doc = json!({"pairs": pairs.len(), "accuracy": acc});
        load::write_or_print(Some(path), &format!("{doc:#}\n"))?;
    }
    Ok(())
}

fn run_tune(a: TuneArgs) -> Result<()> {
    let cfg = a.opt.config();
    cfg.validate()?;
    let p = prepare(&a.data, cfg.seed)?;
    let rated: Vec<RatedPair> = read_jsonl(&a.eval_set)?;
    let missing: BTreeSet<String> = rated
        .iter()
        .flat_map(|r| {
            let v = p.store.visual(&r.media).is_none().then(|| r.media.clone());
            let t = p
                .store
                .text(&r.candidate)
                .is_none()
                .then(|| r.candidate.clone());
            v.into_iter().chain(t)
        })
        .collect();
    if !missing.is_empty() {
        return Err(pacs_core::Error::DanglingIds(missing.into_iter().collect()).into());
    }
    let grid: Vec<(f64, f64)> = a
        .grid_v
        .iter()
        .flat_map(|&v| a.grid_t.iter().map(move |&t| (v, t)))
        .collect();
    let base = LossConfig {
        tau: a.opt.tau,
        ..LossConfig::default()
    };
    let bundle = CorrelationBundle {
        store: &p.store,
        tasks: vec![CorrelationTask {
            items: rated
                .into_iter()
                .map(|r| (r.media, r.candidate, r.human_score))
                .collect(),
            stat: a.stat.into(),
        }],
        score: ScoreConfig::default(),
    };
    let result = grid_search(&grid, &p.splits, &p.store, &p.init, &cfg, &base, &bundle)?;
    println!("lambda_v\tlambda_t\tscore");
    for pt in &result.points {
        println!("{}\t{}\t{:.6}", pt.lambda_v, pt.lambda_t, pt.mean);
    }
    let (lv, lt) = result.best;
    println!("best lambda_v {lv}, lambda_t {lt}");
    let out = &result.best_outcome;
    write_checkpoint(
        &Checkpoint {
            heads: out.heads.clone(),
            meta: Some(CheckpointMeta {
                loss: LossConfig {
                    lambda_v: lv,
                    lambda_t: lt,
                    ..base
                },
                train: cfg,
                iteration: out.best_iteration,
                best_val_loss: out.best_val_loss,
                tau: out.tau,
            }),
        },
        &a.out,
    )?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn run_inspect(path: PathBuf) -> Result<()> {
    let c = read_container(&path).with_context(|| format!("reading {}", path.display()))?;
    println!("path: {}", path.display());
    println!("version: {}", pacs_core::io::container::VERSION);
    println!("dtype: f32");
    println!("role: {}", c.role());
    println!("shape: {} x {}", c.rows(), c.cols());
    println!("ids: {}", c.entries().len());
    if !c.metadata().is_empty() {
        println!("metadata: {}", c.metadata());
    }
    Ok(())
}
