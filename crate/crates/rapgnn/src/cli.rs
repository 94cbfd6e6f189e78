//! The `rapgnn` command line.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rapgnn_core::analysis::{layer_weight_matrix, rank_profile};
use rapgnn_core::data::Dataset;
use rapgnn_core::datasets::{sbm_node_dataset, synthetic_graph_set, SbmSpec};
use rapgnn_core::graph::{batch_graphs, Split};
use rapgnn_core::model::{EmbeddingKind, Model, ModelConfig, Prepared};
use rapgnn_core::propagation::{Backbone, WeightMode};
use rapgnn_core::protocol::{cross_validate, replicate_seeds, summarize, SeedRun};
use rapgnn_core::svd::TolPolicy;
use rapgnn_core::train::{evaluate, fit, pretrain_embedding, Clock, NoClock, PhaseResult, PretrainedEmbedding, TrainOutcome};
use serde::Serialize;
use serde_json::json;

use crate::artifact::{ArtifactError, ModelArtifact};
use crate::bench::{time_epochs, BenchCell, BenchOptions};
use crate::bundle::{load_bundle, save_bundle, Bundle, BundleError};
use crate::config::{ConfigError, ModelFlags};
use crate::manifest::RunManifest;
use crate::parallel::{map_ordered, thread_count, WallClock};
use crate::presets;
use crate::report::{write_history, write_matrix, write_rank_profile};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A request that cannot be carried out as given.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "rapgnn", version, about = "Random-propagation graph neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a graph bundle and write it out in normalized form.
    Ingest { src: PathBuf, dst: PathBuf },
    /// Write a synthetic dataset as a bundle.
    Generate(GenerateArgs),
    /// Pretrain the embedding and save it as an artifact.
    Pretrain(RunArgs),
    /// Train a model (pretraining first when the embedding needs it).
    Train(TrainArgs),
    /// Score a saved model on a split.
    Eval(EvalArgs),
    /// Per-layer rank and variance of a saved model's trunk.
    Rank(RankArgs),
    /// Time training and inference epochs across modes and depths.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Record wall-clock time in histories (makes them run-dependent).
    #[arg(long = "record-time")]
    pub record_time: bool,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Seed replicates starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Worker threads for seed replicates (capped by RAP_THREADS).
    #[arg(long = "parallel-seeds", default_value_t = 1)]
    pub parallel_seeds: usize,
    /// k-fold cross-validation for graph-level bundles.
    #[arg(long)]
    pub cv: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Switch the trunk's ReLU off for the profile.
    #[arg(long)]
    pub linear: bool,
    /// default | abs:X | rel:X
    #[arg(long, default_value = "default")]
    pub tol: String,
    /// Also write the weight matrix of this trunk layer.
    #[arg(long = "weights-layer")]
    pub weights_layer: Option<usize>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    /// Bundle directory; without it a synthetic graph of `--nodes` nodes is
    /// used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub nodes: usize,
    #[arg(long, value_delimiter = ',', default_value = "otf-diag,learned")]
    pub modes: Vec<WeightMode>,
    #[arg(long, value_delimiter = ',', default_value = "gcn")]
    pub backbones: Vec<Backbone>,
    #[arg(long, value_delimiter = ',', default_value = "2,8,32")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Worker threads; kernels are single-threaded, so only 1 is accepted.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, clap::Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub kind: GenerateKind,
}

#[derive(Debug, Clone, Subcommand)]
pub enum GenerateKind {
    /// Stochastic block model node-classification bundle.
    Sbm {
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long = "p-in", default_value_t = 0.1)]
        p_in: f64,
        #[arg(long = "p-out", default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long = "mean-scale", default_value_t = 1.0)]
        mean_scale: f64,
        #[arg(long = "per-class", default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 50)]
        val: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The 2000-node, 7-community benchmark graph.
    Sbm2000 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-graph bundle of sparse and dense random graphs.
    Graphs {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        features: usize,
        /// Edge density targets instead of density classes.
        #[arg(long)]
        regress: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for a failed command: 3 for numerical failures, 2 for
/// invalid input or configuration, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rapgnn_core::Error>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<BundleError>() {
            return match e {
                BundleError::Graph(g) => core_code(g),
                _ => EXIT_USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<ArtifactError>() {
            return match e {
                ArtifactError::Model(m) => core_code(m),
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<ConfigError>() || cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

fn core_code(e: &rapgnn_core::Error) -> u8 {
    use rapgnn_core::Error::*;
    match e {
        Diverged { .. } | NonFinite(_) | Numerical(_) => EXIT_NUMERICAL,
        Structure(_) | Shape(_) | Config(_) | Invalid(_) => EXIT_USAGE,
    }
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { src, dst } => cmd_ingest(&src, &dst),
        Command::Generate(g) => cmd_generate(g.kind),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Rank(a) => cmd_rank(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn load(path: &Path) -> Result<Bundle> {
    let b = load_bundle(path).with_context(|| format!("loading bundle {}", path.display()))?;
    if b.duplicates > 0 {
        eprintln!("warning: {} duplicate edge entries collapsed in {}", b.duplicates, path.display());
    }
    Ok(b)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_ingest(src: &Path, dst: &Path) -> Result<()> {
    let b = load(src)?;
    if src.canonicalize().ok() == dst.canonicalize().ok() && dst.exists() {
        bail!(usage("destination must differ from the source bundle"));
    }
    let m = save_bundle(dst, &b.dataset).with_context(|| format!("writing bundle {}", dst.display()))?;
    println!(
        "{}: task {}, {} nodes, {} edge lines, {} features, {} classes",
        dst.display(),
        m.task,
        m.n,
        m.m,
        m.c,
        m.num_classes
    );
    Ok(())
}

fn cmd_generate(kind: GenerateKind) -> Result<()> {
    let (data, out) = match kind {
        GenerateKind::Sbm { blocks, size, p_in, p_out, features, mean_scale, per_class, val, test, seed, out } => {
            let spec = SbmSpec { mean_scale, ..SbmSpec::balanced(blocks, size, p_in, p_out, features, seed) };
            (Dataset::Node(sbm_node_dataset(&spec, per_class, val, test)?), out)
        }
        GenerateKind::Sbm2000 { seed, out } => (Dataset::Node(presets::sbm_2000(seed)?), out),
        GenerateKind::Graphs { count, features, regress, seed, out } => {
            (Dataset::Graphs(synthetic_graph_set(count, features, regress, seed)?), out)
        }
    };
    let m = save_bundle(&out, &data)?;
    println!("{}: {} nodes, {} edge lines", out.display(), m.n, m.m);
    Ok(())
}

/// Config from flags, with the task taken from the bundle unless given.
fn resolve_config(flags: &ModelFlags, bundle: &Bundle) -> Result<ModelConfig> {
    let mut cfg = flags.resolve()?;
    if flags.task.is_none() {
        cfg.task = bundle.manifest.task;
    }
    cfg.validate_for(bundle.dataset.feature_dim())?;
    Ok(cfg)
}

fn pretrained_for(cfg: &ModelConfig) -> Result<Option<PretrainedEmbedding>> {
    match &cfg.embedding {
        EmbeddingKind::Pretrained(path) => {
            let art = ModelArtifact::read(Path::new(path)).with_context(|| format!("reading embedding {}", path))?;
            Ok(Some(art.pretrained_embedding()?))
        }
        _ => Ok(None),
    }
}

fn clock(record_time: bool) -> Box<dyn Clock> {
    if record_time {
        Box::new(WallClock::start())
    } else {
        Box::new(NoClock)
    }
}

fn write_phase(dir: &Path, file: &str, phase: &PhaseResult) -> Result<()> {
    write_history(create(&dir.join(file))?, &phase.history)?;
    Ok(())
}

fn summary(outcome: &TrainOutcome) -> serde_json::Value {
    let r = &outcome.main.report;
    let mut v = json!({
        "metric": r.metric.name(),
        "best_epoch": r.best_epoch,
        "train": r.train,
        "val": r.val,
        "test": r.test,
        "pretrain": outcome.pretrain.as_ref().map(|p| &p.report),
    });
    v[r.metric.name()] = json!(r.test);
    v
}

fn write_outcome(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    ModelArtifact::from_model(&outcome.model).write(&dir.join("model.bin"))?;
    write_phase(dir, "history.csv", &outcome.main)?;
    if let Some(p) = &outcome.pretrain {
        write_phase(dir, "pretrain_history.csv", p)?;
    }
    write_json(&dir.join("summary.json"), &summary(outcome))
}

fn cmd_pretrain(a: &RunArgs) -> Result<()> {
    let bundle = load(&a.data)?;
    let cfg = resolve_config(&a.model, &bundle)?;
    if !cfg.embedding.needs_pretraining() {
        bail!(usage(format!("embedding `{}` is not pretrained", cfg.embedding)));
    }
    RunManifest::new("pretrain", &cfg, a.data.display().to_string(), vec![cfg.seed], &a.out).write(&a.out)?;
    let data = &bundle.dataset;
    if cfg.task != data.task() {
        bail!(usage(format!("config task `{}` does not match bundle task `{}`", cfg.task, data.task())));
    }
    let mut model = Model::new(cfg, data.feature_dim(), data.out_dim())?;
    let res = pretrain_embedding(&mut model, data, clock(a.record_time).as_mut())?;
    ModelArtifact::from_model(&model).write(&a.out.join("embedding.bin"))?;
    write_phase(&a.out, "pretrain_history.csv", &res)?;
    let mut v = json!({ "metric": res.report.metric.name(), "report": res.report });
    v[res.report.metric.name()] = json!(res.report.test);
    write_json(&a.out.join("summary.json"), &v)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let run = &a.run;
    let bundle = load(&run.data)?;
    let cfg = resolve_config(&run.model, &bundle)?;
    if a.seeds == 0 {
        bail!(usage("--seeds must be at least 1"));
    }
    let seeds = replicate_seeds(cfg.seed, a.seeds);
    RunManifest::new("train", &cfg, run.data.display().to_string(), seeds.clone(), &run.out).write(&run.out)?;
    let pretrained = pretrained_for(&cfg)?;
    let data = &bundle.dataset;

    if let Some(k) = a.cv {
        let Dataset::Graphs(set) = data else {
            bail!(usage("cross-validation needs a multi-graph bundle"));
        };
        let report = cross_validate(&cfg, set, k, cfg.seed, clock(run.record_time).as_mut())?;
        let mut w = csv::Writer::from_writer(create(&run.out.join("cv_curves.csv"))?);
        let mut header = vec!["epoch".to_string(), "mean".into()];
        header.extend((0..k).map(|f| format!("fold_{}", f)));
        w.write_record(&header)?;
        for (e, m) in report.mean_curve.iter().enumerate() {
            let mut row = vec![e.to_string(), m.to_string()];
            row.extend(report.curves.iter().map(|c| c[e].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        return write_json(&run.out.join("cv.json"), &report);
    }

    let threads = thread_count(a.parallel_seeds);
    let outcomes = map_ordered(&seeds, threads, |&seed| {
        let cfg = ModelConfig { seed, ..cfg.clone() };
        fit(&cfg, data, pretrained.as_ref(), clock(run.record_time).as_mut())
    });
    let outcomes: Vec<TrainOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
    if outcomes.len() == 1 {
        write_outcome(&run.out, &outcomes[0])?;
        let r = &outcomes[0].main.report;
        match (r.test, r.best_epoch) {
            (Some(t), Some(e)) => println!("{} test {}: {:.4} (best epoch {})", cfg.mode, r.metric, t, e),
            _ => println!("{}: no epochs ran", cfg.mode),
        }
        return Ok(());
    }
    let mut runs = Vec::with_capacity(outcomes.len());
    for (seed, out) in seeds.iter().zip(&outcomes) {
        write_outcome(&run.out.join(format!("seed-{}", seed)), out)?;
        runs.push(SeedRun { seed: *seed, report: out.main.report.clone(), pretrain: out.pretrain.as_ref().map(|p| p.report.clone()) });
    }
    let s = summarize(cfg.metric(), runs);
    println!("{} test {}: {:.4} ± {:.4} over {} seeds", cfg.mode, s.metric, s.test_mean, s.test_std, seeds.len());
    let mut v = serde_json::to_value(&s)?;
    v[s.metric.name()] = json!(s.test_mean);
    write_json(&run.out.join("summary.json"), &v)
}

fn load_model(path: &Path, data: &Dataset) -> Result<Model> {
    let art = ModelArtifact::read(path).with_context(|| format!("reading model {}", path.display()))?;
    if art.in_dim != data.feature_dim() {
        bail!(usage(format!(
            "model expects {} input features, bundle has {}",
            art.in_dim,
            data.feature_dim()
        )));
    }
    if art.out_dim != data.out_dim() {
        bail!(usage(format!("model has {} outputs, bundle needs {}", art.out_dim, data.out_dim())));
    }
    if art.config.task != data.task() {
        bail!(usage(format!("model task `{}` does not match bundle task `{}`", art.config.task, data.task())));
    }
    Ok(art.to_model()?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let bundle = load(&a.data)?;
    let mut model = load_model(&a.model, &bundle.dataset)?;
    RunManifest::new("eval", &model.config, a.data.display().to_string(), vec![model.config.seed], &a.out)
        .write(&a.out)?;
    let split: Split = a.split.into();
    let value = evaluate(&mut model, &bundle.dataset, split)?;
    let metric = model.config.metric();
    let mut v = json!({ "metric": metric.name(), "split": format!("{:?}", split).to_lowercase(), "value": value });
    v[metric.name()] = json!(value);
    write_json(&a.out.join("eval.json"), &v)?;
    println!("{} {}: {}", format!("{:?}", split).to_lowercase(), metric, value);
    Ok(())
}

fn parse_tol(s: &str) -> Result<TolPolicy> {
    let bad = || usage(format!("tolerance `{}` is not default, abs:X or rel:X", s));
    if s == "default" {
        return Ok(TolPolicy::Default);
    }
    let (kind, v) = s.split_once(':').ok_or_else(bad)?;
    let v: f64 = v.parse().map_err(|_| bad())?;
    match kind {
        "abs" => Ok(TolPolicy::Absolute(v)),
        "rel" => Ok(TolPolicy::Relative(v)),
        _ => Err(bad()),
    }
}

fn cmd_rank(a: &RankArgs) -> Result<()> {
    let tol = parse_tol(&a.tol)?;
    let bundle = load(&a.data)?;
    let mut model = load_model(&a.model, &bundle.dataset)?;
    RunManifest::new("rank", &model.config, a.data.display().to_string(), vec![model.config.seed], &a.out)
        .write(&a.out)?;
    let backbone = model.config.backbone;
    let prep = match &bundle.dataset {
        Dataset::Node(d) => Prepared::node(&d.graph, backbone),
        Dataset::Graphs(d) => {
            let refs: Vec<_> = d.graphs.iter().collect();
            let b = batch_graphs(&refs)?;
            let sizes = d.graphs.iter().map(|g| g.num_nodes()).collect();
            Prepared::batch(&b.graph, backbone, b.assignment.clone(), sizes)
        }
    };
    let profile = rank_profile(&mut model, &prep.inputs(), a.linear, tol)?;
    write_rank_profile(create(&a.out.join("rank.tsv"))?, &profile)?;
    if let Some(l) = a.weights_layer {
        let w = layer_weight_matrix(&model, l)?;
        write_matrix(create(&a.out.join(format!("weights_layer{}.tsv", l)))?, &w)?;
    }
    println!("ranks {:?}", profile.ranks);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.threads != 1 {
        bail!(usage("benchmarks run single-threaded; --threads must be 1"));
    }
    let data = match &a.data {
        Some(p) => match load(p)?.dataset {
            Dataset::Node(d) => d,
            Dataset::Graphs(_) => bail!(usage("benchmarks need a node-level bundle")),
        },
        None => {
            let mut spec = presets::pubmed_scale_spec(a.seed);
            let scale = a.nodes as f64 / spec.num_nodes() as f64;
            let k = spec.sizes.len();
            spec.sizes = (0..k).map(|i| a.nodes / k + usize::from(i < a.nodes % k)).collect();
            spec.p_in /= scale;
            spec.p_out /= scale;
            sbm_node_dataset(&spec, 20, 500.min(a.nodes / 4), 1000.min(a.nodes / 4))?
        }
    };
    let mut grid = Vec::new();
    for &backbone in &a.backbones {
        for &layers in &a.depths {
            for &mode in &a.modes {
                grid.push(BenchCell { mode, backbone, layers });
            }
        }
    }
    let base = ModelConfig { hidden: a.width, seed: a.seed, ..ModelConfig::default() };
    let dataset = a.data.as_ref().map_or_else(|| format!("synthetic:{}", a.nodes), |p| p.display().to_string());
    RunManifest::new("bench", &base, dataset, vec![a.seed], &a.out).write(&a.out)?;
    let report = time_epochs(&grid, &data, &BenchOptions { base, warmup: a.warmup, reps: a.reps })?;
    report.write_csv(create(&a.out.join("bench.csv"))?)?;
    write_json(&a.out.join("bench.json"), &report)?;
    print!("{}", report.table());
    Ok(())
}
