use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gerk::bench;
use gerk::config::{DatasetSource, RequestKind, RunConfig};
use gerk::plot::{plot_csv, PlotKind};
use gerk::report::BenchReport;
use gerk_core::eraser::{load_checkpoint, save_checkpoint, AggregationMode, InferencePolicy};
use gerk_core::gnn::{node_embeddings, Aggregator, Updater};
use gerk_core::graph::{self, LabelRule, SbmSpec};
use gerk_core::partition::{partition, PartitionMethod};
use gerk_core::{GerkError, Result};

/// Sharded graph unlearning: balanced partitioning, per-shard models,
/// learned aggregation, and exact retraining on unlearning requests.
#[derive(Parser)]
#[command(name = "gerk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the pipeline and benchmark commands. A `--config` file
/// (TOML or JSON) overrides flag values.
#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Config file; file entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph snapshot produced by `ingest` or `sbm`.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Node CSV (`id,label,f0,...`), paired with --edges.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Whitespace edge list, paired with --nodes.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Training fraction of the node split.
    #[arg(long)]
    ratio: Option<f64>,
    /// Stratify the split by class.
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Partition method: random | blpa | bekm.
    #[arg(long)]
    method: Option<String>,
    /// Methods compared by eval-utility/compare-agg (comma separated).
    #[arg(long)]
    methods: Option<String>,
    /// Shard count.
    #[arg(long)]
    k: Option<usize>,
    /// Capacity slack: shard capacity = ceil(gamma * n / k).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    bekm_tol: Option<f64>,
    /// Require strict neighbor-count improvement for label-propagation moves.
    #[arg(long)]
    blpa_strict_improve: bool,
    /// Aggregation rule: gin | sage | gcn | gat.
    #[arg(long)]
    aggregator: Option<String>,
    /// Update rule: linear | concat | interpolation.
    #[arg(long)]
    updater: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Leaky rectifier inside the attention logit.
    #[arg(long)]
    gat_leaky: bool,
    /// Aggregation mode: mean | majority | optimal.
    #[arg(long)]
    mode: Option<String>,
    /// Inference graph policy: shard-local | global-ego.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    score_lambda: Option<f64>,
    #[arg(long)]
    score_learning_rate: Option<f64>,
    #[arg(long)]
    score_epochs: Option<usize>,
    #[arg(long)]
    subset_frac: Option<f64>,
    /// Skip the clamp-to-zero projection when fitting scores (ablation).
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    n_requests: Option<usize>,
    /// Request kind for benchmarks.
    #[arg(long, value_enum)]
    request_kind: Option<RequestKind>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scratch-baseline request sample size (extrapolated beyond it).
    #[arg(long)]
    scratch_sample: Option<usize>,
    #[arg(long)]
    guideline_threshold: Option<f64>,
    /// Report output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a node CSV and edge list into a graph snapshot.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a stochastic block-model snapshot.
    Sbm {
        /// Comma-separated block sizes, e.g. 250,250,250,250.
        #[arg(long)]
        blocks: String,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        /// block_id | nearest_centroid
        #[arg(long, default_value = "block_id")]
        label_rule: String,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        centroid_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition the training split of a graph and write the assignment.
    Partition {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the full pipeline state and write a checkpoint directory to
    /// --out-dir.
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Average unlearning time per method against the scratch baseline.
    BenchUnlearn {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Test F1 of scratch and every sharded method under identical seeds.
    EvalUtility {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Mean/majority/learned aggregation on identical shard models.
    CompareAgg {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Unlearning time and F1 as the shard count varies.
    SweepShards {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated shard counts, e.g. 2,10,50.
        #[arg(long)]
        k_list: String,
    },
    /// F1 under cumulative unlearning, audited after every batch.
    SweepRequests {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated cumulative request counts, e.g. 0,20,40.
        #[arg(long)]
        counts: String,
    },
    /// Recommend a partition method from the feature-vs-structure F1 gap.
    Guideline {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Per-shard standalone F1 against learned importance score.
    ScoreCorr {
        #[command(flatten)]
        common: CommonOpts,
        /// Read an existing checkpoint instead of building a fresh state.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Render a line or scatter SVG from a report CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<PartitionMethod> {
    match s {
        "random" => Ok(PartitionMethod::Random),
        "blpa" => Ok(PartitionMethod::Blpa),
        "bekm" => Ok(PartitionMethod::Bekm),
        other => Err(GerkError::InvalidConfig(format!("unknown method '{other}'"))),
    }
}

fn parse_aggregator(s: &str) -> Result<Aggregator> {
    match s {
        "gin" => Ok(Aggregator::Gin),
        "sage" => Ok(Aggregator::Sage),
        "gcn" => Ok(Aggregator::Gcn),
        "gat" => Ok(Aggregator::Gat),
        other => Err(GerkError::InvalidConfig(format!("unknown aggregator '{other}'"))),
    }
}

fn parse_updater(s: &str) -> Result<Updater> {
    match s {
        "linear" => Ok(Updater::Linear),
        "concat" => Ok(Updater::Concat),
        "interpolation" => Ok(Updater::Interpolation),
        other => Err(GerkError::InvalidConfig(format!("unknown updater '{other}'"))),
    }
}

fn parse_mode(s: &str) -> Result<AggregationMode> {
    match s {
        "mean" => Ok(AggregationMode::Mean),
        "majority" => Ok(AggregationMode::Majority),
        "optimal" => Ok(AggregationMode::Optimal),
        other => Err(GerkError::InvalidConfig(format!("unknown aggregation mode '{other}'"))),
    }
}

fn parse_policy(s: &str) -> Result<InferencePolicy> {
    match s {
        "shard-local" => Ok(InferencePolicy::ShardLocal),
        "global-ego" => Ok(InferencePolicy::GlobalEgo),
        other => Err(GerkError::InvalidConfig(format!("unknown inference policy '{other}'"))),
    }
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| GerkError::InvalidConfig(format!("bad list entry '{part}'")))
        })
        .collect()
}

/// Flags first, then the config file on top: file entries win.
fn resolve_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    match (&common.snapshot, &common.nodes, &common.edges) {
        (Some(path), _, _) => cfg.dataset = DatasetSource::Snapshot { path: path.clone() },
        (None, Some(nodes), Some(edges)) => {
            cfg.dataset = DatasetSource::Files {
                node_file: nodes.clone(),
                edge_file: edges.clone(),
            }
        }
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(GerkError::InvalidConfig("--nodes and --edges go together".into()));
        }
        (None, None, None) => {}
    }
    if let Some(v) = common.ratio {
        cfg.split_ratio = v;
    }
    if common.stratified {
        cfg.stratified = true;
    }
    if let Some(v) = common.split_seed {
        cfg.split_seed = v;
    }
    if let Some(v) = &common.method {
        cfg.method = parse_method(v)?;
    }
    if let Some(v) = &common.methods {
        cfg.methods = v
            .split(',')
            .map(|m| parse_method(m.trim()))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = common.k {
        cfg.k = v;
    }
    if let Some(v) = common.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = common.max_iters {
        cfg.partition_max_iters = v;
    }
    if let Some(v) = common.bekm_tol {
        cfg.bekm_tol = v;
    }
    if common.blpa_strict_improve {
        cfg.blpa_strict_improve = true;
    }
    if let Some(v) = &common.aggregator {
        cfg.aggregator = parse_aggregator(v)?;
    }
    if let Some(v) = &common.updater {
        cfg.updater = parse_updater(v)?;
    }
    if let Some(v) = common.layers {
        cfg.layers = v;
    }
    if let Some(v) = common.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = common.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = common.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = common.weight_decay {
        cfg.weight_decay = v;
    }
    if common.gat_leaky {
        cfg.gat_leaky = true;
    }
    if let Some(v) = &common.mode {
        cfg.mode = parse_mode(v)?;
    }
    if let Some(v) = &common.policy {
        cfg.policy = parse_policy(v)?;
    }
    if let Some(v) = common.score_lambda {
        cfg.score_lambda = v;
    }
    if let Some(v) = common.score_learning_rate {
        cfg.score_learning_rate = v;
    }
    if let Some(v) = common.score_epochs {
        cfg.score_epochs = v;
    }
    if let Some(v) = common.subset_frac {
        cfg.subset_frac = v;
    }
    if common.no_clamp {
        cfg.no_clamp = true;
    }
    if let Some(v) = common.n_requests {
        cfg.n_requests = v;
    }
    if let Some(v) = common.request_kind {
        cfg.request_kind = v;
    }
    if let Some(v) = common.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = common.seed {
        cfg.seed_base = v;
    }
    if let Some(v) = common.scratch_sample {
        cfg.scratch_sample = v;
    }
    if let Some(v) = common.guideline_threshold {
        cfg.guideline_threshold = v;
    }
    if let Some(v) = &common.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    Ok(cfg)
}

fn emit(report: &BenchReport, cfg: &RunConfig) -> Result<()> {
    report.write(&cfg.out_dir)?;
    for cell in &report.cells {
        let mut line = format!("{:<24} f1 {:.4} +- {:.4}", cell.label, cell.f1_mean, cell.f1_std);
        if cell.unlearn_mean_s > 0.0 {
            line.push_str(&format!(
                "  unlearn {:.4}s +- {:.4}s",
                cell.unlearn_mean_s, cell.unlearn_std_s
            ));
        }
        if cell.speedup > 0.0 {
            line.push_str(&format!(
                "  scratch {:.4}s  speedup {:.2}x{}",
                cell.scratch_mean_s,
                cell.speedup,
                if cell.scratch_extrapolated { " (extrapolated)" } else { "" }
            ));
        }
        println!("{line}");
    }
    if !report.recommendation.is_empty() {
        println!("recommendation: {}", report.recommendation);
    }
    if !report.per_shard.is_empty() && report.command == "score-corr" {
        println!("rank correlation (f1 vs alpha): {:.4}", report.rank_correlation);
    }
    println!("report written to {}", cfg.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { nodes, edges, out } => {
            let g = graph::load_graph(&nodes, &edges)?;
            graph::save_snapshot(&g, &out)?;
            println!(
                "ingested {} nodes, {} edges, {} classes -> {}",
                g.node_count(),
                g.edge_count(),
                g.num_classes(),
                out.display()
            );
            Ok(())
        }
        Command::Sbm {
            blocks,
            p_in,
            p_out,
            feature_dim,
            label_rule,
            noise,
            centroid_scale,
            seed,
            out,
        } => {
            let spec = SbmSpec {
                blocks: parse_usize_list(&blocks)?,
                p_in,
                p_out,
                feature_dim,
                label_rule: match label_rule.as_str() {
                    "block_id" => LabelRule::BlockId,
                    "nearest_centroid" => LabelRule::NearestCentroid,
                    other => {
                        return Err(GerkError::InvalidConfig(format!("unknown label rule '{other}'")))
                    }
                },
                feature_noise: noise,
                centroid_scale,
                seed,
            };
            let g = graph::generate_sbm(&spec)?;
            graph::save_snapshot(&g, &out)?;
            println!(
                "generated {} nodes, {} edges -> {}",
                g.node_count(),
                g.edge_count(),
                out.display()
            );
            Ok(())
        }
        Command::Partition { common, out } => {
            let cfg = resolve_config(&common)?;
            let g = cfg.load_graph(0)?;
            let split = cfg.split(&g, 0)?;
            let (g_train, _) = g.induced_subgraph(&split.train_nodes)?;
            let embeddings = match cfg.method {
                PartitionMethod::Bekm => Some(node_embeddings(&g_train, &cfg.gnn_config(0))?),
                _ => None,
            };
            let assignment = partition(
                &g_train,
                embeddings.as_ref(),
                &cfg.partition_config(cfg.method, cfg.k, 0),
            )?;
            let text = serde_json::to_string_pretty(&assignment)
                .map_err(|e| GerkError::Format(format!("assignment encode: {e}")))?;
            std::fs::write(&out, text).map_err(|e| GerkError::io(out.display().to_string(), e))?;
            println!(
                "partitioned {} training nodes into {} shards (delta {}, converged: {}) -> {}",
                g_train.node_count(),
                assignment.k,
                assignment.delta,
                assignment.converged,
                out.display()
            );
            Ok(())
        }
        Command::Train { common } => {
            let cfg = resolve_config(&common)?;
            let (_, split, state) = bench::build_state(&cfg, cfg.method, cfg.k, cfg.mode, 0)?;
            let audit = state.audit();
            if !audit.passed() {
                return Err(GerkError::AuditFailed(audit.failures()));
            }
            save_checkpoint(&state, &cfg.out_dir)?;
            let f1 = state.evaluate_f1(&split.test_nodes, cfg.mode)?;
            println!(
                "built {} shards ({}, mode {}), test f1 {:.4} -> {}",
                state.shard_count(),
                cfg.method,
                cfg.mode,
                f1,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::BenchUnlearn { common } => {
            let cfg = resolve_config(&common)?;
            let report = bench::cmd_bench_unlearn(&cfg)?;
            emit(&report, &cfg)
        }
        Command::EvalUtility { common } => {
            let cfg = resolve_config(&common)?;
            let report = bench::cmd_eval_utility(&cfg)?;
            emit(&report, &cfg)
        }
        Command::CompareAgg { common } => {
            let cfg = resolve_config(&common)?;
            let report = bench::cmd_compare_aggregators(&cfg)?;
            emit(&report, &cfg)
        }
        Command::SweepShards { common, k_list } => {
            let cfg = resolve_config(&common)?;
            let ks = parse_usize_list(&k_list)?;
            let report = bench::cmd_sweep_shards(&cfg, &ks)?;
            emit(&report, &cfg)
        }
        Command::SweepRequests { common, counts } => {
            let cfg = resolve_config(&common)?;
            let counts = parse_usize_list(&counts)?;
            let report = bench::cmd_sweep_requests(&cfg, &counts)?;
            emit(&report, &cfg)
        }
        Command::Guideline { common } => {
            let cfg = resolve_config(&common)?;
            let report = bench::cmd_guideline(&cfg)?;
            emit(&report, &cfg)
        }
        Command::ScoreCorr { common, state } => {
            let cfg = resolve_config(&common)?;
            let report = match state {
                Some(dir) => {
                    let state = load_checkpoint(&dir)?;
                    bench::cmd_score_correlation(&state, &cfg)?
                }
                None => bench::cmd_score_correlation_from_cfg(&cfg)?,
            };
            emit(&report, &cfg)
        }
        Command::Plot { csv, x, y, kind, out } => {
            plot_csv(&csv, &x, &y, kind, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn exit_code_for(err: &GerkError) -> ExitCode {
    match err {
        GerkError::InvalidConfig(_)
        | GerkError::Infeasible(_)
        | GerkError::Parse { .. }
        | GerkError::InvalidRequest(_)
        | GerkError::Format(_)
        | GerkError::Io { .. } => ExitCode::from(2),
        GerkError::AuditFailed(_) => ExitCode::from(3),
        GerkError::DimensionMismatch(_) => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
