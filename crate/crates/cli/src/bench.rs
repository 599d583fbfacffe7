//! Benchmark commands reproducing the evaluation protocol: unlearning
//! efficiency against a scratch baseline, test-set utility across partition
//! methods, aggregation comparisons, shard-count and request-count sweeps,
//! the feature-vs-structure guideline, and the per-shard score correlation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gerk_core::eraser::{AggregationMode, EraserState, UnlearnReport, UnlearnRequest};
use gerk_core::gnn::{train_mlp, Aggregator};
use gerk_core::graph::{Graph, NodeSplit};
use gerk_core::partition::PartitionMethod;
use gerk_core::{GerkError, Result};

use crate::config::{RequestKind, RunConfig};
use crate::report::{mean_std, spearman, BenchCell, BenchReport, GuidelineRow, ShardRow};

/// Builds one pipeline state for a given method/k/mode at repetition `rep`.
pub fn build_state(
    cfg: &RunConfig,
    method: PartitionMethod,
    k: usize,
    mode: AggregationMode,
    rep: u64,
) -> Result<(Graph, NodeSplit, EraserState)> {
    let g = cfg.load_graph(rep)?;
    let split = cfg.split(&g, rep)?;
    let state = EraserState::build(&g, &split, cfg.eraser_config(method, k, mode, rep))?;
    Ok((g, split, state))
}

/// The scratch baseline is the degenerate single-shard state: every request
/// retrains one model on the whole remaining training graph.
pub fn build_scratch(cfg: &RunConfig, rep: u64) -> Result<(Graph, NodeSplit, EraserState)> {
    build_state(cfg, PartitionMethod::Random, 1, AggregationMode::Mean, rep)
}

fn sample_request(state: &EraserState, kind: RequestKind, rng: &mut ChaCha8Rng) -> Option<UnlearnRequest> {
    let train = state.train_nodes();
    if train.is_empty() {
        return None;
    }
    match kind {
        RequestKind::Node => Some(UnlearnRequest::Node {
            u: train[rng.gen_range(0..train.len())],
        }),
        RequestKind::Edge => {
            for _ in 0..200 {
                let u = train[rng.gen_range(0..train.len())];
                let nbrs = state.alive_train_neighbors(u);
                if !nbrs.is_empty() {
                    return Some(UnlearnRequest::Edge {
                        u,
                        v: nbrs[rng.gen_range(0..nbrs.len())],
                    });
                }
            }
            None
        }
    }
}

/// Executes up to `n` seeded requests against the state, cumulatively.
pub fn run_requests(
    state: &mut EraserState,
    n: usize,
    kind: RequestKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UnlearnReport>> {
    let mut reports = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(req) = sample_request(state, kind, rng) else {
            break;
        };
        reports.push(state.unlearn(req)?);
    }
    Ok(reports)
}

/// Joined shard-model hashes; equal strings mean the exact same ensemble.
pub fn models_hash(state: &EraserState) -> String {
    (0..state.shard_count())
        .map(|i| state.shard_model(i).param_hash()[..16].to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Shard size, standalone test F1, and learned weight per shard.
pub fn per_shard_table(state: &EraserState) -> Result<Vec<ShardRow>> {
    let test = state.test_nodes();
    let truth: Vec<usize> = test.iter().map(|&u| state.base_graph().label(u)).collect();
    let sp = state.shard_posteriors(&test)?;
    let uniform = 1.0 / state.shard_count() as f64;
    (0..state.shard_count())
        .map(|i| {
            let f1 = gerk_core::gnn::micro_f1(&sp.shard(i).argmax_labels(), &truth)?;
            Ok(ShardRow {
                shard: i,
                size: state.shard_members(i).len(),
                f1,
                alpha: state.scores().map_or(uniform, |s| s.alpha[i]),
            })
        })
        .collect()
}

fn request_seed(cfg: &RunConfig, rep: u64, salt: u64) -> u64 {
    cfg.seed_base
        .wrapping_add(rep)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt)
}

/// Average unlearning time per method against the scratch baseline.
///
/// Per repetition, every method services the same number of seeded requests
/// on its own freshly built state; the scratch baseline times a configurable
/// sample of requests and the report marks its mean as extrapolated when the
/// sample is smaller than the full request count.
pub fn cmd_bench_unlearn(cfg: &RunConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("bench-unlearn", cfg);
    let scratch_n = cfg.scratch_sample.min(cfg.n_requests).max(1);

    let mut scratch_means = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions as u64 {
        let (_, _, mut scratch) = build_scratch(cfg, rep)?;
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(cfg, rep, 0));
        let reports = run_requests(&mut scratch, scratch_n, cfg.request_kind, &mut rng)?;
        let times: Vec<f64> = reports.iter().map(|r| r.total_seconds).collect();
        scratch_means.push(mean_std(&times).0);
    }
    let (scratch_mean, _) = mean_std(&scratch_means);

    let mut first_state: Option<EraserState> = None;
    for &method in &cfg.methods {
        let mut per_rep_means = Vec::with_capacity(cfg.repetitions);
        let mut f1_values = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions as u64 {
            let (_, split, mut state) = build_state(cfg, method, cfg.k, cfg.mode, rep)?;
            let mut rng = ChaCha8Rng::seed_from_u64(request_seed(cfg, rep, 1));
            let reports = run_requests(&mut state, cfg.n_requests, cfg.request_kind, &mut rng)?;
            let times: Vec<f64> = reports.iter().map(|r| r.total_seconds).collect();
            per_rep_means.push(mean_std(&times).0);
            f1_values.push(state.evaluate_f1(&split.test_nodes, cfg.mode)?);
            if first_state.is_none() {
                first_state = Some(state);
            }
        }
        let mut cell = BenchCell::new(format!("{method}/k{}", cfg.k));
        cell.method = method.to_string();
        cell.aggregation = cfg.mode.to_string();
        cell.k = cfg.k;
        cell.set_f1(f1_values);
        cell.set_unlearn_times(&per_rep_means);
        cell.scratch_mean_s = scratch_mean;
        cell.speedup = if cell.unlearn_mean_s > 0.0 {
            scratch_mean / cell.unlearn_mean_s
        } else {
            0.0
        };
        cell.scratch_extrapolated = scratch_n < cfg.n_requests;
        report.cells.push(cell);
    }
    if let Some(state) = &first_state {
        report.per_shard = per_shard_table(state)?;
    }
    Ok(report)
}

/// Test F1 of scratch and every sharded method under identical seeds.
pub fn cmd_eval_utility(cfg: &RunConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("eval-utility", cfg);

    let mut scratch_f1 = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions as u64 {
        let (_, split, state) = build_scratch(cfg, rep)?;
        scratch_f1.push(state.evaluate_f1(&split.test_nodes, AggregationMode::Mean)?);
    }
    let mut cell = BenchCell::new("scratch");
    cell.method = "scratch".into();
    cell.aggregation = "none".into();
    cell.k = 1;
    cell.set_f1(scratch_f1);
    report.cells.push(cell);

    for &method in &cfg.methods {
        let mut f1_values = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions as u64 {
            let (_, split, state) = build_state(cfg, method, cfg.k, cfg.mode, rep)?;
            f1_values.push(state.evaluate_f1(&split.test_nodes, cfg.mode)?);
        }
        let mut cell = BenchCell::new(format!("{method}/k{}", cfg.k));
        cell.method = method.to_string();
        cell.aggregation = cfg.mode.to_string();
        cell.k = cfg.k;
        cell.set_f1(f1_values);
        report.cells.push(cell);
    }
    Ok(report)
}

/// Mean, majority, and learned aggregation evaluated on identical shard
/// models, for every partition method.
pub fn cmd_compare_aggregators(cfg: &RunConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("compare-agg", cfg);
    for &method in &cfg.methods {
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); 3];
        let mut hashes: Vec<Vec<String>> = vec![Vec::new(); 3];
        for rep in 0..cfg.repetitions as u64 {
            // one build per rep; all three aggregations read the same models
            let (_, split, state) = build_state(cfg, method, cfg.k, AggregationMode::Optimal, rep)?;
            let hash = models_hash(&state);
            for (slot, mode) in [
                AggregationMode::Mean,
                AggregationMode::Majority,
                AggregationMode::Optimal,
            ]
            .into_iter()
            .enumerate()
            {
                values[slot].push(state.evaluate_f1(&split.test_nodes, mode)?);
                hashes[slot].push(hash.clone());
            }
        }
        for (slot, mode) in ["mean", "majority", "optimal"].into_iter().enumerate() {
            let mut cell = BenchCell::new(format!("{method}/{mode}"));
            cell.method = method.to_string();
            cell.aggregation = mode.to_string();
            cell.k = cfg.k;
            cell.set_f1(values[slot].clone());
            cell.model_hash = hashes[slot].join("|");
            report.cells.push(cell);
        }
    }
    Ok(report)
}

/// Unlearning time and utility as the shard count varies.
pub fn cmd_sweep_shards(cfg: &RunConfig, k_list: &[usize]) -> Result<BenchReport> {
    if k_list.is_empty() {
        return Err(GerkError::InvalidConfig("empty shard-count list".into()));
    }
    let mut report = BenchReport::new("sweep-shards", cfg);
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    for k in ks {
        let mut per_rep_means = Vec::with_capacity(cfg.repetitions);
        let mut f1_values = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions as u64 {
            let (_, split, mut state) = build_state(cfg, cfg.method, k, cfg.mode, rep)?;
            f1_values.push(state.evaluate_f1(&split.test_nodes, cfg.mode)?);
            let mut rng = ChaCha8Rng::seed_from_u64(request_seed(cfg, rep, k as u64));
            let reports = run_requests(&mut state, cfg.n_requests, cfg.request_kind, &mut rng)?;
            let times: Vec<f64> = reports.iter().map(|r| r.total_seconds).collect();
            per_rep_means.push(mean_std(&times).0);
        }
        let mut cell = BenchCell::new(format!("{}/k{k}", cfg.method));
        cell.method = cfg.method.to_string();
        cell.aggregation = cfg.mode.to_string();
        cell.k = k;
        cell.set_f1(f1_values);
        cell.set_unlearn_times(&per_rep_means);
        report.cells.push(cell);
    }
    Ok(report)
}

/// Utility under cumulative unlearning, audited after every batch.
pub fn cmd_sweep_requests(cfg: &RunConfig, counts: &[usize]) -> Result<BenchReport> {
    if counts.is_empty() {
        return Err(GerkError::InvalidConfig("empty request-count list".into()));
    }
    let mut report = BenchReport::new("sweep-requests", cfg);
    let mut checkpoints = counts.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let mut f1_at: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
    for rep in 0..cfg.repetitions as u64 {
        let (_, split, mut state) = build_state(cfg, cfg.method, cfg.k, cfg.mode, rep)?;
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(cfg, rep, 2));
        let mut applied = 0usize;
        for (slot, &target) in checkpoints.iter().enumerate() {
            let batch = target.saturating_sub(applied);
            let executed = run_requests(&mut state, batch, cfg.request_kind, &mut rng)?;
            applied += executed.len();
            let audit = state.audit();
            if !audit.passed() {
                return Err(GerkError::AuditFailed(audit.failures()));
            }
            f1_at[slot].push(state.evaluate_f1(&split.test_nodes, cfg.mode)?);
        }
    }
    for (slot, &target) in checkpoints.iter().enumerate() {
        let mut cell = BenchCell::new(format!("{}/requests{target}", cfg.method));
        cell.method = cfg.method.to_string();
        cell.aggregation = cfg.mode.to_string();
        cell.k = cfg.k;
        cell.requests_applied = target;
        cell.set_f1(f1_at[slot].clone());
        report.cells.push(cell);
    }
    Ok(report)
}

/// The partition-method decision rule: a small feature-vs-structure F1 gap
/// favors random partitioning; otherwise degree-normalized aggregation
/// favors label propagation and everything else the embedding clustering.
pub fn guideline_rule(mlp_f1: f64, gnn_f1: f64, aggregator: Aggregator, threshold: f64) -> &'static str {
    if gnn_f1 - mlp_f1 < threshold {
        "random"
    } else if aggregator == Aggregator::Gcn {
        "blpa"
    } else {
        "bekm"
    }
}

/// Compares the feature-only baseline with the structural model and emits a
/// partition-method recommendation per repetition.
pub fn cmd_guideline(cfg: &RunConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("guideline", cfg);
    let mut tally: std::collections::BTreeMap<String, usize> = Default::default();
    for rep in 0..cfg.repetitions as u64 {
        let (g, split, state) = build_scratch(cfg, rep)?;
        let gnn_f1 = state.evaluate_f1(&split.test_nodes, AggregationMode::Mean)?;
        let (train_graph, _) = g.induced_subgraph(&split.train_nodes)?;
        let mlp = train_mlp(
            &train_graph,
            cfg.mlp_hidden,
            cfg.mlp_epochs,
            cfg.mlp_learning_rate,
            cfg.seed_base.wrapping_add(rep),
        )?;
        let mlp_f1 = mlp.f1(&g, &split.test_nodes)?;
        let rec = guideline_rule(mlp_f1, gnn_f1, cfg.aggregator, cfg.guideline_threshold);
        *tally.entry(rec.to_string()).or_insert(0) += 1;
        report.guideline.push(GuidelineRow {
            rep,
            mlp_f1,
            gnn_f1,
            gap: gnn_f1 - mlp_f1,
            recommendation: rec.to_string(),
        });
    }
    report.recommendation = tally
        .into_iter()
        .max_by_key(|(_, count)| *count)
        .map(|(rec, _)| rec)
        .unwrap_or_default();
    Ok(report)
}

/// Per-shard standalone F1 against learned weight, with the rank correlation.
pub fn cmd_score_correlation(state: &EraserState, cfg: &RunConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("score-corr", cfg);
    report.per_shard = per_shard_table(state)?;
    let f1s: Vec<f64> = report.per_shard.iter().map(|r| r.f1).collect();
    let alphas: Vec<f64> = report.per_shard.iter().map(|r| r.alpha).collect();
    report.rank_correlation = spearman(&f1s, &alphas);
    Ok(report)
}

/// Builds a fresh state (repetition 0) and reports its score correlation.
pub fn cmd_score_correlation_from_cfg(cfg: &RunConfig) -> Result<BenchReport> {
    let (_, _, state) = build_state(cfg, cfg.method, cfg.k, AggregationMode::Optimal, 0)?;
    cmd_score_correlation(&state, cfg)
}
