//! Runtime configuration shared by every benchmark command.
//!
//! A config file (TOML or JSON, chosen by extension) overrides whatever the
//! command-line flags set; every field has a default, so partial files are
//! fine. The fully resolved config is echoed into every report, which is what
//! makes a report reproducible: re-running a command with the echoed config
//! regenerates identical non-timing fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gerk_core::aggregation::ScoreConfig;
use gerk_core::eraser::{AggregationMode, EraserConfig, InferencePolicy};
use gerk_core::gnn::{Aggregator, GnnConfig, Updater};
use gerk_core::graph::{self, Graph, LabelRule, NodeSplit, SbmSpec};
use gerk_core::partition::{PartitionConfig, PartitionMethod};
use gerk_core::{GerkError, Result};

/// Where the benchmark graph comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Node CSV plus whitespace edge list.
    Files { node_file: PathBuf, edge_file: PathBuf },
    /// A saved graph snapshot.
    Snapshot { path: PathBuf },
    /// Synthetic block-model graph; the seed is shifted per repetition so
    /// repeated runs draw independent graphs from the same family.
    Sbm(SbmSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Node,
    Edge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub split_ratio: f64,
    pub stratified: bool,
    pub split_seed: u64,

    /// Partition method for single-method commands.
    pub method: PartitionMethod,
    /// Methods compared by the utility/aggregator commands.
    pub methods: Vec<PartitionMethod>,
    pub k: usize,
    pub gamma: f64,
    pub partition_max_iters: usize,
    pub bekm_tol: f64,
    pub blpa_strict_improve: bool,

    pub aggregator: Aggregator,
    pub updater: Updater,
    pub layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub gat_leaky: bool,

    pub mode: AggregationMode,
    pub policy: InferencePolicy,
    pub score_lambda: f64,
    pub score_learning_rate: f64,
    pub score_epochs: usize,
    pub subset_frac: f64,
    pub no_clamp: bool,

    pub n_requests: usize,
    pub request_kind: RequestKind,
    pub repetitions: usize,
    pub seed_base: u64,
    /// How many requests the scratch baseline actually times; the rest of
    /// its per-request cost is extrapolated from this sample.
    pub scratch_sample: usize,

    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,
    /// F1 gap between the structural model and the feature-only baseline
    /// below which random partitioning is recommended.
    pub guideline_threshold: f64,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Sbm(SbmSpec {
                blocks: vec![125; 4],
                p_in: 0.05,
                p_out: 0.003,
                feature_dim: 8,
                label_rule: LabelRule::BlockId,
                feature_noise: 3.0,
                centroid_scale: 1.0,
                seed: 0,
            }),
            split_ratio: 0.8,
            stratified: false,
            split_seed: 0,
            method: PartitionMethod::Blpa,
            methods: vec![PartitionMethod::Random, PartitionMethod::Blpa, PartitionMethod::Bekm],
            k: 10,
            gamma: 1.0,
            partition_max_iters: 30,
            bekm_tol: 1e-6,
            blpa_strict_improve: false,
            aggregator: Aggregator::Sage,
            updater: Updater::Linear,
            layers: 2,
            hidden_dim: 16,
            epochs: 100,
            learning_rate: 0.02,
            weight_decay: 5e-4,
            gat_leaky: false,
            mode: AggregationMode::Optimal,
            policy: InferencePolicy::ShardLocal,
            score_lambda: 1e-3,
            score_learning_rate: 0.05,
            score_epochs: 100,
            subset_frac: 0.1,
            no_clamp: false,
            n_requests: 100,
            request_kind: RequestKind::Node,
            repetitions: 10,
            seed_base: 0,
            scratch_sample: 10,
            mlp_hidden: 16,
            mlp_epochs: 100,
            mlp_learning_rate: 0.1,
            guideline_threshold: 0.03,
            out_dir: PathBuf::from("gerk-out"),
        }
    }
}

impl RunConfig {
    /// Applies a TOML or JSON config file on top of this config. File values
    /// win over whatever is already set.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GerkError::io(path.display().to_string(), e))?;
        // Round-trip through JSON so the file may set any subset of fields.
        let mut doc = serde_json::to_value(&*self)
            .map_err(|e| GerkError::InvalidConfig(format!("config encode: {e}")))?;
        let overlay: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                let t: toml::Value = toml::from_str(&text)
                    .map_err(|e| GerkError::InvalidConfig(format!("{}: {e}", path.display())))?;
                serde_json::to_value(t)
                    .map_err(|e| GerkError::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            _ => serde_json::from_str(&text)
                .map_err(|e| GerkError::InvalidConfig(format!("{}: {e}", path.display())))?,
        };
        merge_json(&mut doc, overlay);
        *self = serde_json::from_value(doc)
            .map_err(|e| GerkError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    /// Graph for repetition `rep`. File-backed datasets are fixed; synthetic
    /// ones shift their generator seed per repetition.
    pub fn load_graph(&self, rep: u64) -> Result<Graph> {
        match &self.dataset {
            DatasetSource::Files { node_file, edge_file } => graph::load_graph(node_file, edge_file),
            DatasetSource::Snapshot { path } => graph::load_snapshot(path),
            DatasetSource::Sbm(spec) => {
                let mut spec = spec.clone();
                spec.seed = spec.seed.wrapping_add(rep);
                graph::generate_sbm(&spec)
            }
        }
    }

    pub fn split(&self, g: &Graph, rep: u64) -> Result<NodeSplit> {
        graph::split_train_test_with(
            g,
            self.split_ratio,
            self.split_seed.wrapping_add(rep),
            self.stratified,
        )
    }

    pub fn partition_config(&self, method: PartitionMethod, k: usize, rep: u64) -> PartitionConfig {
        PartitionConfig {
            method,
            k,
            gamma: self.gamma,
            max_iters: self.partition_max_iters,
            seed: self.seed_base.wrapping_add(rep),
            bekm_tol: self.bekm_tol,
            blpa_strict_improve: self.blpa_strict_improve,
        }
    }

    pub fn gnn_config(&self, rep: u64) -> GnnConfig {
        GnnConfig {
            aggregator: self.aggregator,
            updater: self.updater,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed_base.wrapping_add(rep),
            gat_leaky: self.gat_leaky,
        }
    }

    pub fn score_config(&self, rep: u64) -> ScoreConfig {
        ScoreConfig {
            lambda: self.score_lambda,
            learning_rate: self.score_learning_rate,
            epochs: self.score_epochs,
            subset_frac: self.subset_frac,
            seed: self.seed_base.wrapping_add(rep),
            clamp: !self.no_clamp,
        }
    }

    pub fn eraser_config(&self, method: PartitionMethod, k: usize, mode: AggregationMode, rep: u64) -> EraserConfig {
        EraserConfig {
            partition: self.partition_config(method, k, rep),
            gnn: self.gnn_config(rep),
            mode,
            scores: self.score_config(rep),
            policy: self.policy,
        }
    }
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge_json(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_overrides_flags() {
        let mut cfg = RunConfig::default();
        cfg.k = 7; // pretend a flag set this
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "k = 12\nepochs = 3").unwrap();
        cfg.apply_file(f.path()).unwrap();
        assert_eq!(cfg.k, 12);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.repetitions, 10); // untouched default survives
    }

    #[test]
    fn json_config_and_nested_dataset() {
        let mut cfg = RunConfig::default();
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(
            f,
            "{}",
            r#"{"dataset": {"type": "sbm", "blocks": [50, 50], "p_in": 0.2, "p_out": 0.01,
                "feature_dim": 4, "label_rule": "block_id", "feature_noise": 1.0, "seed": 3},
               "mode": "majority"}"#
        )
        .unwrap();
        cfg.apply_file(f.path()).unwrap();
        assert_eq!(cfg.mode, AggregationMode::Majority);
        match &cfg.dataset {
            DatasetSource::Sbm(spec) => {
                assert_eq!(spec.blocks, vec![50, 50]);
                assert_eq!(spec.centroid_scale, 1.0); // serde default filled in
            }
            other => panic!("unexpected dataset {other:?}"),
        }
        let g = cfg.load_graph(0).unwrap();
        assert_eq!(g.node_count(), 100);
    }

    #[test]
    fn bad_config_file_is_config_error() {
        let mut cfg = RunConfig::default();
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "k = \"many\"").unwrap();
        let err = cfg.apply_file(f.path()).unwrap_err();
        assert!(matches!(err, GerkError::InvalidConfig(_)), "{err}");
    }
}
