//! Benchmark report structure and emission (JSON plus per-table CSV).

use std::path::Path;

use serde::{Deserialize, Serialize};

use gerk_core::{GerkError, Result};

use crate::config::RunConfig;

/// Execution environment echoed into every report. Timing fields are the
/// only nondeterministic report entries; everything else reproduces from the
/// config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvStamp {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub timestamp: String,
    pub version: String,
}

impl EnvStamp {
    pub fn collect() -> Self {
        EnvStamp {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            timestamp: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// One result cell: a (method, aggregation, k) combination with its utility
/// and timing statistics across repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub label: String,
    pub method: String,
    pub aggregation: String,
    pub k: usize,
    /// Sweep coordinate for request-count sweeps; otherwise 0.
    #[serde(default)]
    pub requests_applied: usize,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// Per-repetition F1 values, in repetition order.
    pub f1_values: Vec<f64>,
    pub unlearn_mean_s: f64,
    pub unlearn_std_s: f64,
    pub scratch_mean_s: f64,
    /// scratch_mean_s / unlearn_mean_s; 0 when timing was not measured.
    pub speedup: f64,
    /// True when the scratch baseline timed only a sample of the requests.
    pub scratch_extrapolated: bool,
    /// Hash of the shard models the cell was computed on, for controlled
    /// comparisons across aggregation modes.
    #[serde(default)]
    pub model_hash: String,
}

impl BenchCell {
    pub fn new(label: impl Into<String>) -> Self {
        BenchCell {
            label: label.into(),
            method: String::new(),
            aggregation: String::new(),
            k: 0,
            requests_applied: 0,
            f1_mean: 0.0,
            f1_std: 0.0,
            f1_values: Vec::new(),
            unlearn_mean_s: 0.0,
            unlearn_std_s: 0.0,
            scratch_mean_s: 0.0,
            speedup: 0.0,
            scratch_extrapolated: false,
            model_hash: String::new(),
        }
    }

    pub fn set_f1(&mut self, values: Vec<f64>) {
        let (mean, std) = mean_std(&values);
        self.f1_mean = mean;
        self.f1_std = std;
        self.f1_values = values;
    }

    pub fn set_unlearn_times(&mut self, per_rep_means: &[f64]) {
        let (mean, std) = mean_std(per_rep_means);
        self.unlearn_mean_s = mean;
        self.unlearn_std_s = std;
    }
}

/// One row of the per-shard table: size, standalone F1, learned weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardRow {
    pub shard: usize,
    pub size: usize,
    pub f1: f64,
    pub alpha: f64,
}

/// Guideline decision for one repetition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidelineRow {
    pub rep: u64,
    pub mlp_f1: f64,
    pub gnn_f1: f64,
    pub gap: f64,
    pub recommendation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub command: String,
    pub config: RunConfig,
    pub env: EnvStamp,
    pub cells: Vec<BenchCell>,
    #[serde(default)]
    pub per_shard: Vec<ShardRow>,
    #[serde(default)]
    pub guideline: Vec<GuidelineRow>,
    /// Final guideline recommendation, when the command produces one.
    #[serde(default)]
    pub recommendation: String,
    /// Spearman rank correlation of per-shard F1 and weight, when computed.
    #[serde(default)]
    pub rank_correlation: f64,
}

impl BenchReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        BenchReport {
            command: command.to_string(),
            config: config.clone(),
            env: EnvStamp::collect(),
            cells: Vec::new(),
            per_shard: Vec::new(),
            guideline: Vec::new(),
            recommendation: String::new(),
            rank_correlation: 0.0,
        }
    }

    /// Writes `report.json` plus one CSV per populated table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GerkError::io(dir.display().to_string(), e))?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| GerkError::Format(format!("report encode: {e}")))?;
        std::fs::write(dir.join("report.json"), json)
            .map_err(|e| GerkError::io(dir.display().to_string(), e))?;

        if !self.cells.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("cells.csv"))
                .map_err(|e| GerkError::Format(format!("cells.csv: {e}")))?;
            w.write_record([
                "label",
                "method",
                "aggregation",
                "k",
                "requests_applied",
                "f1_mean",
                "f1_std",
                "unlearn_mean_s",
                "unlearn_std_s",
                "scratch_mean_s",
                "speedup",
                "scratch_extrapolated",
            ])
            .map_err(|e| GerkError::Format(format!("cells.csv: {e}")))?;
            for c in &self.cells {
                w.write_record([
                    c.label.clone(),
                    c.method.clone(),
                    c.aggregation.clone(),
                    c.k.to_string(),
                    c.requests_applied.to_string(),
                    format!("{:.6}", c.f1_mean),
                    format!("{:.6}", c.f1_std),
                    format!("{:.6}", c.unlearn_mean_s),
                    format!("{:.6}", c.unlearn_std_s),
                    format!("{:.6}", c.scratch_mean_s),
                    format!("{:.4}", c.speedup),
                    c.scratch_extrapolated.to_string(),
                ])
                .map_err(|e| GerkError::Format(format!("cells.csv: {e}")))?;
            }
            w.flush().map_err(|e| GerkError::io("cells.csv", e))?;
        }

        if !self.per_shard.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("per_shard.csv"))
                .map_err(|e| GerkError::Format(format!("per_shard.csv: {e}")))?;
            w.write_record(["shard", "size", "f1", "alpha"])
                .map_err(|e| GerkError::Format(format!("per_shard.csv: {e}")))?;
            for r in &self.per_shard {
                w.write_record([
                    r.shard.to_string(),
                    r.size.to_string(),
                    format!("{:.6}", r.f1),
                    format!("{:.6}", r.alpha),
                ])
                .map_err(|e| GerkError::Format(format!("per_shard.csv: {e}")))?;
            }
            w.flush().map_err(|e| GerkError::io("per_shard.csv", e))?;
        }

        if !self.guideline.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("guideline.csv"))
                .map_err(|e| GerkError::Format(format!("guideline.csv: {e}")))?;
            w.write_record(["rep", "mlp_f1", "gnn_f1", "gap", "recommendation"])
                .map_err(|e| GerkError::Format(format!("guideline.csv: {e}")))?;
            for r in &self.guideline {
                w.write_record([
                    r.rep.to_string(),
                    format!("{:.6}", r.mlp_f1),
                    format!("{:.6}", r.gnn_f1),
                    format!("{:.6}", r.gap),
                    r.recommendation.clone(),
                ])
                .map_err(|e| GerkError::Format(format!("guideline.csv: {e}")))?;
            }
            w.flush().map_err(|e| GerkError::io("guideline.csv", e))?;
        }
        Ok(())
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let (ma, _) = mean_std(&ra);
    let (mb, _) = mean_std(&rb);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn spearman_monotone_is_one() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 25.0, 100.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = b.iter().rev().copied().collect();
        assert!((spearman(&a, &rev) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn speedup_field_is_consistent() {
        let mut cell = BenchCell::new("x");
        cell.set_unlearn_times(&[0.5, 0.5]);
        cell.scratch_mean_s = 2.0;
        cell.speedup = cell.scratch_mean_s / cell.unlearn_mean_s;
        assert!((cell.speedup - 4.0).abs() < 1e-12);
    }

    #[test]
    fn report_writes_tables() {
        let cfg = RunConfig::default();
        let mut report = BenchReport::new("test", &cfg);
        let mut cell = BenchCell::new("cell");
        cell.set_f1(vec![0.5, 0.7]);
        report.cells.push(cell);
        report.per_shard.push(ShardRow {
            shard: 0,
            size: 10,
            f1: 0.8,
            alpha: 0.5,
        });
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("cells.csv").exists());
        assert!(dir.path().join("per_shard.csv").exists());
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let parsed: BenchReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.cells[0].f1_values, vec![0.5, 0.7]);
    }
}
