//! Run-artifact layout and the manifest every artifact tree carries.
//!
//! ```text
//! <output_dir>/<name>/
//!   manifest.json            status, config hash, file inventory
//!   config.toml              the exact config that produced the run
//!   partition.json           class-to-task assignment
//!   metrics_summary.json     per-seed reports plus mean and population std
//!   metrics_table.txt
//!   seed_<s>/
//!     accuracy_matrix.csv    schema: after_task,task_1..task_T
//!     accuracy_matrix.json
//!     single_task.csv        single-task diagonal (forward transfer runs)
//!     metrics.json
//!     loss_log.jsonl
//!     checkpoints/task_<t>.ckpt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kaizen_core::error::{Error, Result};
use kaizen_core::metrics::MetricsReport;

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    /// `complete` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seeds: Vec<u64>,
    /// Relative paths of every artifact in the tree.
    pub files: Vec<String>,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn versions() -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("kaizen-cli".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("artifact-format".into(), "1".into());
        m
    }
}

pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(&config.name)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// A successful artifact tree must contain, for every seed, the matrix
/// (CSV and JSON), the metrics report, and the loss log, plus the shared
/// config snapshot and summary.
pub fn validate_artifact_dir(dir: &Path) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    if manifest.status != "complete" {
        return Err(Error::Data(format!(
            "artifact {} has status '{}'",
            dir.display(),
            manifest.status
        )));
    }
    let mut required: Vec<String> = vec![
        "config.toml".into(),
        "partition.json".into(),
        "metrics_summary.json".into(),
        "metrics_table.txt".into(),
    ];
    for s in &manifest.seeds {
        required.push(format!("seed_{s}/accuracy_matrix.csv"));
        required.push(format!("seed_{s}/accuracy_matrix.json"));
        required.push(format!("seed_{s}/metrics.json"));
        required.push(format!("seed_{s}/loss_log.jsonl"));
    }
    let mut missing = Vec::new();
    for f in &required {
        if !manifest.files.iter().any(|m| m == f) || !dir.join(f).is_file() {
            missing.push(f.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "artifact {} is incomplete; missing: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    Ok(manifest)
}

/// Per-seed reports plus their mean and population standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub config_hash: String,
    pub per_seed: BTreeMap<u64, MetricsReport>,
    pub mean: SummaryStats,
    pub std: SummaryStats,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SummaryStats {
    pub final_accuracy: f64,
    pub continual_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_transfer: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(config_hash: &str, per_seed: BTreeMap<u64, MetricsReport>) -> MetricsSummary {
    let fas: Vec<f64> = per_seed.values().map(|r| r.final_accuracy).collect();
    let cas: Vec<f64> = per_seed.values().map(|r| r.continual_accuracy).collect();
    let fs: Vec<f64> = per_seed.values().filter_map(|r| r.forgetting).collect();
    let fts: Vec<f64> = per_seed.values().filter_map(|r| r.forward_transfer).collect();
    let (fa_m, fa_s) = mean_std(&fas);
    let (ca_m, ca_s) = mean_std(&cas);
    let f_stat = (!fs.is_empty() && fs.len() == per_seed.len()).then(|| mean_std(&fs));
    let ft_stat = (!fts.is_empty() && fts.len() == per_seed.len()).then(|| mean_std(&fts));
    MetricsSummary {
        config_hash: config_hash.to_string(),
        per_seed,
        mean: SummaryStats {
            final_accuracy: fa_m,
            continual_accuracy: ca_m,
            forgetting: f_stat.map(|(m, _)| m),
            forward_transfer: ft_stat.map(|(m, _)| m),
        },
        std: SummaryStats {
            final_accuracy: fa_s,
            continual_accuracy: ca_s,
            forgetting: f_stat.map(|(_, s)| s),
            forward_transfer: ft_stat.map(|(_, s)| s),
        },
    }
}

/// Single-task diagonal CSV: header `task,accuracy`.
pub fn write_single_csv(diag: &[f64]) -> String {
    let mut out = String::from("task,accuracy\n");
    for (i, v) in diag.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, v));
    }
    out
}

pub fn read_single_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty single-task CSV".into()))?;
    if header.trim() != "task,accuracy" {
        return Err(Error::Data(format!(
            "single-task CSV header must be 'task,accuracy', got '{header}'"
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Data(format!(
                "single-task CSV line {}: expected 2 fields",
                i + 2
            )));
        }
        let task: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad task index '{}'", parts[0])))?;
        if task != i + 1 {
            return Err(Error::Data("single-task rows must be consecutive".into()));
        }
        out.push(
            parts[1]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad accuracy '{}'", parts[1])))?,
        );
    }
    Ok(out)
}
