//! The five CLI verbs: run, metrics, plot, validate-config, make-config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kaizen_core::error::{Error, Result};
use kaizen_core::metrics::{self, AccuracyMatrix, TableEntry};
use kaizen_core::trainer::{
    run_continual, run_single_task_baselines, save_checkpoint, LossLog,
};

use crate::artifacts::{
    self, read_manifest, run_dir, summarize, validate_artifact_dir, write_manifest, Manifest,
};
use crate::config::ExperimentConfig;
use crate::figures::{self, Bar, BarGroup, Series};

/// Execute every seed of an experiment and persist the artifact tree.
/// An existing manifest blocks the run unless `force` is set.
pub fn cmd_run(config: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    config.validate()?;
    let dir = run_dir(config);
    let hash = config.hash();
    if dir.join(artifacts::MANIFEST_FILE).exists() && !force {
        let existing = read_manifest(&dir)?;
        let hint = if existing.config_hash == hash {
            "same config hash"
        } else {
            "different config hash"
        };
        return Err(Error::Config(format!(
            "run directory {} already holds an artifact ({hint}); pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir)?;
    let mut files: Vec<String> = Vec::new();

    let dataset = config.load_dataset()?;
    let partition = kaizen_core::stream::split_classes(
        dataset.num_classes,
        config.num_tasks,
        config.partition_seed,
    )?;
    let task_stream = kaizen_core::stream::build_stream(
        &dataset,
        &partition,
        config.label_fraction,
        config.partition_seed,
    )?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    files.push("config.toml".into());
    fs::write(dir.join("partition.json"), partition.to_json())?;
    files.push("partition.json".into());

    let arch = config.architecture_spec(&dataset);
    let strategy_config = config.strategy_config();

    let per_seed_reports: BTreeMap<u64, metrics::MetricsReport>;
    let run_all = || -> Result<(BTreeMap<u64, metrics::MetricsReport>, Vec<String>)> {
        let mut reports = BTreeMap::new();
        let mut seed_files = Vec::new();
        for &seed in &config.seeds {
            let seed_dir = dir.join(format!("seed_{seed}"));
            let ckpt_dir = seed_dir.join("checkpoints");
            fs::create_dir_all(&ckpt_dir)?;
            let mut objective = config.build_objective()?;
            let mut log = LossLog::default();
            let mut matrix = run_continual(
                &dataset,
                &task_stream,
                &arch,
                &mut objective,
                &strategy_config,
                seed,
                &mut log,
                |state, buffer, objective, t| {
                    let path = ckpt_dir.join(format!("task_{t}.ckpt"));
                    save_checkpoint(&path, state, buffer, objective, t, seed)
                },
            )?;
            for t in 1..=config.num_tasks {
                seed_files.push(format!("seed_{seed}/checkpoints/task_{t}.ckpt"));
            }
            if config.evaluation.forward_transfer {
                let objective_template = config.build_objective()?;
                let diag = run_single_task_baselines(
                    &dataset,
                    &task_stream,
                    &arch,
                    &objective_template,
                    &strategy_config,
                    seed,
                )?;
                fs::write(
                    seed_dir.join("single_task.csv"),
                    artifacts::write_single_csv(&diag),
                )?;
                seed_files.push(format!("seed_{seed}/single_task.csv"));
                matrix.set_single(diag)?;
            }
            fs::write(seed_dir.join("accuracy_matrix.csv"), matrix.to_csv())?;
            fs::write(seed_dir.join("accuracy_matrix.json"), matrix.to_json())?;
            fs::write(seed_dir.join("loss_log.jsonl"), log.to_jsonl())?;
            let report = metrics::report(&matrix)?;
            fs::write(
                seed_dir.join("metrics.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "config_hash": hash,
                    "seed": seed,
                    "report": report,
                }))?,
            )?;
            for f in [
                "accuracy_matrix.csv",
                "accuracy_matrix.json",
                "loss_log.jsonl",
                "metrics.json",
            ] {
                seed_files.push(format!("seed_{seed}/{f}"));
            }
            reports.insert(seed, report);
        }
        Ok((reports, seed_files))
    };

    match run_all() {
        Ok((reports, seed_files)) => {
            per_seed_reports = reports;
            files.extend(seed_files);
        }
        Err(e) => {
            // keep partial artifacts, mark the failure
            let manifest = Manifest {
                name: config.name.clone(),
                config_hash: hash,
                status: "failed".into(),
                error: Some(e.to_string()),
                seeds: config.seeds.clone(),
                files,
                versions: Manifest::versions(),
            };
            write_manifest(&dir, &manifest)?;
            return Err(e);
        }
    }

    let summary = summarize(&hash, per_seed_reports.clone());
    fs::write(
        dir.join("metrics_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    files.push("metrics_summary.json".into());

    let mut entries: Vec<TableEntry> = per_seed_reports
        .iter()
        .map(|(seed, report)| TableEntry {
            ssl: config.ssl.kind.clone(),
            strategy: format!("{} [s{}]", config.strategy.name, seed),
            report: report.clone(),
        })
        .collect();
    entries.push(TableEntry {
        ssl: config.ssl.kind.clone(),
        strategy: format!("{} (mean)", config.strategy.name),
        report: metrics::MetricsReport {
            final_accuracy: summary.mean.final_accuracy,
            continual_accuracy: summary.mean.continual_accuracy,
            forgetting: summary.mean.forgetting,
            forward_transfer: summary.mean.forward_transfer,
            per_task_curves: Default::default(),
        },
    });
    fs::write(dir.join("metrics_table.txt"), metrics::render_table(&entries))?;
    files.push("metrics_table.txt".into());

    let manifest = Manifest {
        name: config.name.clone(),
        config_hash: hash,
        status: "complete".into(),
        error: None,
        seeds: config.seeds.clone(),
        files,
        versions: Manifest::versions(),
    };
    write_manifest(&dir, &manifest)?;
    validate_artifact_dir(&dir)?;
    Ok(dir)
}

fn load_matrix(path: &Path) -> Result<AccuracyMatrix> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => AccuracyMatrix::from_csv(&text),
        Some("json") => AccuracyMatrix::from_json(&text),
        _ => Err(Error::Data(format!(
            "{}: accuracy matrices are .csv or .json",
            path.display()
        ))),
    }
}

/// Compute metric reports for externally supplied matrices. Returns the
/// rendered table; per-matrix JSON reports land in `out_dir` when given.
pub fn cmd_metrics(
    matrix_files: &[PathBuf],
    single_task_file: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<String> {
    if matrix_files.is_empty() {
        return Err(Error::Config("no matrix files given".into()));
    }
    if single_task_file.is_some() && matrix_files.len() != 1 {
        return Err(Error::Config(
            "a single-task file applies to exactly one matrix".into(),
        ));
    }
    let mut entries = Vec::new();
    for path in matrix_files {
        let mut matrix = load_matrix(path)?;
        if let Some(sf) = single_task_file {
            let text = fs::read_to_string(sf)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", sf.display())))?;
            matrix.set_single(artifacts::read_single_csv(&text)?)?;
        }
        let report = metrics::report(&matrix)?;
        if let Some(out) = out_dir {
            fs::create_dir_all(out)?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("matrix");
            fs::write(
                out.join(format!("{stem}_metrics.json")),
                serde_json::to_string_pretty(&report)?,
            )?;
        }
        entries.push(TableEntry {
            ssl: "-".into(),
            strategy: path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("matrix")
                .to_string(),
            report,
        });
    }
    let table = metrics::render_table(&entries);
    if let Some(out) = out_dir {
        fs::write(out.join("metrics_table.txt"), &table)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Mean accuracy over seen tasks after each step, one series per run.
    Average,
    /// Per-task accuracy trajectories of one run.
    PerTask,
    /// Final/continual accuracy bars across runs.
    Bars,
    /// Metric panels against the replay fraction across runs.
    ReplayAblation,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "average" => Ok(PlotKind::Average),
            "per-task" => Ok(PlotKind::PerTask),
            "bars" => Ok(PlotKind::Bars),
            "replay-ablation" => Ok(PlotKind::ReplayAblation),
            other => Err(Error::Config(format!(
                "unknown plot kind '{other}' (average, per-task, bars, replay-ablation)"
            ))),
        }
    }
}

struct LoadedRun {
    name: String,
    matrices: Vec<AccuracyMatrix>,
    config: ExperimentConfig,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest = validate_artifact_dir(dir)?;
    let config = ExperimentConfig::from_toml(
        &fs::read_to_string(dir.join("config.toml"))
            .map_err(|e| Error::Data(format!("missing config snapshot: {e}")))?,
    )?;
    let mut matrices = Vec::new();
    for s in &manifest.seeds {
        let m = load_matrix(&dir.join(format!("seed_{s}/accuracy_matrix.csv")))?;
        matrices.push(m);
    }
    Ok(LoadedRun {
        name: manifest.name,
        matrices,
        config,
    })
}

fn load_runs(dirs: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    let mut runs = Vec::new();
    let mut absent = Vec::new();
    for d in dirs {
        match load_run(d) {
            Ok(r) => runs.push(r),
            Err(e) => absent.push(format!("{}: {e}", d.display())),
        }
    }
    if !absent.is_empty() {
        return Err(Error::Data(format!(
            "missing or invalid runs:\n  {}",
            absent.join("\n  ")
        )));
    }
    Ok(runs)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean-over-seen-tasks accuracy after each step, averaged across seeds.
fn average_curve(matrices: &[AccuracyMatrix]) -> Vec<(f64, f64)> {
    let t = matrices[0].num_tasks();
    (1..=t)
        .map(|step| {
            let vals: Vec<f64> = matrices
                .iter()
                .map(|m| mean(&(1..=step).map(|k| m.get(step, k)).collect::<Vec<_>>()))
                .collect();
            (step as f64, mean(&vals))
        })
        .collect()
}

/// Render the requested figure into one SVG document.
pub fn cmd_plot(dirs: &[PathBuf], kind: PlotKind, out: &Path) -> Result<()> {
    if dirs.is_empty() {
        return Err(Error::Config("no artifact directories given".into()));
    }
    let runs = load_runs(dirs)?;
    let svg = match kind {
        PlotKind::Average => {
            let series: Vec<Series> = runs
                .iter()
                .map(|r| Series {
                    label: r.name.clone(),
                    points: average_curve(&r.matrices),
                })
                .collect();
            figures::line_chart(
                "Average accuracy over seen tasks",
                "after task",
                "accuracy",
                &series,
                true,
            )
        }
        PlotKind::PerTask => {
            let r = &runs[0];
            let t = r.matrices[0].num_tasks();
            let series: Vec<Series> = (1..=t)
                .map(|k| Series {
                    label: format!("task {k}"),
                    points: (k..=t)
                        .map(|step| {
                            let vals: Vec<f64> =
                                r.matrices.iter().map(|m| m.get(step, k)).collect();
                            (step as f64, mean(&vals))
                        })
                        .collect(),
                })
                .collect();
            figures::line_chart(
                &format!("Per-task accuracy: {}", r.name),
                "after task",
                "accuracy",
                &series,
                true,
            )
        }
        PlotKind::Bars => {
            let groups: Vec<BarGroup> = runs
                .iter()
                .map(|r| {
                    let fas: Vec<f64> = r
                        .matrices
                        .iter()
                        .map(|m| metrics::final_accuracy(m).unwrap_or(0.0))
                        .collect();
                    let cas: Vec<f64> = r
                        .matrices
                        .iter()
                        .map(|m| metrics::continual_accuracy(m).unwrap_or(0.0))
                        .collect();
                    let std = |v: &[f64]| {
                        let m = mean(v);
                        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
                    };
                    BarGroup {
                        label: r.name.clone(),
                        bars: vec![
                            Bar {
                                label: "FA".into(),
                                value: mean(&fas),
                                err: std(&fas),
                            },
                            Bar {
                                label: "CA".into(),
                                value: mean(&cas),
                                err: std(&cas),
                            },
                        ],
                    }
                })
                .collect();
            figures::bar_chart("Final and continual accuracy", "accuracy", &groups)
        }
        PlotKind::ReplayAblation => {
            // one point per run at its replay fraction, per metric panel
            let mut pts: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
            for r in &runs {
                let frac = r.config.replay.fraction;
                let mut fa = Vec::new();
                let mut ca = Vec::new();
                let mut f = Vec::new();
                let mut ft = Vec::new();
                for m in &r.matrices {
                    let rep = metrics::report(m)?;
                    fa.push(rep.final_accuracy);
                    ca.push(rep.continual_accuracy);
                    if let Some(v) = rep.forgetting {
                        f.push(v);
                    }
                    if let Some(v) = rep.forward_transfer {
                        ft.push(v);
                    }
                }
                pts.push((frac, fa, ca, f, ft));
            }
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let series_of = |sel: fn(&(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
                vec![Series {
                    label: "mean over seeds".into(),
                    points: pts
                        .iter()
                        .filter(|p| !sel(p).is_empty())
                        .map(|p| (p.0, mean(sel(p))))
                        .collect(),
                }]
            };
            let panels = vec![
                ("Final accuracy".to_string(), series_of(|p| &p.1)),
                ("Continual accuracy".to_string(), series_of(|p| &p.2)),
                ("Forgetting".to_string(), series_of(|p| &p.3)),
                ("Forward transfer".to_string(), series_of(|p| &p.4)),
            ];
            figures::panel_grid("Replay-fraction ablation", &panels, "replay fraction")
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, svg)?;
    Ok(())
}

pub fn cmd_validate_config(path: &Path) -> Result<String> {
    let config = ExperimentConfig::load(path)?;
    config.validate()?;
    Ok(format!(
        "ok: '{}' valid, config hash {}",
        config.name,
        config.hash()
    ))
}

/// Write a fully populated default configuration.
pub fn cmd_make_config(path: &Path) -> Result<()> {
    let header = "\
# Experiment configuration. Every field is significant for the config
# hash; runs refuse to overwrite an existing artifact without --force.
#
# dataset.id: synthetic | cifar10 | cifar100 | image-dir | image-folder
# strategy.name: kaizen | cassle | no_distill
# ssl.kind: simclr | mocov2+ | byol | vicreg (method hyperparameters
# default to their original formulations when omitted)
# architecture.backbone: resnet18 | small
#
# Relative dataset paths honor KAIZEN_DATA_ROOT; relative output
# directories honor KAIZEN_OUTPUT_ROOT.

";
    let cfg = ExperimentConfig::default();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, format!("{header}{}", cfg.to_toml()))?;
    Ok(())
}
