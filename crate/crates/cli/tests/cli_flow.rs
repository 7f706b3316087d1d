//! End-to-end CLI flow: make-config, validate-config, run, metrics, plot,
//! plus exit-code classes and the refuse-without-force contract.

use std::fs;
use std::path::Path;
use std::process::Command;

fn kaizen() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kaizen"))
}

fn tiny_config(dir: &Path, name: &str, strategy: &str, seeds: &str, replay: f64) -> String {
    format!(
        r#"
name = "{name}"
seeds = {seeds}
partition_seed = 40
num_tasks = 2
label_fraction = 1.0
output_dir = "{}"

[dataset]
id = "synthetic"
[dataset.synthetic]
num_classes = 10
per_class_train = 10
per_class_test = 4
resolution = 16
seed = 3

[strategy]
name = "{strategy}"
kd_fe_weight = 1.0
kd_c_weight = 2.0
ct_c_weight = 1.0
ct_fe_weight = 1.0
classifier_input = "current_view1"

[ssl]
kind = "simclr"
symmetrize = false

[architecture]
backbone = "small"
width_multiplier = 0.25
classifier_hidden = 16
projector_hidden = 16
projector_dim = 8
predictor_hidden = 8
head_batchnorm = true

[replay]
fraction = {replay}
min_per_batch = 2

[train]
epochs_per_task = 1
epoch_scale = 1.0
batch_size = 10
lr = 0.05
sgd_momentum = 0.9
weight_decay = 0.0001
cosine_schedule = true
posthoc_epochs = 1
posthoc_lr = 0.1
eval_batch = 32

[evaluation]
forward_transfer = false
"#,
        dir.join("runs").display()
    )
}

#[test]
fn full_cli_flow() {
    let dir = tempfile::tempdir().unwrap();

    // make-config produces a loadable default
    let tpl = dir.path().join("default.toml");
    let out = kaizen()
        .args(["make-config", "--out", tpl.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = kaizen()
        .args(["validate-config", "--config", tpl.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("config hash"));

    // run a tiny experiment
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, tiny_config(dir.path(), "tiny", "kaizen", "[1]", 0.1)).unwrap();
    let out = kaizen()
        .args(["run", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = dir.path().join("runs/tiny");
    for f in [
        "manifest.json",
        "config.toml",
        "partition.json",
        "metrics_summary.json",
        "metrics_table.txt",
        "seed_1/accuracy_matrix.csv",
        "seed_1/accuracy_matrix.json",
        "seed_1/metrics.json",
        "seed_1/loss_log.jsonl",
        "seed_1/checkpoints/task_1.ckpt",
        "seed_1/checkpoints/task_2.ckpt",
    ] {
        assert!(run_dir.join(f).is_file(), "missing artifact {f}");
    }
    let csv = fs::read_to_string(run_dir.join("seed_1/accuracy_matrix.csv")).unwrap();
    assert!(csv.starts_with("after_task,task_1,task_2"));

    // rerun without --force refuses with the config exit code
    let out = kaizen()
        .args(["run", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));

    // rerun with --force reproduces byte-identical matrices
    let before = fs::read(run_dir.join("seed_1/accuracy_matrix.csv")).unwrap();
    let out = kaizen()
        .args(["run", "--config", cfg_path.to_str().unwrap(), "--force"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let after = fs::read(run_dir.join("seed_1/accuracy_matrix.csv")).unwrap();
    assert_eq!(before, after, "forced rerun must reproduce matrices byte-identically");

    // metrics over the produced matrix
    let out = kaizen()
        .args([
            "metrics",
            run_dir.join("seed_1/accuracy_matrix.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("FA"));
    assert!(table.contains("accuracy_matrix"));

    // plots
    for kind in ["average", "per-task", "bars"] {
        let svg_path = dir.path().join(format!("{kind}.svg"));
        let out = kaizen()
            .args([
                "plot",
                run_dir.to_str().unwrap(),
                "--kind",
                kind,
                "--out",
                svg_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "plot {kind} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let svg = fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
    }
}

#[test]
fn metrics_on_handwritten_matrix_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    // hand-written matrix with the known metric values
    let mpath = dir.path().join("m.csv");
    fs::write(&mpath, "after_task,task_1,task_2\n1,0.8,\n2,0.5,0.7\n").unwrap();
    let spath = dir.path().join("s.csv");
    fs::write(&spath, "task,accuracy\n1,0.8\n2,0.75\n").unwrap();
    let out = kaizen()
        .args([
            "metrics",
            mpath.to_str().unwrap(),
            "--single-task",
            spath.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("0.600"), "FA: {table}");
    assert!(table.contains("0.700"), "CA: {table}");
    assert!(table.contains("0.300"), "F: {table}");
    assert!(table.contains("-0.050"), "FT: {table}");

    // schema violation: data exit code
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "wrong,header\n1,0.5\n").unwrap();
    let out = kaizen().args(["metrics", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    // config error: unknown plot kind
    let out = kaizen()
        .args(["plot", ".", "--kind", "spiral", "--out", "x.svg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // invalid config file: config exit code
    let badcfg = dir.path().join("bad.toml");
    fs::write(&badcfg, "name = \"x\"\nmystery = true\n").unwrap();
    let out = kaizen()
        .args(["validate-config", "--config", badcfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strategy_sweep_shares_partition() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in ["kaizen", "no_distill"] {
        let cfg_path = dir.path().join(format!("{strategy}.toml"));
        fs::write(
            &cfg_path,
            tiny_config(dir.path(), &format!("sweep-{strategy}"), strategy, "[1]", 0.1),
        )
        .unwrap();
        let out = kaizen()
            .args(["run", "--config", cfg_path.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let p1 = fs::read_to_string(dir.path().join("runs/sweep-kaizen/partition.json")).unwrap();
    let p2 = fs::read_to_string(dir.path().join("runs/sweep-no_distill/partition.json")).unwrap();
    assert_eq!(p1, p2, "strategy sweep must share one partition");
}

#[test]
fn forward_transfer_artifacts_present_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), "ft", "no_distill", "[1]", 0.1);
    cfg = cfg.replace("forward_transfer = false", "forward_transfer = true");
    let cfg_path = dir.path().join("ft.toml");
    fs::write(&cfg_path, cfg).unwrap();
    let out = kaizen()
        .args(["run", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("runs/ft");
    assert!(run_dir.join("seed_1/single_task.csv").is_file());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("seed_1/metrics.json")).unwrap())
            .unwrap();
    assert!(
        metrics["report"]["forward_transfer"].is_number(),
        "forward transfer must be reported: {metrics}"
    );
}
