//! The continual-learning metric suite over accuracy matrices.
//!
//! `A[t][k]` is the accuracy on task `k` after training through task `t`
//! (1-based, `k <= t`), stored as a lower triangle. The optional diagonal
//! `A'[k][k]` holds single-task baselines for forward transfer. Accuracy
//! within a task is the macro (per-class) average.

use std::collections::BTreeMap;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::layers::Mode;
use crate::stream::TaskData;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    /// `rows[i]` has `i + 1` entries: accuracies after task `i + 1`.
    rows: Vec<Vec<f64>>,
    /// Single-task diagonal, when measured.
    single: Option<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        AccuracyMatrix {
            num_tasks,
            rows: Vec::new(),
            single: None,
        }
    }

    pub fn from_rows(num_tasks: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new(num_tasks);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if self.rows.len() >= self.num_tasks {
            return Err(Error::Contract("matrix already complete".into()));
        }
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Shape(format!(
                "row after task {} must have {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("accuracies must lie in [0, 1]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn set_single(&mut self, diag: Vec<f64>) -> Result<()> {
        if diag.len() != self.num_tasks {
            return Err(Error::Shape(format!(
                "single-task diagonal must have {} entries, got {}",
                self.num_tasks,
                diag.len()
            )));
        }
        if diag.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("accuracies must lie in [0, 1]".into()));
        }
        self.single = Some(diag);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn rows_filled(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.num_tasks
    }

    /// 1-based accessor, `k <= t`.
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.rows[t - 1][k - 1]
    }

    pub fn single(&self) -> Option<&[f64]> {
        self.single.as_deref()
    }

    /// CSV schema: header `after_task,task_1..task_T`, one row per
    /// training step, empty cells for unseen tasks.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for k in 1..=self.num_tasks {
            out.push_str(&format!(",task_{k}"));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{}", i + 1));
            for k in 0..self.num_tasks {
                out.push(',');
                if k < row.len() {
                    out.push_str(&format!("{}", row[k]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty accuracy-matrix CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"after_task") {
            return Err(Error::Data(format!(
                "matrix CSV header must start with 'after_task', got '{header}'"
            )));
        }
        let num_tasks = cols.len() - 1;
        for (k, c) in cols.iter().skip(1).enumerate() {
            let expected = format!("task_{}", k + 1);
            if *c != expected {
                return Err(Error::Data(format!(
                    "matrix CSV column {} must be '{expected}', got '{c}'",
                    k + 1
                )));
            }
        }
        let mut m = AccuracyMatrix::new(num_tasks);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != num_tasks + 1 {
                return Err(Error::Data(format!(
                    "matrix CSV row {} has {} fields, expected {}",
                    i + 1,
                    fields.len(),
                    num_tasks + 1
                )));
            }
            let after: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad after_task value '{}'", fields[0])))?;
            if after != i + 1 {
                return Err(Error::Data(format!(
                    "matrix CSV rows must be consecutive; expected {}, got {after}",
                    i + 1
                )));
            }
            let mut row = Vec::with_capacity(after);
            for (k, f) in fields.iter().skip(1).enumerate() {
                let f = f.trim();
                if k < after {
                    let v: f64 = f
                        .parse()
                        .map_err(|_| Error::Data(format!("bad accuracy '{f}'")))?;
                    row.push(v);
                } else if !f.is_empty() {
                    return Err(Error::Data(format!(
                        "cell (after_task {after}, task_{}) should be empty",
                        k + 1
                    )));
                }
            }
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: AccuracyMatrix = serde_json::from_str(s)?;
        if m.rows.len() > m.num_tasks {
            return Err(Error::Data("more rows than tasks".into()));
        }
        for (i, r) in m.rows.iter().enumerate() {
            if r.len() != i + 1 {
                return Err(Error::Data("matrix is not lower-triangular".into()));
            }
        }
        Ok(m)
    }
}

fn require_complete(m: &AccuracyMatrix) -> Result<()> {
    if !m.is_complete() {
        return Err(Error::Contract(format!(
            "accuracy matrix has {} of {} rows",
            m.rows_filled(),
            m.num_tasks()
        )));
    }
    Ok(())
}

/// Mean accuracy over all tasks after the final task.
pub fn final_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    require_complete(m)?;
    let t = m.num_tasks();
    Ok((1..=t).map(|i| m.get(t, i)).sum::<f64>() / t as f64)
}

/// Mean over training steps of the seen-task average accuracy.
pub fn continual_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    require_complete(m)?;
    let t = m.num_tasks();
    let mut acc = 0.0;
    for i in 1..=t {
        let inner: f64 = (1..=i).map(|j| m.get(i, j)).sum();
        acc += inner / i as f64;
    }
    Ok(acc / t as f64)
}

/// Mean over non-final tasks of (peak accuracy - final accuracy).
pub fn forgetting(m: &AccuracyMatrix) -> Result<f64> {
    require_complete(m)?;
    let t = m.num_tasks();
    if t < 2 {
        return Err(Error::Contract(
            "forgetting is undefined for a single task".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 1..t {
        let peak = (i..=t).map(|s| m.get(s, i)).fold(f64::MIN, f64::max);
        acc += peak - m.get(t, i);
    }
    Ok(acc / (t - 1) as f64)
}

/// Mean over tasks 2..=T of (continual diagonal - single-task baseline).
pub fn forward_transfer(m: &AccuracyMatrix) -> Result<f64> {
    require_complete(m)?;
    let t = m.num_tasks();
    if t < 2 {
        return Err(Error::Contract(
            "forward transfer is undefined for a single task".into(),
        ));
    }
    let single = m
        .single()
        .ok_or_else(|| Error::Contract("forward transfer needs single-task baselines".into()))?;
    let mut acc = 0.0;
    for i in 2..=t {
        acc += m.get(i, i) - single[i - 1];
    }
    Ok(acc / (t - 1) as f64)
}

/// Full metric suite computed from one matrix. `forgetting` and
/// `forward_transfer` are omitted where undefined (single task, missing
/// baselines).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub final_accuracy: f64,
    pub continual_accuracy: f64,
    pub forgetting: Option<f64>,
    pub forward_transfer: Option<f64>,
    /// Task -> accuracies from its introduction to the final step.
    pub per_task_curves: BTreeMap<usize, Vec<f64>>,
}

pub fn report(m: &AccuracyMatrix) -> Result<MetricsReport> {
    require_complete(m)?;
    let t = m.num_tasks();
    let mut curves = BTreeMap::new();
    for k in 1..=t {
        curves.insert(k, (k..=t).map(|s| m.get(s, k)).collect());
    }
    Ok(MetricsReport {
        final_accuracy: final_accuracy(m)?,
        continual_accuracy: continual_accuracy(m)?,
        forgetting: if t >= 2 { Some(forgetting(m)?) } else { None },
        forward_transfer: if t >= 2 && m.single().is_some() {
            Some(forward_transfer(m)?)
        } else {
            None
        },
        per_task_curves: curves,
    })
}

/// One labelled row of the summary table.
#[derive(Debug, Clone)]
pub struct TableEntry {
    pub ssl: String,
    pub strategy: String,
    pub report: MetricsReport,
}

/// Plain-text table: one row per (SSL, strategy) pair with the four
/// metrics as columns.
pub fn render_table(entries: &[TableEntry]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<12} {:>7} {:>7} {:>7} {:>7}\n",
        "SSL", "Strategy", "FA", "CA", "F", "FT"
    ));
    out.push_str(&"-".repeat(56));
    out.push('\n');
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.3}"),
        None => "-".to_string(),
    };
    for e in entries {
        out.push_str(&format!(
            "{:<10} {:<12} {:>7.3} {:>7.3} {:>7} {:>7}\n",
            e.ssl,
            e.strategy,
            e.report.final_accuracy,
            e.report.continual_accuracy,
            fmt(e.report.forgetting),
            fmt(e.report.forward_transfer),
        ));
    }
    out
}

/// Macro (per-class) accuracy of predictions restricted to `classes`.
pub fn macro_accuracy(predictions: &[u32], labels: &[u32], classes: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape("prediction/label length mismatch".into()));
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test split".into()));
    }
    let mut acc = 0.0;
    for &class in classes {
        let mut total = 0usize;
        let mut correct = 0usize;
        for (p, l) in predictions.iter().zip(labels.iter()) {
            if *l as usize == class {
                total += 1;
                if p == l {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::Data(format!(
                "no test samples for class {class}"
            )));
        }
        acc += correct as f64 / total as f64;
    }
    Ok(acc / classes.len() as f64)
}

/// Evaluate the model's classifier on each seen task's held-out split.
/// Inference is task-label-free: the single all-class head decides.
pub fn evaluate_model(
    state: &mut ModelState,
    dataset: &Dataset,
    tasks: &[&TaskData],
    eval_batch: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        if task.test_indices.is_empty() {
            return Err(Error::Data(format!(
                "task {} has an empty test split",
                task.task_index
            )));
        }
        let mut predictions = Vec::with_capacity(task.test_indices.len());
        let mut labels = Vec::with_capacity(task.test_indices.len());
        for chunk in task.test_indices.chunks(eval_batch.max(1)) {
            let imgs: Vec<&ndarray::Array3<f32>> =
                chunk.iter().map(|&i| &dataset.test.images[i]).collect();
            let x = stack_images(&imgs);
            let (repr, _) = state.f_current.forward_infer(&x, Mode::Eval);
            let logits = state.classifier.forward_infer(&repr, Mode::Eval);
            for (row, &idx) in logits.rows().into_iter().zip(chunk.iter()) {
                let mut best = 0usize;
                let mut best_v = f32::MIN;
                for (c, &v) in row.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                predictions.push(best as u32);
                labels.push(dataset.test.labels[idx]);
            }
        }
        out.push(macro_accuracy(&predictions, &labels, &task.classes)?);
    }
    Ok(out)
}

/// Stack CHW images into a BCHW batch.
pub fn stack_images(images: &[&ndarray::Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = images[0].dim();
    let mut out = Array4::<f32>::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(img);
    }
    out
}
