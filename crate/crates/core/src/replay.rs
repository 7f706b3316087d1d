//! Labelled memory replay.
//!
//! After each task a class-stratified, seed-deterministic fraction of that
//! task's labelled data is appended to the buffer; entries are never
//! mutated afterwards. During later tasks every training batch is topped
//! up with at least `min_per_batch` replay samples, drawn by a cycling
//! cursor that visits every entry exactly once per pass (the buffer is
//! reset and re-permuted as many times as needed).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seeding::{self, stream};
use crate::stream::{stratified_counts, TaskData};

/// A reference to one retained labelled sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ReplayEntry {
    /// Index into the dataset's train set.
    pub dataset_index: usize,
    pub class_id: u32,
    pub source_task: usize,
}

/// One row of a (possibly mixed) training batch: a sample reference plus
/// its label when available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRow {
    pub dataset_index: usize,
    pub label: Option<u32>,
    pub from_replay: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
    pub fraction: f64,
    pub min_per_batch: usize,
    seed: u64,
    ingested: BTreeSet<usize>,
    order: Vec<u32>,
    cursor: usize,
    passes: u64,
}

#[derive(Serialize, Deserialize)]
struct ReplayBufferFile {
    fraction: f64,
    min_per_batch: usize,
    seed: u64,
    ingested: Vec<usize>,
    entries: Vec<ReplayEntry>,
    cursor: usize,
    passes: u64,
}

impl ReplayBuffer {
    pub fn new(fraction: f64, min_per_batch: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "replay fraction must be in [0, 1], got {fraction}"
            )));
        }
        Ok(ReplayBuffer {
            entries: Vec::new(),
            fraction,
            min_per_batch,
            seed,
            ingested: BTreeSet::new(),
            order: Vec::new(),
            cursor: 0,
            passes: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    fn reshuffle(&mut self) {
        let mut order: Vec<u32> = (0..self.entries.len() as u32).collect();
        let mut rng = seeding::rng_for(self.seed, &[stream::REPLAY_PASS, self.passes]);
        order.shuffle(&mut rng);
        self.order = order;
        self.cursor = 0;
    }

    /// Ingest `fraction` of the task's labelled data, class-stratified.
    pub fn update(&mut self, dataset: &Dataset, task: &TaskData) -> Result<()> {
        if self.ingested.contains(&task.task_index) {
            return Err(Error::Contract(format!(
                "task {} was already ingested into the replay buffer",
                task.task_index
            )));
        }
        self.ingested.insert(task.task_index);
        let eligible = task.labelled_indices();
        let target = (self.fraction * eligible.len() as f64).round() as usize;
        if target > 0 {
            // group eligible indices by class, in task-class order
            let mut per_class: Vec<Vec<usize>> = task.classes.iter().map(|_| Vec::new()).collect();
            for &i in &eligible {
                let class = dataset.train.labels[i] as usize;
                let pos = task
                    .classes
                    .iter()
                    .position(|&c| c == class)
                    .expect("labelled sample outside task classes");
                per_class[pos].push(i);
            }
            let counts: Vec<usize> = per_class.iter().map(|v| v.len()).collect();
            let take = stratified_counts(&counts, target, false);
            for (ci, pool) in per_class.iter().enumerate() {
                let mut pool = pool.clone();
                let mut rng = seeding::rng_for(
                    self.seed,
                    &[stream::REPLAY_SELECT, task.task_index as u64, ci as u64],
                );
                pool.shuffle(&mut rng);
                for &i in pool.iter().take(take[ci]) {
                    self.entries.push(ReplayEntry {
                        dataset_index: i,
                        class_id: dataset.train.labels[i],
                        source_task: task.task_index,
                    });
                }
            }
        }
        self.passes += 1;
        self.reshuffle();
        Ok(())
    }

    /// Draw `n` entries, cycling fairly through the buffer.
    fn draw(&mut self, n: usize) -> Vec<ReplayEntry> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor >= self.order.len() {
                self.passes += 1;
                self.reshuffle();
            }
            let idx = self.order[self.cursor] as usize;
            self.cursor += 1;
            out.push(self.entries[idx].clone());
        }
        out
    }

    /// Top a current-task batch up to exactly `batch_size` rows with at
    /// least `min_per_batch` replay samples (when the buffer is
    /// non-empty). An empty buffer returns the current batch unchanged.
    pub fn mix_batch(&mut self, current: &[BatchRow], batch_size: usize) -> Result<Vec<BatchRow>> {
        if self.is_empty() {
            return Ok(current.to_vec());
        }
        if batch_size <= self.min_per_batch {
            return Err(Error::Contract(format!(
                "batch_size {} must exceed min_per_batch {} when the buffer is non-empty",
                batch_size, self.min_per_batch
            )));
        }
        let keep = current.len().min(batch_size - self.min_per_batch);
        let mut out: Vec<BatchRow> = current[..keep].to_vec();
        for e in self.draw(batch_size - keep) {
            out.push(BatchRow {
                dataset_index: e.dataset_index,
                label: Some(e.class_id),
                from_replay: true,
            });
        }
        Ok(out)
    }

    /// Index-file representation: sample references, seed, and cursor.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ReplayBufferFile {
            fraction: self.fraction,
            min_per_batch: self.min_per_batch,
            seed: self.seed,
            ingested: self.ingested.iter().copied().collect(),
            entries: self.entries.clone(),
            cursor: self.cursor,
            passes: self.passes,
        })
        .expect("buffer serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let file: ReplayBufferFile = serde_json::from_value(v)?;
        let mut buf = ReplayBuffer {
            entries: file.entries,
            fraction: file.fraction,
            min_per_batch: file.min_per_batch,
            seed: file.seed,
            ingested: file.ingested.into_iter().collect(),
            order: Vec::new(),
            cursor: 0,
            passes: file.passes,
        };
        buf.reshuffle();
        buf.cursor = file.cursor;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json_value())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json_value(v)
    }
}
