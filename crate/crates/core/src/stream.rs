//! Class-incremental task streams.
//!
//! A seeded permutation assigns each class to exactly one task (equal
//! split required); each task then carries its train samples, a
//! class-stratified labelled subset, and a held-out test portion filtered
//! from the dataset's canonical test split. Task indices are 1-based in
//! all user-facing structures; partition files store the 0-based
//! class-to-task array.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seeding::{self, stream};

/// Assignment of classes to tasks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClassPartition {
    pub num_classes: usize,
    pub num_tasks: usize,
    /// `assignment[class_id]` = 0-based task position.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl ClassPartition {
    /// Classes of the 1-based task `t`, ascending.
    pub fn classes_of_task(&self, t: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a + 1 == t)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ClassPartition = serde_json::from_str(s)?;
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if self.assignment.len() != self.num_classes {
            return Err(Error::Data("partition assignment length mismatch".into()));
        }
        let per_task = self.num_classes / self.num_tasks;
        let mut counts = vec![0usize; self.num_tasks];
        for &a in &self.assignment {
            if a >= self.num_tasks {
                return Err(Error::Data(format!("task position {a} out of range")));
            }
            counts[a] += 1;
        }
        if counts.iter().any(|&c| c != per_task) {
            return Err(Error::Data("partition is not an equal split".into()));
        }
        Ok(())
    }
}

/// Split `num_classes` into `num_tasks` disjoint equal groups using a
/// seeded permutation. Unequal splits are rejected rather than padded.
pub fn split_classes(num_classes: usize, num_tasks: usize, seed: u64) -> Result<ClassPartition> {
    if num_tasks == 0 {
        return Err(Error::Config("num_tasks must be at least 1".into()));
    }
    if num_tasks > num_classes {
        return Err(Error::Config(format!(
            "cannot split {num_classes} classes into {num_tasks} tasks: more tasks than classes"
        )));
    }
    if num_classes % num_tasks != 0 {
        return Err(Error::Config(format!(
            "cannot split {num_classes} classes into {num_tasks} equal tasks; \
             {num_tasks} does not divide {num_classes}"
        )));
    }
    let per_task = num_classes / num_tasks;
    let mut order: Vec<usize> = (0..num_classes).collect();
    let mut rng = seeding::rng_for(seed, &[stream::PARTITION]);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; num_classes];
    for (pos, &class) in order.iter().enumerate() {
        assignment[class] = pos / per_task;
    }
    Ok(ClassPartition {
        num_classes,
        num_tasks,
        assignment,
        seed,
    })
}

/// One task's data: indices into the dataset's train/test sets plus the
/// labelled-subset mask. Evaluation samples never carry a task label.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// 1-based task index.
    pub task_index: usize,
    pub classes: Vec<usize>,
    /// Indices into `dataset.train`.
    pub train_indices: Vec<usize>,
    /// Parallel to `train_indices`; true where the sample is labelled.
    pub labelled_mask: Vec<bool>,
    /// Indices into `dataset.test`.
    pub test_indices: Vec<usize>,
    pub label_fraction: f64,
}

impl TaskData {
    pub fn num_samples(&self) -> usize {
        self.train_indices.len()
    }

    pub fn labelled_count(&self) -> usize {
        self.labelled_mask.iter().filter(|&&m| m).count()
    }

    /// Train indices of the labelled subset.
    pub fn labelled_indices(&self) -> Vec<usize> {
        self.train_indices
            .iter()
            .zip(self.labelled_mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub partition: ClassPartition,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// 1-based task accessor.
    pub fn task(&self, t: usize) -> &TaskData {
        &self.tasks[t - 1]
    }
}

/// Allocate `target` picks across classes proportionally to their
/// candidate counts (largest-remainder rounding, ties broken by class
/// order). With `min_one`, every class with candidates gets at least one
/// pick when the target allows.
pub(crate) fn stratified_counts(candidates: &[usize], target: usize, min_one: bool) -> Vec<usize> {
    let total: usize = candidates.iter().sum();
    let mut take = vec![0usize; candidates.len()];
    if total == 0 || target == 0 {
        return take;
    }
    let target = target.min(total);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    let mut assigned = 0usize;
    for (c, &n) in candidates.iter().enumerate() {
        let quota = target as f64 * n as f64 / total as f64;
        let k = (quota.floor() as usize).min(n);
        take[c] = k;
        assigned += k;
        remainders.push((c, quota - k as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = target - assigned;
    let mut ri = 0;
    while left > 0 {
        let (c, _) = remainders[ri % remainders.len()];
        if take[c] < candidates[c] {
            take[c] += 1;
            left -= 1;
        }
        ri += 1;
    }
    if min_one {
        let classes_with_data = candidates.iter().filter(|&&n| n > 0).count();
        if target >= classes_with_data {
            for c in 0..candidates.len() {
                if candidates[c] > 0 && take[c] == 0 {
                    // steal from the largest allocation
                    let donor = (0..candidates.len())
                        .filter(|&d| take[d] > 1)
                        .max_by_key(|&d| take[d])
                        .expect("target >= classes implies a donor exists");
                    take[donor] -= 1;
                    take[c] = 1;
                }
            }
        }
    }
    take
}

/// Build a task stream over `dataset` from `partition`. Labelled subsets
/// are class-stratified and seed-deterministic; every class keeps at least
/// one labelled sample.
pub fn build_stream(
    dataset: &Dataset,
    partition: &ClassPartition,
    label_fraction: f64,
    seed: u64,
) -> Result<TaskStream> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label_fraction must be in (0, 1], got {label_fraction}"
        )));
    }
    if partition.num_classes != dataset.num_classes {
        return Err(Error::Data(format!(
            "partition covers {} classes but dataset has {}",
            partition.num_classes, dataset.num_classes
        )));
    }
    partition.check()?;
    let train_by_class = dataset.train.indices_by_class();
    let test_by_class = dataset.test.indices_by_class();
    for class in 0..dataset.num_classes {
        if !train_by_class.contains_key(&(class as u32)) {
            return Err(Error::Data(format!(
                "dataset is missing training samples for class {class}"
            )));
        }
    }

    let mut tasks = Vec::with_capacity(partition.num_tasks);
    for t in 1..=partition.num_tasks {
        let classes = partition.classes_of_task(t);
        let mut train_indices = Vec::new();
        let mut per_class: Vec<Vec<usize>> = Vec::with_capacity(classes.len());
        let mut test_indices = Vec::new();
        for &class in &classes {
            let idxs = &train_by_class[&(class as u32)];
            train_indices.extend_from_slice(idxs);
            per_class.push(idxs.clone());
            if let Some(tidx) = test_by_class.get(&(class as u32)) {
                test_indices.extend_from_slice(tidx);
            }
        }
        if train_indices.is_empty() {
            return Err(Error::Data(format!("task {t} has no training samples")));
        }
        let target = (label_fraction * train_indices.len() as f64).round() as usize;
        let counts: Vec<usize> = per_class.iter().map(|v| v.len()).collect();
        let take = stratified_counts(&counts, target, true);
        let mut labelled: std::collections::HashSet<usize> = std::collections::HashSet::new();
        for (ci, idxs) in per_class.iter().enumerate() {
            let mut pool = idxs.clone();
            let mut rng = seeding::rng_for(seed, &[stream::LABELLED, t as u64, ci as u64]);
            pool.shuffle(&mut rng);
            for &i in pool.iter().take(take[ci]) {
                labelled.insert(i);
            }
        }
        let labelled_mask: Vec<bool> = train_indices.iter().map(|i| labelled.contains(i)).collect();
        tasks.push(TaskData {
            task_index: t,
            classes,
            train_indices,
            labelled_mask,
            test_indices,
            label_fraction,
        });
    }
    Ok(TaskStream {
        tasks,
        partition: partition.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic, SyntheticSpec};
    use proptest::prelude::*;

    #[test]
    fn five_tasks_of_twenty_classes() {
        let p = split_classes(100, 5, 42).unwrap();
        for t in 1..=5 {
            assert_eq!(p.classes_of_task(t).len(), 20);
        }
    }

    #[test]
    fn single_task_holds_everything() {
        let p = split_classes(100, 1, 42).unwrap();
        assert_eq!(p.classes_of_task(1).len(), 100);
    }

    #[test]
    fn twenty_tasks_of_five_classes_cover_all() {
        let p = split_classes(100, 20, 3).unwrap();
        let mut all: Vec<usize> = (1..=20).flat_map(|t| p.classes_of_task(t)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for t in 1..=20 {
            assert_eq!(p.classes_of_task(t).len(), 5);
        }
    }

    #[test]
    fn non_divisible_split_rejected() {
        let err = split_classes(100, 7, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("does not divide"));
    }

    #[test]
    fn more_tasks_than_classes_rejected() {
        assert!(split_classes(10, 11, 0).is_err());
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = split_classes(60, 6, 9).unwrap();
        let b = split_classes(60, 6, 9).unwrap();
        assert_eq!(a, b);
        let c = split_classes(60, 6, 10).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn partition_json_roundtrip() {
        let p = split_classes(20, 4, 5).unwrap();
        let q = ClassPartition::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }

    fn toy_dataset() -> Dataset {
        synthetic(
            SyntheticSpec {
                num_classes: 10,
                per_class_train: 20,
                per_class_test: 5,
                resolution: 8,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn fraction_one_labels_everything() {
        let ds = toy_dataset();
        let p = split_classes(10, 2, 1).unwrap();
        let s = build_stream(&ds, &p, 1.0, 2).unwrap();
        for task in &s.tasks {
            assert_eq!(task.labelled_count(), task.num_samples());
        }
    }

    /// Direct enumeration of the stratified selection: 10% of a 100-sample
    /// task over 5 classes of 20 gives 10 labelled, 2 per class.
    #[test]
    fn fraction_selects_rounded_count() {
        let ds = toy_dataset();
        let p = split_classes(10, 2, 1).unwrap();
        let s = build_stream(&ds, &p, 0.1, 2).unwrap();
        for task in &s.tasks {
            assert_eq!(task.num_samples(), 100);
            assert_eq!(task.labelled_count(), 10);
            // stratification: 2 per class
            for &class in &task.classes {
                let n = task
                    .train_indices
                    .iter()
                    .zip(task.labelled_mask.iter())
                    .filter(|(&i, &m)| m && ds.train.labels[i] == class as u32)
                    .count();
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn labelled_selection_is_deterministic() {
        let ds = toy_dataset();
        let p = split_classes(10, 2, 1).unwrap();
        let a = build_stream(&ds, &p, 0.3, 7).unwrap();
        let b = build_stream(&ds, &p, 0.3, 7).unwrap();
        for (x, y) in a.tasks.iter().zip(b.tasks.iter()) {
            assert_eq!(x.labelled_mask, y.labelled_mask);
            assert_eq!(x.train_indices, y.train_indices);
        }
    }

    #[test]
    fn task_classes_are_disjoint_and_cover() {
        let ds = toy_dataset();
        let p = split_classes(10, 5, 3).unwrap();
        let s = build_stream(&ds, &p, 0.5, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for task in &s.tasks {
            for &c in &task.classes {
                assert!(seen.insert(c), "class {c} appears in two tasks");
            }
            // labelled samples all belong to this task's classes
            for (&i, &m) in task.train_indices.iter().zip(task.labelled_mask.iter()) {
                if m {
                    assert!(task.classes.contains(&(ds.train.labels[i] as usize)));
                }
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn every_class_keeps_a_labelled_sample() {
        let ds = toy_dataset();
        let p = split_classes(10, 2, 1).unwrap();
        let s = build_stream(&ds, &p, 0.05, 2).unwrap();
        for task in &s.tasks {
            for &class in &task.classes {
                let n = task
                    .train_indices
                    .iter()
                    .zip(task.labelled_mask.iter())
                    .filter(|(&i, &m)| m && ds.train.labels[i] == class as u32)
                    .count();
                assert!(n >= 1, "class {class} lost all labels");
            }
        }
    }

    #[test]
    fn mismatched_partition_rejected() {
        let ds = toy_dataset();
        let p = split_classes(20, 2, 1).unwrap();
        assert!(build_stream(&ds, &p, 0.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_invariants(classes in 1usize..40, tasks in 1usize..8, seed in 0u64..1000) {
            prop_assume!(tasks <= classes && classes % tasks == 0);
            let p = split_classes(classes, tasks, seed).unwrap();
            // every class appears exactly once
            let mut count = vec![0usize; classes];
            for (c, &a) in p.assignment.iter().enumerate() {
                prop_assert!(a < tasks);
                count[c] += 1;
            }
            prop_assert!(count.iter().all(|&c| c == 1));
            // equal sizes
            for t in 1..=tasks {
                prop_assert_eq!(p.classes_of_task(t).len(), classes / tasks);
            }
        }

        #[test]
        fn stratified_counts_sum_to_target(
            counts in proptest::collection::vec(0usize..50, 1..8),
            frac in 0.01f64..1.0,
        ) {
            let total: usize = counts.iter().sum();
            prop_assume!(total > 0);
            let target = ((frac * total as f64).round() as usize).min(total);
            let take = stratified_counts(&counts, target, false);
            prop_assert_eq!(take.iter().sum::<usize>(), target);
            for (t, c) in take.iter().zip(counts.iter()) {
                prop_assert!(t <= c);
            }
        }
    }
}
