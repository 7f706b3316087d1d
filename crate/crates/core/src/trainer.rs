//! The joint training step, per-task loops, baseline strategies, and full
//! continual runs.
//!
//! One training step over a replay-mixed batch computes up to four loss
//! terms:
//!
//! - `kd_fe`: SSL loss between the distillation predictor on the current
//!   embedding of view 1 and the frozen previous extractor on view 1
//! - `kd_c`: cross entropy of current classifier logits against the
//!   previous classifier's soft labels, on every row
//! - `ct_c`: cross entropy against hard labels, on labelled rows only
//! - `ct_fe`: SSL loss between the SSL predictor on the current embedding
//!   of view 1 and the target extractor on view 2
//!
//! and applies one optimizer update followed by an EMA update of the
//! momentum extractor where the SSL kind keeps one. The classifier input
//! is gradient-stopped, so classifier losses never move the feature
//! extractor. Strategies gate the terms: `kaizen` uses all four,
//! `cassle` trains the extractor only (`kd_fe` + `ct_fe`) with a post-hoc
//! classifier fit, `no_distill` plain SSL fine-tuning with a post-hoc fit.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::augment::{augment_pair, AugmentPolicy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, stack_images, AccuracyMatrix};
use crate::model::{init_model, ArchitectureSpec, ModelState};
use crate::nn::heads::Mlp;
use crate::nn::layers::Mode;
use crate::nn::optim::{cosine_lr, Sgd, SgdConfig};
use crate::nn::serialize::{read_blob, write_blob};
use crate::nn::{HasParams, Param};
use crate::replay::{BatchRow, ReplayBuffer};
use crate::seeding::{self, stream};
use crate::ssl::SslObjective;
use crate::stream::{TaskData, TaskStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Kaizen,
    Cassle,
    NoDistill,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kaizen" => Ok(Strategy::Kaizen),
            "cassle" => Ok(Strategy::Cassle),
            "no_distill" | "nodistill" => Ok(Strategy::NoDistill),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Kaizen => "kaizen",
            Strategy::Cassle => "cassle",
            Strategy::NoDistill => "no_distill",
        }
    }

    /// Feature-extractor distillation active (from task 2).
    pub fn distills_extractor(&self) -> bool {
        matches!(self, Strategy::Kaizen | Strategy::Cassle)
    }

    /// Classifier distillation active (from task 2).
    pub fn distills_classifier(&self) -> bool {
        matches!(self, Strategy::Kaizen)
    }

    /// Classifier trained jointly inside the task loop.
    pub fn trains_classifier_inline(&self) -> bool {
        matches!(self, Strategy::Kaizen)
    }

    /// Classifier fitted post-hoc on a frozen extractor after each task.
    pub fn fits_classifier_posthoc(&self) -> bool {
        matches!(self, Strategy::Cassle | Strategy::NoDistill)
    }
}

/// Weights of the four loss terms. The classifier-distillation weight
/// defaults to 2, the others to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub kd_fe: f64,
    pub kd_c: f64,
    pub ct_c: f64,
    pub ct_fe: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            kd_fe: 1.0,
            kd_c: 2.0,
            ct_c: 1.0,
            ct_fe: 1.0,
        }
    }
}

/// Which path feeds the classifier. The default follows the framework
/// description (current extractor on view 1, gradient-stopped); the
/// alternative reproduces the appendix pseudocode variant (target
/// extractor on view 2, gradient-stopped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    #[default]
    CurrentView1,
    MomentumView2,
}

#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub weights: LossWeights,
    pub epochs_per_task: usize,
    /// Linear scale on the per-task epoch count (desk-scale budgets).
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd: SgdConfig,
    pub cosine_schedule: bool,
    pub classifier_input: ClassifierInput,
    pub replay_fraction: f64,
    pub replay_min_per_batch: usize,
    pub posthoc_epochs: usize,
    pub posthoc_lr: f64,
    pub eval_batch: usize,
    pub augment: AugmentPolicy,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if w.kd_fe < 0.0 || w.kd_c < 0.0 || w.ct_c < 0.0 || w.ct_fe < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.lr <= 0.0 || self.posthoc_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.epoch_scale < 0.0 {
            return Err(Error::Config("epoch_scale must be non-negative".into()));
        }
        Ok(())
    }

    pub fn effective_epochs(&self) -> usize {
        (self.epochs_per_task as f64 * self.epoch_scale).round() as usize
    }
}

/// The four loss components of one step with their weights and the
/// weighted total. `total` is always the weighted sum accumulated in
/// fixed order (kd_fe, kd_c, ct_c, ct_fe).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kd_fe: f64,
    pub kd_c: f64,
    pub ct_c: f64,
    pub ct_fe: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(kd_fe: f64, kd_c: f64, ct_c: f64, ct_fe: f64, w: &LossWeights) -> f64 {
        w.kd_fe * kd_fe + w.kd_c * kd_c + w.ct_c * ct_c + w.ct_fe * ct_fe
    }

    fn new(kd_fe: f64, kd_c: f64, ct_c: f64, ct_fe: f64, w: LossWeights) -> Self {
        LossBreakdown {
            kd_fe,
            kd_c,
            ct_c,
            ct_fe,
            weights: w,
            total: Self::weighted_total(kd_fe, kd_c, ct_c, ct_fe, &w),
        }
    }
}

/// One line-delimited record per training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
    pub kd_fe: f64,
    pub kd_c: f64,
    pub ct_c: f64,
    pub ct_fe: f64,
    pub total: f64,
}

#[derive(Debug, Default, Clone)]
pub struct LossLog {
    pub records: Vec<StepRecord>,
}

impl LossLog {
    pub fn push(&mut self, task: usize, epoch: usize, step: usize, b: &LossBreakdown) {
        self.records.push(StepRecord {
            task,
            epoch,
            step,
            kd_fe: b.kd_fe,
            kd_c: b.kd_c,
            ct_c: b.ct_c,
            ct_fe: b.ct_fe,
            total: b.total,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// cross-entropy pieces (f64)
// ---------------------------------------------------------------------------

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let (n, c) = logits.dim();
    let mut out = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        let row = logits.row(i);
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - maxv).exp()).sum();
        let lse = maxv + z.ln();
        for j in 0..c {
            out[[i, j]] = logits[[i, j]] - lse;
        }
    }
    out
}

/// Hard-label cross entropy, mean-reduced over labelled rows. Rows with
/// `None` labels contribute nothing; an all-`None` batch gives loss 0 and
/// zero gradient.
pub fn cross_entropy_hard(logits: &Array2<f64>, labels: &[Option<u32>]) -> (f64, Array2<f64>) {
    let (n, c) = logits.dim();
    assert_eq!(n, labels.len());
    let ls = log_softmax_rows(logits);
    let m = labels.iter().filter(|l| l.is_some()).count();
    let mut grad = Array2::<f64>::zeros((n, c));
    if m == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if let Some(y) = label {
            loss -= ls[[i, *y as usize]];
            for j in 0..c {
                let p = ls[[i, j]].exp();
                grad[[i, j]] = (p - if j == *y as usize { 1.0 } else { 0.0 }) / m as f64;
            }
        }
    }
    (loss / m as f64, grad)
}

/// Soft-label cross entropy `-sum_c t_c log softmax(logits)_c`,
/// mean-reduced over all rows. Targets are probability rows.
pub fn cross_entropy_soft(logits: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, c) = logits.dim();
    assert_eq!(logits.dim(), targets.dim());
    let ls = log_softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        let tsum: f64 = targets.row(i).sum();
        for j in 0..c {
            loss -= targets[[i, j]] * ls[[i, j]];
            grad[[i, j]] = (ls[[i, j]].exp() * tsum - targets[[i, j]]) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(logits).mapv(f64::exp)
}

fn to_f64(x: &Array2<f32>) -> Array2<f64> {
    x.mapv(|v| v as f64)
}

fn to_f32(x: &Array2<f64>) -> Array2<f32> {
    x.mapv(|v| v as f32)
}

// ---------------------------------------------------------------------------
// train_step
// ---------------------------------------------------------------------------

/// Position of a step inside a run, for logging and RNG derivation.
#[derive(Debug, Clone, Copy)]
pub struct StepPos {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
}

fn collect_trainable<'a>(state: &'a mut ModelState, strategy: Strategy) -> Vec<&'a mut Param> {
    let mut params = Vec::new();
    state.f_current.collect_params_mut(&mut params);
    if strategy.distills_extractor() {
        state.h_kd.collect_params_mut(&mut params);
    }
    state.h_ssl.collect_params_mut(&mut params);
    if strategy.trains_classifier_inline() {
        state.classifier.collect_params_mut(&mut params);
    }
    params
}

/// Materialize a replay-mixed batch into two augmented view tensors plus
/// the label column.
fn materialize_views(
    dataset: &Dataset,
    rows: &[BatchRow],
    policy: &AugmentPolicy,
    seed: u64,
    pos: StepPos,
) -> (Array4<f32>, Array4<f32>, Vec<Option<u32>>) {
    let mut v1 = Vec::with_capacity(rows.len());
    let mut v2 = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut rng = seeding::rng_for(
            seed,
            &[
                stream::AUGMENT,
                pos.task as u64,
                pos.epoch as u64,
                pos.step as u64,
                i as u64,
            ],
        );
        let pair = augment_pair(&dataset.train.images[row.dataset_index], policy, &mut rng);
        v1.push(pair.view1);
        v2.push(pair.view2);
        labels.push(row.label);
    }
    let x1 = stack_images(&v1.iter().collect::<Vec<_>>());
    let x2 = stack_images(&v2.iter().collect::<Vec<_>>());
    (x1, x2, labels)
}

/// One optimization step over a replay-mixed batch of sample references.
/// Views are drawn per sample from the augmentation stream at `pos`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    state: &mut ModelState,
    dataset: &Dataset,
    rows: &[BatchRow],
    objective: &mut SslObjective,
    config: &StrategyConfig,
    optim: &mut Sgd,
    lr: f64,
    seed: u64,
    pos: StepPos,
) -> Result<LossBreakdown> {
    let (x1, x2, labels) = materialize_views(dataset, rows, &config.augment, seed, pos);
    train_step_views(state, &x1, &x2, &labels, objective, config, optim, lr, pos)
}

/// The loss-and-update engine, taking pre-augmented views directly.
#[allow(clippy::too_many_arguments)]
pub fn train_step_views(
    state: &mut ModelState,
    x1: &Array4<f32>,
    x2: &Array4<f32>,
    labels: &[Option<u32>],
    objective: &mut SslObjective,
    config: &StrategyConfig,
    optim: &mut Sgd,
    lr: f64,
    pos: StepPos,
) -> Result<LossBreakdown> {
    if x1.dim() != x2.dim() {
        return Err(Error::Shape("view batches must have equal shapes".into()));
    }
    let strategy = config.strategy;
    let after_first_task = state.task_index > 1;
    let kd_fe_active = strategy.distills_extractor() && after_first_task;
    let kd_c_active = strategy.distills_classifier() && after_first_task;
    if after_first_task
        && (strategy.distills_extractor() || strategy.distills_classifier())
        && state.prev_f.is_none()
    {
        return Err(Error::Contract(format!(
            "task {} requires a previous-task snapshot for distillation",
            state.task_index
        )));
    }

    // --- forward passes ------------------------------------------------
    let (r1, z1, cache1) = state.f_current.forward(x1, Mode::Train);

    // target branch on view 2
    let momentum_based = state.f_momentum.is_some();
    let (target_repr, target_embed, cache2) = if momentum_based {
        let m = state.f_momentum.as_mut().expect("momentum extractor");
        let (r_t, z_t) = m.forward_infer(x2, Mode::TrainFrozenStats);
        (r_t, z_t, None)
    } else {
        let (r_t, z_t, c2) = state.f_current.forward(x2, Mode::Train);
        (r_t, z_t, Some(c2))
    };
    let target_live = !state.ssl_kind.detaches_target() && cache2.is_some();

    // previous-task branch on view 1 (frozen)
    let (z_p, c_p_logits) = if kd_fe_active || kd_c_active {
        let pf = state.prev_f.as_mut().expect("previous extractor");
        let (r_p, z_p) = pf.forward_infer(x1, Mode::TrainFrozenStats);
        let c_p = if kd_c_active {
            let pg = state.prev_g.as_mut().expect("previous classifier");
            Some(pg.forward_infer(&r_p, Mode::TrainFrozenStats))
        } else {
            None
        };
        (Some(z_p), c_p)
    } else {
        (None, None)
    };

    // predictor heads on the view-1 embedding
    let (p_ssl, cache_hssl) = state.h_ssl.forward(&z1, Mode::Train);
    let kd_pred = if kd_fe_active {
        Some(state.h_kd.forward(&z1, Mode::Train))
    } else {
        None
    };

    // classifier on the gradient-stopped representation
    let cls = if strategy.trains_classifier_inline() {
        let input = match config.classifier_input {
            ClassifierInput::CurrentView1 => r1.clone(),
            ClassifierInput::MomentumView2 => target_repr.clone(),
        };
        Some(state.classifier.forward(&input, Mode::Train))
    } else {
        None
    };

    // --- losses ----------------------------------------------------------
    let p_ssl64 = to_f64(&p_ssl);
    let target64 = to_f64(&target_embed);
    let ct_fe_out = objective.ssl_loss(&p_ssl64, &target64)?;
    let ct_fe = ct_fe_out.value;

    let (kd_fe, kd_fe_grad) = match (&kd_pred, &z_p) {
        (Some((p_kd, _)), Some(zp)) => {
            let out = objective.ssl_loss(&to_f64(p_kd), &to_f64(zp))?;
            (out.value, Some(out.grad_online))
        }
        _ => (0.0, None),
    };

    let (kd_c, kd_c_grad) = match (&cls, &c_p_logits) {
        (Some((c_t, _)), Some(c_p)) => {
            let targets = softmax_rows(&to_f64(c_p));
            let (v, g) = cross_entropy_soft(&to_f64(c_t), &targets);
            (v, Some(g))
        }
        _ => (0.0, None),
    };

    let (ct_c, ct_c_grad) = match &cls {
        Some((c_t, _)) => {
            let (v, g) = cross_entropy_hard(&to_f64(c_t), labels);
            (v, Some(g))
        }
        None => (0.0, None),
    };

    let breakdown = LossBreakdown::new(kd_fe, kd_c, ct_c, ct_fe, config.weights);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            task: pos.task,
            epoch: pos.epoch,
            step: pos.step,
            detail: serde_json::to_string(&breakdown).unwrap_or_default(),
        });
    }

    // --- backward ----------------------------------------------------------
    for p in collect_trainable(state, strategy) {
        p.zero_grad();
    }
    let w = &config.weights;

    // embedding gradient flowing into the view-1 extractor pass
    let d_pssl = to_f32(&(w.ct_fe * &ct_fe_out.grad_online));
    let mut dz1 = state.h_ssl.backward(&d_pssl, &cache_hssl);
    if let (Some((_, cache_hkd)), Some(g)) = (&kd_pred, &kd_fe_grad) {
        let d_pkd = to_f32(&(w.kd_fe * g));
        let dz1_kd = state.h_kd.backward(&d_pkd, cache_hkd);
        dz1 += &dz1_kd;
    }
    state.f_current.backward(&dz1, &cache1);

    // live target side (SimCLR/VICReg): gradient through the view-2 pass
    if target_live {
        let dz2 = to_f32(&(w.ct_fe * &ct_fe_out.grad_target));
        state
            .f_current
            .backward(&dz2, cache2.as_ref().expect("live target cache"));
    }

    // classifier gradients; the input gradient is discarded (stop-grad)
    if let Some((_, cache_cls)) = &cls {
        let mut dlogits = Array2::<f64>::zeros(ct_c_grad.as_ref().unwrap().dim());
        if let Some(g) = &kd_c_grad {
            dlogits += &(w.kd_c * g);
        }
        if let Some(g) = &ct_c_grad {
            dlogits += &(w.ct_c * g);
        }
        let _ = state.classifier.backward(&to_f32(&dlogits), cache_cls);
    }

    // --- update ----------------------------------------------------------
    let mut params = collect_trainable(state, strategy);
    optim.step(&mut params, lr as f32)?;

    if objective.queue.is_some() {
        objective.queue_update(&target_embed)?;
    }
    if state.f_momentum.is_some() {
        state.ema_update(objective.momentum_coefficient)?;
    }
    Ok(breakdown)
}

// ---------------------------------------------------------------------------
// task loops
// ---------------------------------------------------------------------------

fn task_rows(dataset: &Dataset, task: &TaskData) -> Vec<BatchRow> {
    task.train_indices
        .iter()
        .zip(task.labelled_mask.iter())
        .map(|(&i, &m)| BatchRow {
            dataset_index: i,
            label: m.then(|| dataset.train.labels[i]),
            from_replay: false,
        })
        .collect()
}

/// Train one task for the configured epoch budget with replay mixing.
pub fn train_task(
    state: &mut ModelState,
    dataset: &Dataset,
    task: &TaskData,
    buffer: &mut ReplayBuffer,
    objective: &mut SslObjective,
    config: &StrategyConfig,
    seed: u64,
    log: &mut LossLog,
) -> Result<()> {
    config.validate()?;
    if task.task_index != state.task_index {
        return Err(Error::Contract(format!(
            "model is at task {} but was asked to train task {}",
            state.task_index, task.task_index
        )));
    }
    let epochs = config.effective_epochs();
    if epochs == 0 {
        return Ok(());
    }
    let rows = task_rows(dataset, task);
    let chunk = if buffer.is_empty() {
        config.batch_size
    } else {
        config.batch_size - buffer.min_per_batch
    };
    if chunk < 2 {
        return Err(Error::Config(format!(
            "batch_size {} leaves fewer than 2 current-task rows per batch",
            config.batch_size
        )));
    }
    let steps_per_epoch = rows.len() / chunk;
    if steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "task {} has {} samples, fewer than one batch of {chunk}",
            task.task_index,
            rows.len()
        )));
    }
    let total_steps = epochs * steps_per_epoch;
    let mut optim = Sgd::new(config.sgd);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = seeding::rng_for(
                seed,
                &[stream::BATCH, task.task_index as u64, epoch as u64],
            );
            order.shuffle(&mut rng);
        }
        for step in 0..steps_per_epoch {
            let current: Vec<BatchRow> = order[step * chunk..(step + 1) * chunk]
                .iter()
                .map(|&i| rows[i].clone())
                .collect();
            let mixed = buffer.mix_batch(&current, config.batch_size)?;
            let global = epoch * steps_per_epoch + step;
            let lr = if config.cosine_schedule {
                cosine_lr(config.lr, global, total_steps)
            } else {
                config.lr
            };
            let pos = StepPos {
                task: task.task_index,
                epoch,
                step,
            };
            let breakdown = train_step(
                state, dataset, &mixed, objective, config, &mut optim, lr, seed, pos,
            )?;
            log.push(task.task_index, epoch, step, &breakdown);
        }
    }
    Ok(())
}

/// Reinitialize and fit the classifier on the frozen current extractor,
/// using the task's labelled data plus the replay buffer contents. Only
/// the baseline strategies use this; the joint strategy trains its
/// classifier inside the task loop.
pub fn fit_classifier_posthoc(
    state: &mut ModelState,
    dataset: &Dataset,
    task: &TaskData,
    buffer: &ReplayBuffer,
    config: &StrategyConfig,
    seed: u64,
) -> Result<()> {
    if !config.strategy.fits_classifier_posthoc() {
        return Err(Error::Contract(format!(
            "post-hoc classifier fitting is a baseline operation, not valid for '{}'",
            config.strategy.as_str()
        )));
    }
    let mut pool: Vec<(usize, u32)> = task
        .labelled_indices()
        .into_iter()
        .map(|i| (i, dataset.train.labels[i]))
        .collect();
    for e in buffer.entries() {
        pool.push((e.dataset_index, e.class_id));
    }
    if pool.is_empty() {
        return Err(Error::Contract(
            "post-hoc classifier fit needs a non-empty labelled set".into(),
        ));
    }
    // fresh head; the post-hoc classifier is an evaluation head, not a
    // continually trained one
    let mut rng = seeding::rng_for(seed, &[stream::POSTHOC, task.task_index as u64, 0]);
    state.classifier = Mlp::new(
        "classifier",
        state.f_current.feature_dim(),
        state.arch.classifier_hidden,
        state.arch.num_outputs,
        false,
        &mut rng,
    );
    let mut optim = Sgd::new(config.sgd);
    let epochs = config.posthoc_epochs.max(1);
    let batch = config.batch_size.min(pool.len()).max(1);
    let steps_per_epoch = pool.len().div_ceil(batch);
    let total_steps = epochs * steps_per_epoch;
    for epoch in 0..epochs {
        {
            use rand::seq::SliceRandom;
            let mut rng = seeding::rng_for(
                seed,
                &[stream::POSTHOC, task.task_index as u64, 1 + epoch as u64],
            );
            pool.shuffle(&mut rng);
        }
        for (step, chunkv) in pool.chunks(batch).enumerate() {
            // one augmentation draw per sample, same policy as training
            let mut views = Vec::with_capacity(chunkv.len());
            for (i, (idx, _)) in chunkv.iter().enumerate() {
                let mut rng = seeding::rng_for(
                    seed,
                    &[
                        stream::POSTHOC,
                        task.task_index as u64,
                        1000 + epoch as u64,
                        step as u64,
                        i as u64,
                    ],
                );
                views.push(crate::augment::augment_once(
                    &dataset.train.images[*idx],
                    &config.augment,
                    &mut rng,
                ));
            }
            let x = stack_images(&views.iter().collect::<Vec<_>>());
            // frozen extractor: eval mode, no caches, no stat updates
            let (repr, _) = state.f_current.forward_infer(&x, Mode::Eval);
            let (logits, cache) = state.classifier.forward(&repr, Mode::Train);
            let labels: Vec<Option<u32>> = chunkv.iter().map(|(_, l)| Some(*l)).collect();
            let (_, grad) = cross_entropy_hard(&to_f64(&logits), &labels);
            for p in state.classifier.params_mut() {
                p.zero_grad();
            }
            let _ = state.classifier.backward(&to_f32(&grad), &cache);
            let global = epoch * steps_per_epoch + step;
            let lr = if config.cosine_schedule {
                cosine_lr(config.posthoc_lr, global, total_steps)
            } else {
                config.posthoc_lr
            };
            let mut params = Vec::new();
            state.classifier.collect_params_mut(&mut params);
            optim.step(&mut params, lr as f32)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// full runs
// ---------------------------------------------------------------------------

/// Run the full continual protocol over a task stream: train each task,
/// fit the baseline classifier where applicable, evaluate all seen tasks,
/// snapshot, and ingest replay data. `after_task` fires once the
/// completed task's snapshot and buffer ingestion are done, so the state
/// it sees is exactly what the next task resumes from.
pub fn run_continual(
    dataset: &Dataset,
    task_stream: &TaskStream,
    arch: &ArchitectureSpec,
    objective: &mut SslObjective,
    config: &StrategyConfig,
    seed: u64,
    log: &mut LossLog,
    mut after_task: impl FnMut(&ModelState, &ReplayBuffer, &SslObjective, usize) -> Result<()>,
) -> Result<AccuracyMatrix> {
    config.validate()?;
    if arch.num_outputs < dataset.num_classes {
        return Err(Error::Config(format!(
            "classifier has {} outputs but the stream spans {} classes",
            arch.num_outputs, dataset.num_classes
        )));
    }
    let mut state = init_model(arch, objective.kind, seed)?;
    let mut buffer = ReplayBuffer::new(config.replay_fraction, config.replay_min_per_batch, seed)?;
    let mut matrix = AccuracyMatrix::new(task_stream.num_tasks());
    for t in 1..=task_stream.num_tasks() {
        let task = task_stream.task(t);
        train_task(
            &mut state, dataset, task, &mut buffer, objective, config, seed, log,
        )?;
        if config.strategy.fits_classifier_posthoc() {
            fit_classifier_posthoc(&mut state, dataset, task, &buffer, config, seed)?;
        }
        let seen: Vec<&TaskData> = (1..=t).map(|k| task_stream.task(k)).collect();
        let row = evaluate_model(&mut state, dataset, &seen, config.eval_batch)?;
        matrix.push_row(row)?;
        state.snapshot_previous();
        buffer.update(dataset, task)?;
        after_task(&state, &buffer, objective, t)?;
    }
    Ok(matrix)
}

/// Seed for the k-th single-task baseline. Task 1's baseline replicates a
/// continual run's first task exactly, so it reuses the run seed; later
/// baselines get independent derived seeds.
pub fn single_task_seed(seed: u64, k: usize) -> u64 {
    if k == 1 {
        seed
    } else {
        seeding::mix(seed, &[stream::SINGLE_TASK, k as u64])
    }
}

/// For each task k, train a fresh model on task k alone (no replay, no
/// distillation) and evaluate it on task k. Returns the diagonal used by
/// forward transfer.
pub fn run_single_task_baselines(
    dataset: &Dataset,
    task_stream: &TaskStream,
    arch: &ArchitectureSpec,
    objective_template: &SslObjective,
    config: &StrategyConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(task_stream.num_tasks());
    for k in 1..=task_stream.num_tasks() {
        let seed_k = single_task_seed(seed, k);
        let mut objective = objective_template.clone();
        if let Some(q) = &mut objective.queue {
            *q = crate::ssl::EmbeddingQueue::new(q.capacity());
        }
        let mut state = init_model(arch, objective.kind, seed_k)?;
        let mut buffer = ReplayBuffer::new(0.0, config.replay_min_per_batch, seed_k)?;
        let mut solo = task_stream.task(k).clone();
        solo.task_index = 1;
        let mut log = LossLog::default();
        train_task(
            &mut state, dataset, &solo, &mut buffer, &mut objective, config, seed_k, &mut log,
        )?;
        if config.strategy.fits_classifier_posthoc() {
            fit_classifier_posthoc(&mut state, dataset, &solo, &buffer, config, seed_k)?;
        }
        let acc = evaluate_model(
            &mut state,
            dataset,
            &[task_stream.task(k)],
            config.eval_batch,
        )?;
        out.push(acc[0]);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

/// Write a per-task checkpoint: every parameter group, the replay-buffer
/// index, the SSL objective (queue included), the completed task index,
/// and the run seed. Optimizer state is per-task and restarts fresh, so
/// task-boundary checkpoints restore training bit-exactly.
pub fn save_checkpoint(
    path: &Path,
    state: &ModelState,
    buffer: &ReplayBuffer,
    objective: &SslObjective,
    completed_task: usize,
    seed: u64,
) -> Result<()> {
    let meta = serde_json::json!({
        "completed_task": completed_task,
        "task_index": state.task_index,
        "seed": seed,
        "arch": serde_json::to_value(&state.arch)?,
        "objective": serde_json::to_value(objective)?,
        "buffer": buffer.to_json_value(),
    });
    write_blob(path, &meta, &state.named_tensors())
}

pub struct Checkpoint {
    pub state: ModelState,
    pub buffer: ReplayBuffer,
    pub objective: SslObjective,
    pub completed_task: usize,
    pub seed: u64,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (meta, tensors) = read_blob(path)?;
    let arch: ArchitectureSpec = serde_json::from_value(meta["arch"].clone())?;
    let objective: SslObjective = serde_json::from_value(meta["objective"].clone())?;
    let buffer = ReplayBuffer::from_json_value(meta["buffer"].clone())?;
    let seed = meta["seed"]
        .as_u64()
        .ok_or_else(|| Error::Serialize("checkpoint missing seed".into()))?;
    let completed_task = meta["completed_task"]
        .as_u64()
        .ok_or_else(|| Error::Serialize("checkpoint missing completed_task".into()))?
        as usize;
    let task_index = meta["task_index"]
        .as_u64()
        .ok_or_else(|| Error::Serialize("checkpoint missing task_index".into()))?
        as usize;
    let mut state = init_model(&arch, objective.kind, seed)?;
    state.restore_tensors(&tensors)?;
    state.task_index = task_index;
    Ok(Checkpoint {
        state,
        buffer,
        objective,
        completed_task,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic, SyntheticSpec};
    use crate::nn;
    use crate::ssl::SslKind;
    use crate::stream::{build_stream, split_classes};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn tiny_dataset() -> Dataset {
        synthetic(
            SyntheticSpec {
                num_classes: 10,
                per_class_train: 12,
                per_class_test: 4,
                resolution: 16,
            },
            21,
        )
        .unwrap()
    }

    fn tiny_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            backbone: "small".into(),
            width_multiplier: 0.25,
            classifier_hidden: 8,
            num_outputs: 10,
            projector_hidden: 8,
            projector_dim: 8,
            predictor_hidden: 8,
            input_resolution: 16,
            head_batchnorm: true,
            ..Default::default()
        }
    }

    fn tiny_config(strategy: Strategy) -> StrategyConfig {
        StrategyConfig {
            strategy,
            weights: LossWeights::default(),
            epochs_per_task: 1,
            epoch_scale: 1.0,
            batch_size: 8,
            lr: 0.05,
            sgd: SgdConfig {
                momentum: 0.9,
                weight_decay: 0.0,
            },
            cosine_schedule: true,
            classifier_input: ClassifierInput::CurrentView1,
            replay_fraction: 0.2,
            replay_min_per_batch: 2,
            posthoc_epochs: 2,
            posthoc_lr: 0.1,
            eval_batch: 16,
            augment: AugmentPolicy::default_for_resolution(16),
        }
    }

    fn two_task_stream(ds: &Dataset) -> TaskStream {
        let p = split_classes(10, 2, 7).unwrap();
        build_stream(ds, &p, 1.0, 7).unwrap()
    }

    #[test]
    fn task1_breakdown_has_zero_kd_terms() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        let mut optim = Sgd::new(config.sgd);
        let rows = task_rows(&ds, s.task(1));
        let b = train_step(
            &mut state,
            &ds,
            &rows[..8],
            &mut obj,
            &config,
            &mut optim,
            0.05,
            1,
            StepPos { task: 1, epoch: 0, step: 0 },
        )
        .unwrap();
        assert_eq!(b.kd_fe, 0.0);
        assert_eq!(b.kd_c, 0.0);
        assert!(b.ct_fe > 0.0);
        assert!(b.ct_c > 0.0);
        assert_eq!(
            b.total,
            LossBreakdown::weighted_total(b.kd_fe, b.kd_c, b.ct_c, b.ct_fe, &b.weights)
        );
    }

    #[test]
    fn unlabelled_batch_zeroes_ct_c_but_not_kd_c() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        state.snapshot_previous(); // now at task 2 with a frozen snapshot
        let mut optim = Sgd::new(config.sgd);
        let rows: Vec<BatchRow> = s.task(2).train_indices[..8]
            .iter()
            .map(|&i| BatchRow {
                dataset_index: i,
                label: None,
                from_replay: false,
            })
            .collect();
        let b = train_step(
            &mut state,
            &ds,
            &rows,
            &mut obj,
            &config,
            &mut optim,
            0.05,
            1,
            StepPos { task: 2, epoch: 0, step: 0 },
        )
        .unwrap();
        assert_eq!(b.ct_c, 0.0);
        assert!(b.kd_c > 0.0, "soft-label distillation is label-free");
        assert!(b.kd_fe > 0.0);
        assert!(b.ct_fe > 0.0);
    }

    #[test]
    fn missing_prev_snapshot_rejected() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        state.task_index = 2; // claim task 2 without snapshotting
        let mut optim = Sgd::new(config.sgd);
        let rows = task_rows(&ds, s.task(2));
        let err = train_step(
            &mut state,
            &ds,
            &rows[..4],
            &mut obj,
            &config,
            &mut optim,
            0.05,
            1,
            StepPos { task: 2, epoch: 0, step: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    /// Stop-gradient contract: with the extractor losses zeroed, the two
    /// classifier losses must leave every feature-extractor parameter
    /// untouched (zero gradient, zero movement).
    #[test]
    fn classifier_losses_never_move_the_extractor() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let mut config = tiny_config(Strategy::Kaizen);
        config.weights = LossWeights {
            kd_fe: 0.0,
            kd_c: 2.0,
            ct_c: 1.0,
            ct_fe: 0.0,
        };
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        state.snapshot_previous();
        let before = nn::param_checksum(&state.f_current);
        let mut optim = Sgd::new(config.sgd);
        let rows = task_rows(&ds, s.task(2));
        train_step(
            &mut state,
            &ds,
            &rows[..8],
            &mut obj,
            &config,
            &mut optim,
            0.1,
            1,
            StepPos { task: 2, epoch: 0, step: 0 },
        )
        .unwrap();
        // gradients on the extractor are exactly zero...
        for p in state.f_current.params() {
            assert!(
                p.grad.iter().all(|&g| g == 0.0),
                "nonzero extractor gradient in {}",
                p.name
            );
        }
        // ...and parameters did not move (weight decay 0); batch-norm
        // running stats may shift from the forward pass itself
        assert_eq!(nn::param_checksum(&state.f_current), before);
        // while the classifier itself did train
        let cls_grad: f32 = state
            .classifier
            .params()
            .iter()
            .map(|p| p.grad.iter().map(|g| g.abs()).sum::<f32>())
            .sum();
        assert!(cls_grad > 0.0);
    }

    /// Hand-worked chain rule on the toy linear model: two samples, BYOL
    /// objective, task 1 (so only ct_c and ct_fe are active). All heads
    /// are identity MLPs over positive activations, so the expected
    /// backbone and classifier updates can be derived symbolically.
    #[test]
    fn hand_worked_toy_step_matches_chain_rule() {
        let arch = ArchitectureSpec {
            backbone: "toy".into(),
            toy_input_dim: 3,
            toy_feature_dim: 2,
            classifier_hidden: 2,
            num_outputs: 2,
            projector_hidden: 2,
            projector_dim: 2,
            predictor_hidden: 2,
            input_resolution: 1,
            head_batchnorm: false,
            width_multiplier: 1.0,
        };
        let mut obj = SslObjective::new(SslKind::Byol);
        obj.momentum_coefficient = 0.9;
        let mut state = init_model(&arch, SslKind::Byol, 0).unwrap();

        let w0 = array![[0.30f32, 0.10, 0.20], [0.05, 0.40, 0.15]];
        let b0 = array![0.01f32, 0.02];
        let eye2 = Array2::<f32>::eye(2);
        let zero2 = Array2::<f32>::zeros((2, 2));
        let set_identity = |m: &mut Mlp| {
            m.lin1.w.value.assign(&eye2.clone().into_dyn());
            m.lin1.b.value.fill(0.0);
            m.lin2.w.value.assign(&eye2.clone().into_dyn());
            m.lin2.b.value.fill(0.0);
        };
        let _ = zero2;
        if let crate::nn::backbone::Backbone::Toy(t) = &mut state.f_current.backbone {
            t.lin.w.value.assign(&w0.clone().into_dyn());
            t.lin.b.value.assign(&b0.clone().into_dyn());
        }
        set_identity(&mut state.f_current.projector);
        {
            let m = state.f_momentum.as_mut().unwrap();
            if let crate::nn::backbone::Backbone::Toy(t) = &mut m.backbone {
                t.lin.w.value.assign(&w0.clone().into_dyn());
                t.lin.b.value.assign(&b0.clone().into_dyn());
            }
            set_identity(&mut m.projector);
        }
        set_identity(&mut state.h_ssl);
        set_identity(&mut state.h_kd);
        set_identity(&mut state.classifier);

        let x1v = [[0.9f64, 0.5, 0.7], [0.4, 0.8, 0.3]];
        let x2v = [[0.8f64, 0.6, 0.6], [0.5, 0.7, 0.4]];
        let to_batch = |rows: &[[f64; 3]; 2]| {
            Array4::from_shape_fn((2, 3, 1, 1), |(b, c, _, _)| rows[b][c] as f32)
        };
        let x1 = to_batch(&x1v);
        let x2 = to_batch(&x2v);
        let labels = vec![Some(0u32), Some(1u32)];

        let lr = 0.1f64;
        let config = StrategyConfig {
            cosine_schedule: false,
            lr,
            sgd: SgdConfig {
                momentum: 0.9,
                weight_decay: 0.0,
            },
            ..tiny_config(Strategy::Kaizen)
        };
        let mut optim = Sgd::new(config.sgd);
        let b = train_step_views(
            &mut state,
            &x1,
            &x2,
            &labels,
            &mut obj,
            &config,
            &mut optim,
            lr,
            StepPos { task: 1, epoch: 0, step: 0 },
        )
        .unwrap();

        // ---- oracle: symbolic forward/backward in f64 -------------------
        let wf = [[0.30f64, 0.10, 0.20], [0.05, 0.40, 0.15]];
        let bf = [0.01f64, 0.02];
        let feat = |x: &[f64; 3]| {
            [
                wf[0][0] * x[0] + wf[0][1] * x[1] + wf[0][2] * x[2] + bf[0],
                wf[1][0] * x[0] + wf[1][1] * x[1] + wf[1][2] * x[2] + bf[1],
            ]
        };
        let p: Vec<[f64; 2]> = x1v.iter().map(feat).collect(); // online embeddings
        let zt: Vec<[f64; 2]> = x2v.iter().map(feat).collect(); // detached targets
        let norm = |v: &[f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        // BYOL: mean_i 2 - 2 cos(p_i, z_i); dL/dp_i = (-2/N)(zhat - cos * phat)/|p|
        let mut ct_fe = 0.0;
        let mut dp = vec![[0.0f64; 2]; 2];
        for i in 0..2 {
            let (np, nz) = (norm(&p[i]), norm(&zt[i]));
            let ph = [p[i][0] / np, p[i][1] / np];
            let zh = [zt[i][0] / nz, zt[i][1] / nz];
            let cos = ph[0] * zh[0] + ph[1] * zh[1];
            ct_fe += 2.0 - 2.0 * cos;
            for j in 0..2 {
                dp[i][j] = (-2.0 / 2.0) * (zh[j] - cos * ph[j]) / np;
            }
        }
        ct_fe /= 2.0;
        // classifier: logits = feat (identity 2-layer head), CE over 2 rows
        let mut ct_c = 0.0;
        let mut dlogits = vec![[0.0f64; 2]; 2];
        for i in 0..2 {
            let l = p[i]; // same values as feat(x1)
            let m = l[0].max(l[1]);
            let z = (l[0] - m).exp() + (l[1] - m).exp();
            let logp = [l[0] - m - z.ln(), l[1] - m - z.ln()];
            let y = i; // labels 0, 1
            ct_c -= logp[y];
            for j in 0..2 {
                dlogits[i][j] = (logp[j].exp() - if j == y { 1.0 } else { 0.0 }) / 2.0;
            }
        }
        ct_c /= 2.0;
        assert_relative_eq!(b.ct_fe, ct_fe, max_relative = 1e-5);
        assert_relative_eq!(b.ct_c, ct_c, max_relative = 1e-5);
        assert_relative_eq!(b.total, ct_fe + ct_c, max_relative = 1e-5);
        assert_eq!(b.kd_fe, 0.0);
        assert_eq!(b.kd_c, 0.0);

        // backbone update: dW = dp^T . x1 (identity heads pass dp through),
        // single SGD step with fresh momentum is theta -= lr * dW
        let mut expect_w = wf;
        let mut expect_b = bf;
        for r in 0..2 {
            for c in 0..3 {
                let dw: f64 = (0..2).map(|i| dp[i][r] * x1v[i][c]).sum();
                expect_w[r][c] -= lr * dw;
            }
            let db: f64 = (0..2).map(|i| dp[i][r]).sum();
            expect_b[r] -= lr * db;
        }
        if let crate::nn::backbone::Backbone::Toy(t) = &state.f_current.backbone {
            for r in 0..2 {
                for c in 0..3 {
                    assert_relative_eq!(
                        t.lin.w.value[[r, c]] as f64,
                        expect_w[r][c],
                        max_relative = 1e-4
                    );
                }
                assert_relative_eq!(t.lin.b.value[[r]] as f64, expect_b[r], max_relative = 1e-4);
            }
        } else {
            panic!("toy backbone expected");
        }

        // classifier second layer: dW2 = dlogits^T . hidden, hidden = feat
        // (identity first layer over positive values)
        let mut expect_w2 = [[1.0f64, 0.0], [0.0, 1.0]];
        for r in 0..2 {
            for c in 0..2 {
                let dw: f64 = (0..2).map(|i| dlogits[i][r] * p[i][c]).sum();
                expect_w2[r][c] -= lr * dw;
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                assert_relative_eq!(
                    state.classifier.lin2.w.value[[r, c]] as f64,
                    expect_w2[r][c],
                    max_relative = 1e-4,
                    epsilon = 1e-6
                );
            }
        }

        // EMA after the step: momentum backbone = m * W_init + (1-m) * W_new
        if let crate::nn::backbone::Backbone::Toy(t) =
            &state.f_momentum.as_ref().unwrap().backbone
        {
            for r in 0..2 {
                for c in 0..3 {
                    let expected = 0.9 * wf[r][c] + 0.1 * expect_w[r][c];
                    assert_relative_eq!(
                        t.lin.w.value[[r, c]] as f64,
                        expected,
                        max_relative = 1e-4
                    );
                }
            }
        }
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let mut config = tiny_config(Strategy::Kaizen);
        config.epochs_per_task = 0;
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        let before = state.current_checksum();
        let mut buffer = ReplayBuffer::new(0.0, 2, 1).unwrap();
        let mut log = LossLog::default();
        train_task(
            &mut state, &ds, s.task(1), &mut buffer, &mut obj, &config, 1, &mut log,
        )
        .unwrap();
        assert_eq!(state.current_checksum(), before);
        assert!(log.records.is_empty());
    }

    #[test]
    fn no_distill_logs_zero_kd_terms_everywhere() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::NoDistill);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut log = LossLog::default();
        let _ = run_continual(
            &ds,
            &s,
            &tiny_arch(),
            &mut obj,
            &config,
            3,
            &mut log,
            |_, _, _, _| Ok(()),
        )
        .unwrap();
        assert!(!log.records.is_empty());
        for r in &log.records {
            assert_eq!(r.kd_fe, 0.0);
            assert_eq!(r.kd_c, 0.0);
        }
    }

    #[test]
    fn cassle_distills_extractor_only_and_leaves_classifier_during_pretraining() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Cassle);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 5).unwrap();
        let mut buffer = ReplayBuffer::new(0.2, 2, 5).unwrap();
        let mut log = LossLog::default();
        // task 1
        train_task(&mut state, &ds, s.task(1), &mut buffer, &mut obj, &config, 5, &mut log).unwrap();
        state.snapshot_previous();
        buffer.update(&ds, s.task(1)).unwrap();
        // during pre-training the classifier must not move
        let cls_before = nn::state_checksum(&state.classifier);
        train_task(&mut state, &ds, s.task(2), &mut buffer, &mut obj, &config, 5, &mut log).unwrap();
        assert_eq!(nn::state_checksum(&state.classifier), cls_before);
        let task2: Vec<&StepRecord> = log.records.iter().filter(|r| r.task == 2).collect();
        assert!(!task2.is_empty());
        for r in &task2 {
            assert_eq!(r.kd_c, 0.0);
            assert_eq!(r.ct_c, 0.0);
            assert!(r.kd_fe > 0.0, "extractor distillation must be active");
        }
    }

    #[test]
    fn posthoc_requires_baseline_strategy_and_labels() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 5).unwrap();
        let buffer = ReplayBuffer::new(0.0, 2, 5).unwrap();
        let kaizen = tiny_config(Strategy::Kaizen);
        assert!(matches!(
            fit_classifier_posthoc(&mut state, &ds, s.task(1), &buffer, &kaizen, 5).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn posthoc_leaves_extractor_frozen_and_fits_separable_features() {
        // hand-built dataset: 2 classes in 3-channel 1x1 images, linearly
        // separable after the toy backbone's fixed projection
        let mut train = crate::dataset::SampleSet::default();
        let mut test = crate::dataset::SampleSet::default();
        for i in 0..12 {
            let class = (i % 2) as u32;
            let jitter = (i as f32) * 0.01;
            let v = if class == 0 {
                [1.0 + jitter, 0.1, 0.5]
            } else {
                [0.1, 1.0 + jitter, 0.5]
            };
            let img = ndarray::Array3::from_shape_fn((3, 1, 1), |(c, _, _)| v[c]);
            train.images.push(img.clone());
            train.labels.push(class);
            test.images.push(img);
            test.labels.push(class);
        }
        let ds = Dataset {
            name: "sep".into(),
            resolution: 1,
            num_classes: 2,
            train,
            test,
        };
        let p = split_classes(2, 1, 0).unwrap();
        let s = build_stream(&ds, &p, 1.0, 0).unwrap();
        let arch = ArchitectureSpec {
            backbone: "toy".into(),
            toy_input_dim: 3,
            toy_feature_dim: 2,
            classifier_hidden: 4,
            num_outputs: 2,
            projector_hidden: 2,
            projector_dim: 2,
            predictor_hidden: 2,
            input_resolution: 1,
            head_batchnorm: false,
            width_multiplier: 1.0,
        };
        let mut state = init_model(&arch, SslKind::SimClr, 3).unwrap();
        if let crate::nn::backbone::Backbone::Toy(t) = &mut state.f_current.backbone {
            t.lin
                .w
                .value
                .assign(&array![[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0]].into_dyn());
            t.lin.b.value.fill(0.0);
        }
        let fe_before = state.current_checksum();
        let buffer = ReplayBuffer::new(0.0, 2, 3).unwrap();
        let mut config = tiny_config(Strategy::NoDistill);
        config.augment = AugmentPolicy::identity();
        config.posthoc_epochs = 60;
        config.posthoc_lr = 0.5;
        config.batch_size = 12;
        fit_classifier_posthoc(&mut state, &ds, s.task(1), &buffer, &config, 3).unwrap();
        assert_eq!(state.current_checksum(), fe_before, "extractor must stay frozen");
        let acc = evaluate_model(&mut state, &ds, &[s.task(1)], 12).unwrap();
        assert_eq!(acc[0], 1.0, "separable features must reach perfect accuracy");
    }

    /// With distillation weights zeroed and no replay, the joint strategy's
    /// extractor follows exactly the same trajectory as plain fine-tuning
    /// (classifier aside, which plain fine-tuning trains post-hoc instead).
    #[test]
    fn kaizen_with_zero_kd_and_no_replay_matches_no_distill_extractor() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let mut checksums_a: Vec<(String, String, String)> = Vec::new();
        let mut checksums_b: Vec<(String, String, String)> = Vec::new();

        let mut cfg_a = tiny_config(Strategy::Kaizen);
        cfg_a.weights = LossWeights {
            kd_fe: 0.0,
            kd_c: 0.0,
            ct_c: 1.0,
            ct_fe: 1.0,
        };
        cfg_a.replay_fraction = 0.0;
        let mut obj_a = SslObjective::new(SslKind::SimClr);
        let mut log_a = LossLog::default();
        run_continual(&ds, &s, &tiny_arch(), &mut obj_a, &cfg_a, 11, &mut log_a, |st, _, _, _| {
            checksums_a.push((
                nn::param_checksum(&st.f_current),
                nn::param_checksum(&st.h_ssl),
                nn::param_checksum(&st.h_kd),
            ));
            Ok(())
        })
        .unwrap();

        let mut cfg_b = tiny_config(Strategy::NoDistill);
        cfg_b.replay_fraction = 0.0;
        let mut obj_b = SslObjective::new(SslKind::SimClr);
        let mut log_b = LossLog::default();
        run_continual(&ds, &s, &tiny_arch(), &mut obj_b, &cfg_b, 11, &mut log_b, |st, _, _, _| {
            checksums_b.push((
                nn::param_checksum(&st.f_current),
                nn::param_checksum(&st.h_ssl),
                nn::param_checksum(&st.h_kd),
            ));
            Ok(())
        })
        .unwrap();

        assert_eq!(checksums_a, checksums_b);
        // and the logged SSL losses agree step for step
        let a: Vec<f64> = log_a.records.iter().map(|r| r.ct_fe).collect();
        let b: Vec<f64> = log_b.records.iter().map(|r| r.ct_fe).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn run_continual_shapes_and_determinism() {
        let ds = tiny_dataset();
        let p1 = split_classes(10, 1, 3).unwrap();
        let s1 = build_stream(&ds, &p1, 1.0, 3).unwrap();
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut log = LossLog::default();
        let m1 = run_continual(&ds, &s1, &tiny_arch(), &mut obj, &config, 2, &mut log, |_, _, _, _| Ok(()))
            .unwrap();
        assert_eq!(m1.num_tasks(), 1);
        assert!(m1.is_complete());

        // determinism on a 2-task stream
        let s2 = two_task_stream(&ds);
        let run = |seed: u64| {
            let mut obj = SslObjective::new(SslKind::SimClr);
            let mut log = LossLog::default();
            run_continual(&ds, &s2, &tiny_arch(), &mut obj, &config, seed, &mut log, |_, _, _, _| Ok(()))
                .unwrap()
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a.to_csv(), b.to_csv());
        let c = run(10);
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn single_task_first_baseline_equals_continual_first_task() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::NoDistill);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut log = LossLog::default();
        let m = run_continual(&ds, &s, &tiny_arch(), &mut obj, &config, 4, &mut log, |_, _, _, _| Ok(()))
            .unwrap();
        let diag = run_single_task_baselines(
            &ds,
            &s,
            &tiny_arch(),
            &SslObjective::new(SslKind::SimClr),
            &config,
            4,
        )
        .unwrap();
        assert_eq!(diag.len(), 2);
        assert_eq!(m.get(1, 1), diag[0], "first-task procedures are identical");
        // fresh-init contract for the k-th baseline
        let init2 = init_model(&tiny_arch(), SslKind::SimClr, single_task_seed(4, 2)).unwrap();
        let fresh = init_model(&tiny_arch(), SslKind::SimClr, single_task_seed(4, 2)).unwrap();
        assert_eq!(init2.current_checksum(), fresh.current_checksum());
    }

    #[test]
    fn nonfinite_loss_aborts_with_diagnostic() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::SimClr);
        let mut state = init_model(&tiny_arch(), SslKind::SimClr, 1).unwrap();
        for p in state.f_current.params_mut() {
            p.value.fill(f32::NAN);
        }
        let mut optim = Sgd::new(config.sgd);
        let rows = task_rows(&ds, s.task(1));
        let err = train_step(
            &mut state,
            &ds,
            &rows[..4],
            &mut obj,
            &config,
            &mut optim,
            0.05,
            1,
            StepPos { task: 1, epoch: 0, step: 0 },
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { detail, .. } => {
                assert!(detail.contains("ct_fe"), "diagnostic dump carries the breakdown");
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_restores_everything() {
        let ds = tiny_dataset();
        let s = two_task_stream(&ds);
        let config = tiny_config(Strategy::Kaizen);
        let mut obj = SslObjective::new(SslKind::MoCoV2Plus).with_queue_capacity(64);
        let mut state = init_model(&tiny_arch(), SslKind::MoCoV2Plus, 6).unwrap();
        let mut buffer = ReplayBuffer::new(0.2, 2, 6).unwrap();
        let mut log = LossLog::default();
        train_task(&mut state, &ds, s.task(1), &mut buffer, &mut obj, &config, 6, &mut log).unwrap();
        state.snapshot_previous();
        buffer.update(&ds, s.task(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task_1.ckpt");
        save_checkpoint(&path, &state, &buffer, &obj, 1, 6).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.completed_task, 1);
        assert_eq!(ck.seed, 6);
        assert_eq!(ck.state.task_index, 2);
        assert_eq!(ck.state.current_checksum(), state.current_checksum());
        assert_eq!(ck.state.prev_checksums(), state.prev_checksums());
        assert_eq!(ck.buffer.len(), buffer.len());
        assert_eq!(
            ck.objective.queue.as_ref().unwrap().len(),
            obj.queue.as_ref().unwrap().len()
        );
    }
}
