//! Cross-entropy training with AdamW, periodic dev evaluation and
//! best-UAR checkpoint selection.
//!
//! A batch is a gradient-accumulation group: every utterance gets its own
//! forward/backward pass at its native length, and the gradients are summed
//! in group order before one optimizer step.

mod optim;
mod task;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::shuffled_groups;
use crate::interchange::FeatureMatrix;
use crate::metrics::{uar, Class, Confusion, MetricsError};
use crate::mix_seed;
use crate::model::{Checkpoint, CheckpointMeta, Classifier, Family, ModelError};
use crate::tensor::GradBuffer;

pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use task::separable_task;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("training set must contain both classes")]
    SingleClassTrainSet,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("item `{0}` has no label")]
    Unlabeled(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("optimizer shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("history I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("history CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub cnn_lr_peak: f64,
    pub cnn_warmup_steps: u64,
    pub seed: u64,
    /// Draw each group slot from a uniformly chosen class.
    pub balanced_sampling: bool,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            eval_every: 200,
            batch_size: 8,
            base_lr: 4e-4,
            cnn_lr_peak: 2e-4,
            cnn_warmup_steps: 1400,
            seed: 0,
            balanced_sampling: false,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Warmup only constrains the CNN schedule.
    pub fn validate(&self, family: Family) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 || self.total_steps % self.eval_every != 0 {
            return Err(TrainError::BadConfig(format!(
                "eval_every ({}) must divide total_steps ({})",
                self.eval_every, self.total_steps
            )));
        }
        if family == Family::Cnn && self.cnn_warmup_steps > self.total_steps {
            return Err(TrainError::BadConfig("warmup longer than training".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step`.
///
/// Head family: constant `base_lr`. CNN family: linear warmup from 0 to
/// `cnn_lr_peak`, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig, family: Family) -> Result<f64, TrainError> {
    if step > cfg.total_steps {
        return Err(TrainError::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    Ok(match family {
        Family::Head => cfg.base_lr,
        Family::Cnn => {
            let (s, w, n) = (step as f64, cfg.cnn_warmup_steps as f64, cfg.total_steps as f64);
            if step < cfg.cnn_warmup_steps {
                cfg.cnn_lr_peak * s / w
            } else if cfg.total_steps == cfg.cnn_warmup_steps {
                cfg.cnn_lr_peak
            } else {
                cfg.cnn_lr_peak * (n - s) / (n - w)
            }
        }
    })
}

/// One labeled utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: FeatureMatrix,
    pub label: Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    /// Mean training loss over the steps since the previous evaluation.
    pub loss: f64,
    pub dev_uar: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<HistoryRow>,
    pub final_model: Classifier,
    /// Mean loss of the very first accumulation group.
    pub first_batch_loss: f64,
}

/// Eval-mode UAR and confusion counts.
pub fn evaluate(model: &Classifier, set: &[Example]) -> Result<(f64, Confusion), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let preds = set
        .par_iter()
        .map(|ex| model.predict(&ex.features).map(|p| p.class))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<Class> = set.iter().map(|e| e.label).collect();
    let c = Confusion::from_pairs(&truth, &preds)?;
    Ok((uar(&c)?, c))
}

fn balanced_group(set: &[Example], size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class: [Vec<usize>; 2] = [Class::Negative, Class::Positive].map(|c| {
        set.iter()
            .enumerate()
            .filter(|(_, e)| e.label == c)
            .map(|(i, _)| i)
            .collect()
    });
    (0..size)
        .map(|_| {
            let pool = &by_class[usize::from(rng.random_bool(0.5))];
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

/// Runs `cfg.total_steps` optimizer steps starting from `model`.
pub fn train(
    model: Classifier,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let family = model.arch().family();
    cfg.validate(family)?;
    if dev_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let has = |c| train_set.iter().any(|e| e.label == c);
    if !has(Class::Negative) || !has(Class::Positive) {
        return Err(TrainError::SingleClassTrainSet);
    }
    let mut model = model;
    let mut state = OptimState::new(model.params(), cfg.adamw);
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut first_batch_loss = f64::NAN;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut pass = 0u64;

    for step in 1..=cfg.total_steps {
        let group = if cfg.balanced_sampling {
            balanced_group(train_set, cfg.batch_size, mix_seed(cfg.seed, step))
        } else {
            if queue.is_empty() {
                queue = shuffled_groups(train_set.len(), cfg.batch_size, cfg.seed, pass);
                queue.reverse();
                pass += 1;
            }
            queue.pop().expect("non-empty pass")
        };

        let results = group
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let ex = &train_set[i];
                let seed = mix_seed(mix_seed(cfg.seed, step), j as u64);
                model.loss_and_grads(&ex.features, ex.label, seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = GradBuffer::zeros_like(model.params());
        let mut group_loss = 0.0f64;
        for (loss, g) in &results {
            group_loss += f64::from(*loss);
            grads.add(g);
        }
        let n = results.len() as f64;
        grads.scale(1.0 / n as f32);
        group_loss /= n;
        if step == 1 {
            first_batch_loss = group_loss;
        }
        loss_sum += group_loss;
        loss_count += 1;

        let lr = lr_at(step, cfg, family)?;
        adamw_step(model.params_mut(), &grads, &mut state, lr)?;

        if step % cfg.eval_every == 0 {
            let (dev_uar, _) = evaluate(&model, dev_set)?;
            history.push(HistoryRow {
                step,
                loss: loss_sum / loss_count as f64,
                dev_uar,
            });
            log::info!("step {step}: loss {:.4}, dev UAR {:.4}", loss_sum / loss_count as f64, dev_uar);
            loss_sum = 0.0;
            loss_count = 0;
            let improved = best
                .as_ref()
                .is_none_or(|b| dev_uar > b.meta.dev_uar.unwrap_or(f64::NEG_INFINITY));
            if improved {
                best = Some(Checkpoint {
                    model: model.clone(),
                    meta: CheckpointMeta {
                        seed: cfg.seed,
                        step,
                        dev_uar: Some(dev_uar),
                    },
                });
            }
        }
    }
    Ok(TrainOutcome {
        best: best.ok_or_else(|| TrainError::BadConfig("no evaluation ran".into()))?,
        history,
        final_model: model,
        first_batch_loss,
    })
}

pub fn write_history(history: &[HistoryRow], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<HistoryRow>, _>>()?)
}
