use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{to_sequence_labels, Record};
use crate::encoder::{Dropout, ParamSet};
use crate::heads::{encode_for_task, target_for, Target, TaskKind, TaskModel};
use crate::metrics::{confusion, f1, Averaging};
use crate::tokenizer::{InputEncoding, Vocab};
use crate::training::loss::BatchLoss;
use crate::training::optim::AdamW;
use crate::{Error, Result};

/// Where the per-epoch training F1 comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Source {
    /// A dropout-free pass over the training set after each epoch.
    #[default]
    Eval,
    /// Predictions made during the epoch's own training forwards.
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_len: usize,
    #[serde(default)]
    pub f1_source: F1Source,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            seed: 0,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
            f1_source: F1Source::Eval,
        }
    }
}

impl TrainConfig {
    /// Defaults with the setting's epoch count.
    pub fn for_task(task: &TaskKind) -> Self {
        Self {
            epochs: task.setting.default_epochs(),
            ..Self::default()
        }
    }

    /// Batch size of the reference bert-base runs.
    pub const REFERENCE_BATCH_SIZE: usize = 128;

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for the special tokens".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_train_f1: Vec<f64>,
    pub wall_clock_secs: f64,
    pub param_checksum: String,
    pub examples: usize,
    /// True when an observer ended training before `epochs`.
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_f1: f64,
}

/// A record ready for training or scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub encoding: InputEncoding,
    pub target: Target,
    /// Gold class of each scored item: one for classification, one per word
    /// for sequence labeling.
    pub gold: Vec<usize>,
}

pub fn prepare_examples(task: &TaskKind, vocab: &Vocab, records: &[Record], max_len: usize) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let encoding = encode_for_task(task, vocab, r, max_len)?;
            let target = target_for(task, r, &encoding)?;
            let gold = match &target {
                Target::Class(c) => vec![*c],
                Target::Tokens(_) => to_sequence_labels(r).into_iter().map(usize::from).collect(),
            };
            Ok(Example {
                id: r.id.clone(),
                encoding,
                target,
                gold,
            })
        })
        .collect()
}

/// Encodes `records` and trains `model` on them.
pub fn fit(model: &mut TaskModel, vocab: &Vocab, records: &[Record], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let examples = prepare_examples(&model.task, vocab, records, cfg.max_len)?;
    fit_examples(model, &examples, cfg, |_| ControlFlow::Continue(()))
}

/// Trains for `cfg.epochs` epochs; `observer` sees every finished epoch and
/// may end training early.
pub fn fit_examples<F>(model: &mut TaskModel, examples: &[Example], cfg: &TrainConfig, mut observer: F) -> Result<TrainReport>
where
    F: FnMut(&EpochStats) -> ControlFlow<()>,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let start = Instant::now();
    let averaging = Averaging::for_classes(model.task.num_classes);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout = Dropout {
        rate: model.encoder.cfg.dropout_rate,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
    };
    let mut optimizer = AdamW::new(&*model, cfg.learning_rate, cfg.weight_decay);
    let mut grads = model.zeros_like();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_train_f1: Vec::with_capacity(cfg.epochs),
        wall_clock_secs: 0.0,
        param_checksum: String::new(),
        examples: examples.len(),
        stopped_early: false,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = BatchLoss::default();
        let mut running = (Vec::new(), Vec::new());
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let mut batch_loss = BatchLoss::default();
            for &i in batch {
                let ex = &examples[i];
                let (loss, count, preds) = model.accumulate(&ex.encoding, &ex.target, Some(&mut dropout), &mut grads)?;
                batch_loss.add(loss, count);
                if cfg.f1_source == F1Source::Running {
                    running.0.extend(preds);
                    running.1.extend_from_slice(&ex.gold);
                }
            }
            if batch_loss.is_empty() {
                continue;
            }
            grads.scale(1.0 / batch_loss.count as f64);
            optimizer.step(model, &grads);
            epoch_loss.add(batch_loss.sum, batch_loss.count);
        }
        let train_f1 = match cfg.f1_source {
            F1Source::Eval => {
                let (preds, golds) = predict_examples(model, examples)?;
                f1(&confusion(&preds, &golds, model.task.num_classes)?, averaging)
            }
            F1Source::Running => f1(&confusion(&running.0, &running.1, model.task.num_classes)?, averaging),
        };
        let stats = EpochStats {
            epoch,
            mean_loss: epoch_loss.mean(),
            train_f1,
        };
        report.epoch_loss.push(stats.mean_loss);
        report.epoch_train_f1.push(stats.train_f1);
        log::debug!("epoch {epoch}: loss {:.5} train F1 {:.4}", stats.mean_loss, stats.train_f1);
        if observer(&stats).is_break() {
            report.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.param_checksum = model.checksum();
    Ok(report)
}

/// Flattened predicted and gold classes over all scored items.
pub fn predict_examples(model: &TaskModel, examples: &[Example]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for ex in examples {
        let p = model.predict(&ex.encoding)?;
        if p.labels.len() != ex.gold.len() {
            return Err(Error::Shape(format!("{}: {} predictions for {} gold items", ex.id, p.labels.len(), ex.gold.len())));
        }
        preds.extend(p.labels);
        golds.extend_from_slice(&ex.gold);
    }
    Ok((preds, golds))
}
