//! The three task formulations: how a record becomes an encoder input, and
//! the single linear layer that turns encoder states into class scores.
//!
//! * word level: `[CLS] masked sentence [SEP] original sentence [SEP]`,
//!   classified from CLS (or, optionally, from the MASK position);
//! * sentence level: the original sentence alone, classified from CLS;
//! * sequence labeling: the original sentence, one binary label per word
//!   read from the word's first subword piece.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{to_sequence_labels, Record, Scheme};
use crate::encoder::checkpoint;
use crate::encoder::params::join;
use crate::encoder::{init_model, Dropout, EncoderConfig, EncoderModel, ForwardCache, Linear, ParamSet, ParamView, ParamViewMut, INIT_STD};
use crate::tokenizer::{mask_aspect, InputEncoding, Vocab};
use crate::training::loss::cross_entropy;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    WordLevel,
    SentenceLevel,
    SequenceLabeling,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::WordLevel, Setting::SentenceLevel, Setting::SequenceLabeling];

    /// Column label used in result tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Setting::WordLevel => "WCLS",
            Setting::SentenceLevel => "SCLS",
            Setting::SequenceLabeling => "SL",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::WordLevel => "word_level",
            Setting::SentenceLevel => "sentence_level",
            Setting::SequenceLabeling => "sequence_labeling",
        }
    }

    /// Fine-tuning epochs per setting: 5 / 20 / 20.
    pub fn default_epochs(self) -> usize {
        match self {
            Setting::WordLevel => 5,
            Setting::SentenceLevel | Setting::SequenceLabeling => 20,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_level" | "wcls" | "WCLS" => Ok(Setting::WordLevel),
            "sentence_level" | "scls" | "SCLS" => Ok(Setting::SentenceLevel),
            "sequence_labeling" | "sl" | "SL" => Ok(Setting::SequenceLabeling),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Which encoder state a word-level classifier reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Cls,
    /// The MASK piece that replaced the aspect word in segment A.
    MaskPosition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskKind {
    pub setting: Setting,
    pub num_classes: usize,
    #[serde(default)]
    pub pooling: Pooling,
}

impl TaskKind {
    /// Sequence labeling is always binary; the classification settings use
    /// the scheme's classes (4 for LCC scores).
    pub fn for_scheme(setting: Setting, scheme: Scheme) -> Self {
        let num_classes = match setting {
            Setting::SequenceLabeling => 2,
            _ => scheme.num_classes(),
        };
        Self {
            setting,
            num_classes,
            pooling: Pooling::Cls,
        }
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn is_sequence(&self) -> bool {
        self.setting == Setting::SequenceLabeling
    }
}

/// Builds the encoder input of `r` for `task`.
pub fn encode_for_task(task: &TaskKind, v: &Vocab, r: &Record, max_len: usize) -> Result<InputEncoding> {
    let unusable = |what: &str| Error::InvalidRecord {
        id: r.id.clone(),
        message: format!("aspect word truncated away in {what} under max length {max_len}"),
    };
    match task.setting {
        Setting::WordLevel => {
            let masked = mask_aspect(&r.sentence, r.aspect_index)?;
            let mut enc = v.encode_pair(&masked, &r.sentence, max_len);
            let span_a = enc.word_span(0, r.aspect_index);
            if span_a.is_empty() {
                return Err(unusable("the masked segment"));
            }
            if enc.word_span(1, r.aspect_index).is_empty() {
                return Err(unusable("the original segment"));
            }
            if task.pooling == Pooling::MaskPosition {
                enc.focus = Some(span_a[0]);
            }
            Ok(enc)
        }
        Setting::SentenceLevel | Setting::SequenceLabeling => {
            let enc = v.encode_single(&r.sentence, max_len);
            if enc.word_span(0, r.aspect_index).is_empty() {
                return Err(unusable("the sentence"));
            }
            Ok(enc)
        }
    }
}

/// Per-position training targets: the first piece of each word gets the
/// word's label; continuation pieces, specials and padding are ignored.
pub fn project_token_labels(enc: &InputEncoding, gold: &[u8]) -> Result<Vec<Option<usize>>> {
    if gold.len() != enc.segment_words[0] {
        return Err(Error::Shape(format!(
            "{} gold labels for a {}-word sentence",
            gold.len(),
            enc.segment_words[0]
        )));
    }
    let mut targets = vec![None; enc.len()];
    for (word, pos) in enc.first_pieces(0).into_iter().enumerate() {
        if let Some(p) = pos {
            targets[p] = Some(gold[word] as usize);
        }
    }
    Ok(targets)
}

/// Training target of one example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// One entry per encoding position; `None` is ignored by the loss.
    Tokens(Vec<Option<usize>>),
}

/// Target for `r` under `task`, using an encoding from [`encode_for_task`].
pub fn target_for(task: &TaskKind, r: &Record, enc: &InputEncoding) -> Result<Target> {
    if task.is_sequence() {
        return Ok(Target::Tokens(project_token_labels(enc, &to_sequence_labels(r))?));
    }
    let class = r.label.class_index().ok_or_else(|| Error::InvalidRecord {
        id: r.id.clone(),
        message: "uncertain label cannot be a training target".into(),
    })?;
    if class >= task.num_classes {
        return Err(Error::InvalidRecord {
            id: r.id.clone(),
            message: format!("label {class} outside {} classes", task.num_classes),
        });
    }
    Ok(Target::Class(class))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prediction {
    /// One row for classification; one row per source word for sequence
    /// labeling (empty for words whose pieces were truncated away).
    pub logits: Vec<Vec<f64>>,
    /// Argmax of each row; truncated words default to literal (0).
    pub labels: Vec<usize>,
    /// Last-layer attention, heads × positions × positions.
    #[serde(skip)]
    pub attention: Option<Vec<Array2<f64>>>,
}

impl Prediction {
    /// Predicted class of a classification task.
    pub fn label(&self) -> usize {
        self.labels[0]
    }
}

/// Encoder plus a linear prediction layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    pub task: TaskKind,
    pub encoder: EncoderModel,
    pub head: Linear,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct TaskForward {
    hidden: Array2<f64>,
    cache: ForwardCache,
    /// Positions whose states feed the head, in logit-row order.
    rows: Vec<usize>,
    pub logits: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    encoder: EncoderConfig,
    task: TaskKind,
}

const CHECKPOINT_FORMAT: &str = "mdbench-task-model/1";

impl TaskModel {
    pub fn new(encoder: EncoderModel, task: TaskKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(encoder.cfg.seed ^ 0x005e_ed0f_4ead);
        let head = Linear::new(encoder.cfg.hidden, task.num_classes, INIT_STD, &mut rng);
        Self { task, encoder, head }
    }

    pub fn init(cfg: &EncoderConfig, task: TaskKind) -> Result<Self> {
        Ok(Self::new(init_model(cfg)?, task))
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    fn head_rows(&self, enc: &InputEncoding, len: usize) -> Result<Vec<usize>> {
        if self.task.is_sequence() {
            return Ok((0..len).collect());
        }
        let p = match (self.task.pooling, enc.focus) {
            (Pooling::MaskPosition, Some(p)) => p,
            (Pooling::MaskPosition, None) => {
                return Err(Error::InvalidArgument("mask pooling needs an encoding with a focus position".into()))
            }
            (Pooling::Cls, _) => 0,
        };
        if p >= len {
            return Err(Error::Shape(format!("pooled position {p} beyond {len} computed positions")));
        }
        Ok(vec![p])
    }

    pub(crate) fn forward_train(
        &self,
        enc: &InputEncoding,
        trim: bool,
        dropout: Option<&mut Dropout>,
    ) -> Result<TaskForward> {
        if self.head.output_dim() != self.task.num_classes || self.head.input_dim() != self.encoder.cfg.hidden {
            return Err(Error::Shape("prediction head does not match task and encoder".into()));
        }
        let input = self.encoder.prepare(enc, trim)?;
        let (hidden, cache) = self.encoder.forward_prepared(&input, dropout);
        let rows = self.head_rows(enc, hidden.nrows())?;
        let pooled = hidden.select(Axis(0), &rows);
        let logits = self.head.forward(&pooled);
        Ok(TaskForward {
            hidden,
            cache,
            rows,
            logits,
        })
    }

    /// Backpropagates logit gradients (one row per head row).
    pub(crate) fn backward(&self, fwd: &TaskForward, d_logits: &Array2<f64>, grads: &mut TaskModel) {
        let pooled = fwd.hidden.select(Axis(0), &fwd.rows);
        let d_pooled = self.head.backward(pooled.view(), d_logits, &mut grads.head);
        let mut d_hidden = Array2::zeros(fwd.hidden.raw_dim());
        for (r, &p) in fwd.rows.iter().enumerate() {
            let mut row = d_hidden.row_mut(p);
            row += &d_pooled.row(r);
        }
        self.encoder.backward(&fwd.cache, &d_hidden, &mut grads.encoder);
    }

    /// Accumulates the gradient of the summed loss into `grads`; returns the
    /// summed loss, the number of scored items and the predicted labels.
    pub(crate) fn accumulate(
        &self,
        enc: &InputEncoding,
        target: &Target,
        dropout: Option<&mut Dropout>,
        grads: &mut TaskModel,
    ) -> Result<(f64, usize, Vec<usize>)> {
        let fwd = self.forward_train(enc, true, dropout)?;
        let mut d_logits = Array2::zeros(fwd.logits.raw_dim());
        let mut loss = 0.0;
        let mut count = 0;
        match target {
            Target::Class(c) => {
                if self.task.is_sequence() {
                    return Err(Error::InvalidArgument("class target for a sequence task".into()));
                }
                let row = fwd.logits.row(0).to_vec();
                let term = cross_entropy(&row, Some(*c))?.expect("class target is never ignored");
                loss += term.loss;
                count += 1;
                d_logits.row_mut(0).assign(&ndarray::Array1::from(term.grad));
            }
            Target::Tokens(targets) => {
                if !self.task.is_sequence() {
                    return Err(Error::InvalidArgument("token targets for a classification task".into()));
                }
                for (r, &p) in fwd.rows.iter().enumerate() {
                    let t = targets.get(p).copied().flatten();
                    if let Some(term) = cross_entropy(&fwd.logits.row(r).to_vec(), t)? {
                        loss += term.loss;
                        count += 1;
                        d_logits.row_mut(r).assign(&ndarray::Array1::from(term.grad));
                    }
                }
            }
        }
        if count > 0 {
            self.backward(&fwd, &d_logits, grads);
        }
        let (_, labels) = self.decode(enc, &fwd.logits);
        Ok((loss, count, labels))
    }

    /// Logit rows and labels per scored item. Sequence words whose pieces
    /// were truncated away get an empty row and the literal label.
    fn decode(&self, enc: &InputEncoding, logits: &Array2<f64>) -> (Vec<Vec<f64>>, Vec<usize>) {
        if !self.task.is_sequence() {
            let row = logits.row(0).to_vec();
            let label = argmax(&row);
            return (vec![row], vec![label]);
        }
        let mut rows = Vec::with_capacity(enc.segment_words[0]);
        let mut labels = Vec::with_capacity(enc.segment_words[0]);
        for first in enc.first_pieces(0) {
            match first {
                Some(p) if p < logits.nrows() => {
                    let row = logits.row(p).to_vec();
                    labels.push(argmax(&row));
                    rows.push(row);
                }
                _ => {
                    labels.push(0);
                    rows.push(Vec::new());
                }
            }
        }
        (rows, labels)
    }

    fn prediction_from(&self, enc: &InputEncoding, mut fwd: TaskForward) -> Prediction {
        let attention = fwd
            .cache
            .layers
            .last_mut()
            .map(|l| std::mem::take(&mut l.attention.probs));
        let (logits, labels) = self.decode(enc, &fwd.logits);
        Prediction {
            logits,
            labels,
            attention,
        }
    }

    /// Inference over the non-padding prefix of the encoding.
    pub fn predict(&self, enc: &InputEncoding) -> Result<Prediction> {
        let fwd = self.forward_train(enc, true, None)?;
        Ok(self.prediction_from(enc, fwd))
    }

    /// Inference over every position, padding included.
    pub fn predict_full(&self, enc: &InputEncoding) -> Result<Prediction> {
        let fwd = self.forward_train(enc, false, None)?;
        Ok(self.prediction_from(enc, fwd))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            encoder: self.encoder.cfg.clone(),
            task: self.task,
        })?;
        checkpoint::save_file(path, &meta, &self.views())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let archive = checkpoint::load_file(path)?;
        let meta: CheckpointMeta = serde_json::from_value(archive.meta)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", meta.format)));
        }
        let mut model = Self::init(&meta.encoder, meta.task)?;
        checkpoint::load_into(&archive.tensors, &mut model)?;
        Ok(model)
    }
}

impl ParamSet for TaskModel {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.encoder.params(&join(prefix, "encoder"), out);
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.encoder.params_mut(&join(prefix, "encoder"), out);
        self.head.params_mut(&join(prefix, "head"), out);
    }
}
