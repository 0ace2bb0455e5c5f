//! Confusion matrices, F1, k-fold cross validation and aspect-word
//! statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Corpus, Dataset};
use crate::encoder::EncoderConfig;
use crate::heads::{Setting, TaskKind, TaskModel};
use crate::tokenizer::Vocab;
use crate::training::fit::{fit_examples, prepare_examples, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// `counts[gold][pred]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Items predicted as `c` whose gold class differs.
    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.counts[g][c]).sum()
    }

    /// Classes absent from both gold and predictions; they score F1 = 0.
    pub fn zero_support_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&c| self.support(c) == 0 && self.predicted(c) == 0)
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

pub fn confusion(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!("{} predictions for {} gold labels", preds.len(), golds.len())));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class pair (gold {g}, pred {p}) outside {num_classes} classes"
            )));
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// F1 of class 1 (metaphorical).
    BinaryPositive,
    /// Unweighted mean of per-class F1.
    Macro,
}

impl Averaging {
    /// Binary tasks score the metaphorical class; anything wider is macro.
    pub fn for_classes(num_classes: usize) -> Self {
        if num_classes == 2 {
            Averaging::BinaryPositive
        } else {
            Averaging::Macro
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Per-class F1 `2tp / (2tp + fp + fn)` as a reduced fraction; `0/1` when
/// the class never occurs in gold or predictions.
pub fn class_f1_ratio(cm: &ConfusionMatrix, c: usize) -> (u128, u128) {
    let tp = cm.true_positives(c) as u128;
    let den = 2 * tp + cm.false_positives(c) as u128 + cm.false_negatives(c) as u128;
    if den == 0 {
        return (0, 1);
    }
    let g = gcd(2 * tp, den).max(1);
    (2 * tp / g, den / g)
}

/// F1 as an exact reduced fraction.
pub fn f1_ratio(cm: &ConfusionMatrix, averaging: Averaging) -> (u128, u128) {
    match averaging {
        Averaging::BinaryPositive => {
            assert_eq!(cm.num_classes, 2, "binary F1 needs two classes");
            class_f1_ratio(cm, 1)
        }
        Averaging::Macro => {
            if cm.num_classes == 0 {
                return (0, 1);
            }
            let (mut num, mut den) = (0u128, 1u128);
            for c in 0..cm.num_classes {
                let (n, d) = class_f1_ratio(cm, c);
                num = num * d + n * den;
                den *= d;
                let g = gcd(num, den).max(1);
                num /= g;
                den /= g;
            }
            den *= cm.num_classes as u128;
            let g = gcd(num, den).max(1);
            (num / g, den / g)
        }
    }
}

/// F1 in [0, 1], the exact fraction divided once.
pub fn f1(cm: &ConfusionMatrix, averaging: Averaging) -> f64 {
    let (n, d) = f1_ratio(cm, averaging);
    n as f64 / d as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    pub zero_support_classes: Vec<usize>,
    pub training: TrainReport,
}

/// Gold labels, predicted labels and logits of one held-out record; one
/// entry per scored item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub id: String,
    pub fold: usize,
    pub gold: Vec<usize>,
    pub pred: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub dataset: String,
    pub corpus: Corpus,
    pub task: Setting,
    pub num_classes: usize,
    pub averaging: Averaging,
    pub k: usize,
    pub seed: u64,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    pub folds: Vec<FoldReport>,
    pub predictions: Vec<HeldOutPrediction>,
    pub wall_clock_secs: f64,
}

/// k-fold cross validation. Fold `i` trains a fresh model whose encoder and
/// training seeds are offset by `i`; examples enter training sorted by id so
/// the result does not depend on the order of `dataset.records`.
pub fn cross_validate(
    dataset: &Dataset,
    setting: Setting,
    vocab: &Vocab,
    encoder_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CVReport> {
    train_cfg.validate()?;
    encoder_cfg.validate()?;
    let start = std::time::Instant::now();
    let task = TaskKind::for_scheme(setting, dataset.scheme);
    let folds = make_folds(dataset, k, seed)?;
    let mut by_id: Vec<usize> = (0..dataset.len()).collect();
    by_id.sort_by(|&a, &b| dataset.records[a].id.cmp(&dataset.records[b].id));
    let sorted = dataset.subset(&by_id);
    let examples = prepare_examples(&task, vocab, &sorted.records, train_cfg.max_len)?;

    let mut fold_reports = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(dataset.len());
    for fold in 0..k {
        let (train_idx, test_idx) = folds.split(&sorted, fold);
        let train: Vec<_> = train_idx.iter().map(|&i| examples[i].clone()).collect();
        let test: Vec<_> = test_idx.iter().map(|&i| examples[i].clone()).collect();
        let mut enc = encoder_cfg.clone();
        enc.seed = encoder_cfg.seed.wrapping_add(fold as u64);
        let mut cfg = train_cfg.clone();
        cfg.seed = train_cfg.seed.wrapping_add(fold as u64);
        let mut model = TaskModel::init(&enc, task)?;
        let training = fit_examples(&mut model, &train, &cfg, |_| ControlFlow::Continue(()))?;

        let mut cm = ConfusionMatrix::new(task.num_classes);
        for ex in &test {
            let p = model.predict(&ex.encoding)?;
            cm.merge(&confusion(&p.labels, &ex.gold, task.num_classes)?);
            predictions.push(HeldOutPrediction {
                id: ex.id.clone(),
                fold,
                gold: ex.gold.clone(),
                pred: p.labels,
                logits: p.logits,
            });
        }
        let score = f1(&cm, Averaging::for_classes(task.num_classes));
        log::info!("{} {} fold {fold}: F1 {:.4}", dataset.name, setting, score);
        fold_reports.push(FoldReport {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            f1: score,
            zero_support_classes: cm.zero_support_classes(),
            confusion: cm,
            training,
        });
    }
    let fold_f1: Vec<f64> = fold_reports.iter().map(|f| f.f1).collect();
    let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CVReport {
        dataset: dataset.name.clone(),
        corpus: dataset.corpus,
        task: setting,
        num_classes: task.num_classes,
        averaging: Averaging::for_classes(task.num_classes),
        k,
        seed,
        fold_f1,
        mean_f1,
        folds: fold_reports,
        predictions,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

impl CVReport {
    /// Tab-separated held-out predictions with semicolon-joined logits: one
    /// row per record, or per word for sequence labeling.
    pub fn write_predictions<W: Write>(&self, w: W) -> Result<()> {
        write_prediction_dump(w, self.task, &self.predictions)
    }
}

pub fn write_prediction_dump<W: Write>(mut w: W, setting: Setting, rows: &[HeldOutPrediction]) -> Result<()> {
    let logits = |row: &[f64]| row.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    if setting == Setting::SequenceLabeling {
        writeln!(w, "id\tfold\tword_index\tgold\tpred\tlogits")?;
        for p in rows {
            for (i, (g, q)) in p.gold.iter().zip(&p.pred).enumerate() {
                let l = p.logits.get(i).map(|r| logits(r)).unwrap_or_default();
                writeln!(w, "{}\t{}\t{i}\t{g}\t{q}\t{l}", p.id, p.fold)?;
            }
        }
    } else {
        writeln!(w, "id\tfold\tgold\tpred\tlogits")?;
        for p in rows {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", p.id, p.fold, p.gold[0], p.pred[0], logits(&p.logits[0]))?;
        }
    }
    Ok(())
}

/// F1 (as percentages) reported for the pretrained model, by corpus and
/// setting.
pub fn reported_pretrained_f1(corpus: Corpus, setting: Setting) -> f64 {
    match (corpus, setting) {
        (Corpus::Moh, Setting::WordLevel) => 85.52,
        (Corpus::Moh, Setting::SentenceLevel) => 86.32,
        (Corpus::Moh, Setting::SequenceLabeling) => 89.18,
        (Corpus::Trofi, Setting::WordLevel) => 92.44,
        (Corpus::Trofi, Setting::SentenceLevel) => 92.12,
        (Corpus::Trofi, Setting::SequenceLabeling) => 94.45,
        (Corpus::Lcc, Setting::WordLevel) => 81.00,
        (Corpus::Lcc, Setting::SentenceLevel) => 77.56,
        (Corpus::Lcc, Setting::SequenceLabeling) => 91.48,
    }
}

/// Markdown grid of corpus × setting F1 percentages, with the pretrained
/// reference row first. Missing cells print `-`.
pub fn results_table(reports: &[CVReport]) -> String {
    let corpora = [Corpus::Moh, Corpus::Trofi, Corpus::Lcc];
    let mut out = String::from("| Model |");
    for c in corpora {
        for s in Setting::ALL {
            let _ = write!(out, " {} {} |", c.display_name(), s.short_name());
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(9));
    out.push_str("\n| BERT (reported) |");
    for c in corpora {
        for s in Setting::ALL {
            let _ = write!(out, " {:.2} |", reported_pretrained_f1(c, s));
        }
    }
    out.push_str("\n| this run |");
    for c in corpora {
        for s in Setting::ALL {
            match reports.iter().find(|r| r.corpus == c && r.task == s) {
                Some(r) => {
                    let _ = write!(out, " {:.2} |", 100.0 * r.mean_f1);
                }
                None => out.push_str(" - |"),
            }
        }
    }
    out.push('\n');
    let macro_used = reports.iter().any(|r| r.averaging == Averaging::Macro);
    if macro_used {
        out.push_str("\nFour-class score settings use macro F1; binary settings use F1 of the metaphorical class.\n");
    }
    let flagged: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.folds
                .iter()
                .filter(|f| !f.zero_support_classes.is_empty())
                .map(move |f| format!("{} {} fold {}: {:?}", r.dataset, r.task.short_name(), f.fold, f.zero_support_classes))
        })
        .collect();
    if !flagged.is_empty() {
        out.push_str("\nClasses absent from a fold (scored 0):\n");
        for f in flagged {
            let _ = writeln!(out, "- {f}");
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectGroups {
    /// Label histogram per lowercased aspect word.
    pub groups: BTreeMap<String, BTreeMap<i8, usize>>,
    /// Groups with literal records and no metaphorical one.
    pub all_literal: usize,
    /// Groups with metaphorical records and no literal one.
    pub all_metaphorical: usize,
    pub mixed: usize,
}

impl AspectGroups {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Groups records by aspect word. Literal means label 0, metaphorical means
/// label ≥ 1; uncertain records count in the histogram only.
pub fn group_by_aspect(d: &Dataset) -> AspectGroups {
    let mut out = AspectGroups::default();
    for r in &d.records {
        *out.groups
            .entry(r.aspect_word().to_lowercase())
            .or_default()
            .entry(r.label.value)
            .or_insert(0) += 1;
    }
    for hist in out.groups.values() {
        let literal = hist.get(&0).copied().unwrap_or(0) > 0;
        let metaphorical = hist.iter().any(|(&v, &n)| v >= 1 && n > 0);
        match (literal, metaphorical) {
            (true, false) => out.all_literal += 1,
            (false, true) => out.all_metaphorical += 1,
            (true, true) => out.mixed += 1,
            (false, false) => {}
        }
    }
    out
}
