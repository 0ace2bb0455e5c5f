//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

// `ensure!(x < tol)` negates the comparison on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The brute-force oracles index by class on purpose.
#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdbench::annotation::{agreement_rate, diff_annotations, majority_vote, AnnotationRevision};
use mdbench::data::{load_dataset, make_folds, Corpus, Dataset, Label, Record, Scheme};
use mdbench::encoder::{init_model, EncoderConfig, EncoderModel, ForwardOptions, ParamSet};
use mdbench::heads::{encode_for_task, Setting, TaskKind, TaskModel};
use mdbench::metrics::{confusion, cross_validate, f1, group_by_aspect, Averaging};
use mdbench::synth::{planted_dataset, planted_lexicon};
use mdbench::tokenizer::{build_vocab, Vocab};
use mdbench::training::gradcheck::check_all;
use mdbench::training::{prepare_examples, F1Source, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// --- gradients -------------------------------------------------------------

const GRAD_EPS: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut blocks = BTreeSet::new();
    for seed in 0..GRAD_SEEDS {
        for c in check_all(seed, GRAD_EPS) {
            ensure!(c.max_rel_error.is_finite(), "{} seed {seed}: non-finite error", c.block);
            if c.max_rel_error > worst.0 {
                worst = (c.max_rel_error, format!("{} / {} seed {seed}", c.block, c.worst));
            }
            blocks.insert(c.block);
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst.0 < GRAD_TOL, "max relative error {:.3e} at {} (limit {GRAD_TOL:e})", worst.0, worst.1);
    ensure!(elapsed < GRAD_BUDGET, "took {} (budget 60 s)", secs(elapsed));
    Ok(format!(
        "{} blocks x {GRAD_SEEDS} seeds, eps {GRAD_EPS:e}, hidden 8, worst {:.2e} ({}), {}",
        blocks.len(),
        worst.0,
        worst.1,
        secs(elapsed)
    ))
}

// --- attention and padding ---------------------------------------------------

fn word_pool() -> Vec<String> {
    let mut words: Vec<String> = planted_lexicon().iter().map(|w| w.to_string()).collect();
    words.extend(["he", "visited", "illness", "sky", "wept", "quietly"].map(String::from));
    words
}

fn random_sentence(rng: &mut ChaCha8Rng, pool: &[String], max_words: usize) -> Vec<String> {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                // out-of-vocabulary word, split into pieces or mapped to [UNK]
                format!("zq{}x", rng.random_range(0..1000))
            } else {
                pool.choose(rng).unwrap().clone()
            }
        })
        .collect()
}

/// Adds N(0, std) noise to every parameter so attention leaves the
/// near-uniform regime of a fresh initialization.
fn perturb<P: ParamSet>(model: &mut P, std: f64, rng: &mut ChaCha8Rng) {
    let normal = rand_distr::Normal::new(0.0, std).unwrap();
    for v in model.views_mut() {
        v.data.iter_mut().for_each(|x| *x += rng.sample(normal));
    }
}

fn small_encoder(vocab: &Vocab, seed: u64) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: 4,
        hidden: 16,
        ff_dim: 32,
        max_len: 96,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
        seed,
    }
}

const ATTENTION_PASSES: usize = 1000;
const ROW_SUM_TOL: f64 = 1e-6;

fn attention_normalization() -> Outcome {
    let pool = word_pool();
    let vocab = build_vocab(&pool, 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut model: Option<EncoderModel> = None;
    let mut rows = 0usize;
    let mut masked_keys = 0usize;
    let mut worst = 0.0f64;
    for pass in 0..ATTENTION_PASSES {
        if pass % 50 == 0 {
            let mut m = init_model(&small_encoder(&vocab, pass as u64)).unwrap();
            let std = [0.0, 0.3, 1.0, 3.0][(pass / 50) % 4];
            perturb(&mut m, std, &mut rng);
            model = Some(m);
        }
        let m = model.as_ref().unwrap();
        let a = random_sentence(&mut rng, &pool, 12);
        let max_len = rng.random_range(4..=64);
        let enc = if rng.random_bool(0.5) {
            vocab.encode_single(&a, max_len)
        } else {
            let b = random_sentence(&mut rng, &pool, 12);
            vocab.encode_pair(&a, &b, max_len)
        };
        let out = m
            .forward_with(&enc, ForwardOptions { all_attention: true, trim_padding: false })
            .map_err(|e| e.to_string())?;
        for (layer, heads) in out.all_attention.unwrap().iter().enumerate() {
            for (h, w) in heads.iter().enumerate() {
                ensure!(w.ncols() == enc.len(), "pass {pass}: {} keys for {} positions", w.ncols(), enc.len());
                for (q, row) in w.rows().into_iter().enumerate() {
                    let mut sum = 0.0;
                    for (k, &x) in row.iter().enumerate() {
                        if enc.attention_mask[k] == 0 {
                            ensure!(x == 0.0, "pass {pass} layer {layer} head {h}: query {q} puts {x:e} on masked key {k}");
                            masked_keys += 1;
                        } else {
                            ensure!(x >= 0.0, "pass {pass}: negative weight {x}");
                            sum += x;
                        }
                    }
                    worst = worst.max((sum - 1.0).abs());
                    ensure!((sum - 1.0).abs() <= ROW_SUM_TOL, "pass {pass} layer {layer} head {h} row {q}: sum {sum}");
                    rows += 1;
                }
            }
        }
    }
    ensure!(masked_keys > 0, "no pass exercised a masked key");
    Ok(format!(
        "{ATTENTION_PASSES} passes, {rows} rows, worst |sum - 1| {worst:.1e}, {masked_keys} masked weights all 0"
    ))
}

const PADDING_SENTENCES: usize = 100;
const PADDING_TOL: f64 = 1e-5;

fn record(id: String, sentence: Vec<String>, aspect: usize, value: i8) -> Record {
    Record::new(id, sentence, aspect, None, Label::new(Scheme::BinaryMoh, value).unwrap(), Corpus::Moh).unwrap()
}

fn padding_invariance() -> Outcome {
    let pool = word_pool();
    let vocab = build_vocab(&pool, 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut models = Vec::new();
    for (i, setting) in Setting::ALL.into_iter().enumerate() {
        let mut m = TaskModel::init(&small_encoder(&vocab, 40 + i as u64), TaskKind::for_scheme(setting, Scheme::BinaryMoh)).unwrap();
        perturb(&mut m, 0.5, &mut rng);
        models.push(m);
    }
    let mut worst = 0.0f64;
    for s in 0..PADDING_SENTENCES {
        let words = random_sentence(&mut rng, &pool, 10);
        let aspect = rng.random_range(0..words.len());
        let r = record(format!("p{s}"), words, aspect, (s % 2) as i8);
        for m in &models {
            let tight = encode_for_task(&m.task, &vocab, &r, 48).map_err(|e| e.to_string())?;
            let wide = encode_for_task(&m.task, &vocab, &r, 96).map_err(|e| e.to_string())?;
            ensure!(tight.live_len() == wide.live_len(), "sentence {s}: truncated at the tight length");
            ensure!(wide.len() > tight.len(), "sentence {s}: no extra padding");
            let a = m.predict_full(&tight).map_err(|e| e.to_string())?;
            let b = m.predict_full(&wide).map_err(|e| e.to_string())?;
            ensure!(a.logits.len() == b.logits.len(), "sentence {s}: row counts differ");
            for (ra, rb) in a.logits.iter().zip(&b.logits) {
                for (x, y) in ra.iter().zip(rb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    ensure!(worst <= PADDING_TOL, "largest logit change {worst:e} exceeds {PADDING_TOL:e}");
    Ok(format!("{PADDING_SENTENCES} sentences x 3 settings, padding 48 -> 96, max logit change {worst:.1e}"))
}

// --- learning ----------------------------------------------------------------

const OVERFIT_RECORDS: usize = 32;
const OVERFIT_EPOCHS: usize = 50;
const OVERFIT_LR: f64 = 5e-4;
const OVERFIT_BUDGET: Duration = Duration::from_secs(120);

fn overfit_oracle() -> Outcome {
    let start = Instant::now();
    let data = planted_dataset(OVERFIT_RECORDS, Corpus::Moh, 3).unwrap();
    let vocab = build_vocab(planted_lexicon(), 300).unwrap();
    let mut reached = Vec::new();
    for setting in Setting::ALL {
        let task = TaskKind::for_scheme(setting, Scheme::BinaryMoh);
        let enc_cfg = EncoderConfig::desk(vocab.len());
        let mut model = TaskModel::init(&enc_cfg, task).unwrap();
        let cfg = TrainConfig {
            epochs: OVERFIT_EPOCHS,
            learning_rate: OVERFIT_LR,
            max_len: 32,
            f1_source: F1Source::Eval,
            ..TrainConfig::for_task(&task)
        };
        let examples = prepare_examples(&task, &vocab, &data.records, cfg.max_len).unwrap();
        let mut hit = None;
        let report = mdbench::training::fit_examples(&mut model, &examples, &cfg, |e| {
            if e.train_f1 == 1.0 {
                hit = Some(e.epoch);
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .map_err(|e| e.to_string())?;
        let Some(epoch) = hit else {
            return Err(format!(
                "{}: train F1 {:.4} after {OVERFIT_EPOCHS} epochs",
                setting.short_name(),
                report.epoch_train_f1.last().copied().unwrap_or(0.0)
            ));
        };
        reached.push(format!("{} epoch {epoch}", setting.short_name()));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < OVERFIT_BUDGET, "took {} (budget 120 s)", secs(elapsed));
    Ok(format!("train F1 = 1.0 on {OVERFIT_RECORDS} records at desk size: {}, {}", reached.join(", "), secs(elapsed)))
}

const CV_RECORDS: usize = 200;
const CV_K: usize = 10;
const CV_MIN_F1: f64 = 0.95;
const CV_BUDGET: Duration = Duration::from_secs(600);

fn end_to_end_learnability() -> Outcome {
    let start = Instant::now();
    let data = planted_dataset(CV_RECORDS, Corpus::Moh, 11).unwrap();
    let vocab = build_vocab(planted_lexicon(), 300).unwrap();
    let enc_cfg = EncoderConfig {
        layers: 2,
        heads: 4,
        hidden: 64,
        ff_dim: 128,
        max_len: 32,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
        seed: 0,
    };
    let mut scores = Vec::new();
    for setting in Setting::ALL {
        let task = TaskKind::for_scheme(setting, Scheme::BinaryMoh);
        let cfg = TrainConfig {
            learning_rate: 5e-4,
            max_len: 32,
            f1_source: F1Source::Running,
            ..TrainConfig::for_task(&task)
        };
        let report = cross_validate(&data, setting, &vocab, &enc_cfg, &cfg, CV_K, 5).map_err(|e| e.to_string())?;
        ensure!(
            report.mean_f1 >= CV_MIN_F1,
            "{}: mean F1 {:.4} < {CV_MIN_F1} (folds {:?})",
            setting.short_name(),
            report.mean_f1,
            report.fold_f1
        );
        scores.push(format!("{} {:.4}", setting.short_name(), report.mean_f1));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < CV_BUDGET, "took {} (budget 600 s)", secs(elapsed));
    Ok(format!("{CV_K}-fold mean F1 on {CV_RECORDS} planted records: {}, {}", scores.join(", "), secs(elapsed)))
}

// --- metrics and folds -------------------------------------------------------

/// Independent F1: counts every (gold, pred) pair by scanning, keeps each
/// class score as an unreduced fraction and divides once at the end.
fn brute_force_f1(preds: &[usize], golds: &[usize], classes: usize) -> (Vec<Vec<u64>>, f64) {
    let mut counts = vec![vec![0u64; classes]; classes];
    for g in 0..classes {
        for p in 0..classes {
            counts[g][p] = golds.iter().zip(preds).filter(|&(&a, &b)| a == g && b == p).count() as u64;
        }
    }
    let class_ratio = |c: usize| -> (u128, u128) {
        let tp = counts[c][c] as u128;
        let fp: u128 = (0..classes).filter(|&g| g != c).map(|g| counts[g][c] as u128).sum();
        let fn_: u128 = (0..classes).filter(|&p| p != c).map(|p| counts[c][p] as u128).sum();
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            (0, 1)
        } else {
            (2 * tp, den)
        }
    };
    let score = if classes == 2 {
        let (n, d) = class_ratio(1);
        n as f64 / d as f64
    } else {
        let ratios: Vec<_> = (0..classes).map(class_ratio).collect();
        let den: u128 = ratios.iter().map(|r| r.1).product();
        let num: u128 = ratios.iter().map(|&(n, d)| n * (den / d)).sum();
        num as f64 / (den * classes as u128) as f64
    };
    (counts, score)
}

const METRIC_VECTORS: usize = 1000;

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(58);
    let mut macro_cases = 0;
    for case in 0..METRIC_VECTORS {
        let classes = rng.random_range(2..=5);
        let len = rng.random_range(1..=60);
        // bias towards a few classes so zero-support classes show up
        let live = rng.random_range(1..=classes);
        let golds: Vec<usize> = (0..len).map(|_| rng.random_range(0..live)).collect();
        let preds: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        let cm = confusion(&preds, &golds, classes).map_err(|e| e.to_string())?;
        let (counts, expected) = brute_force_f1(&preds, &golds, classes);
        for g in 0..classes {
            for p in 0..classes {
                ensure!(cm.counts[g][p] == counts[g][p], "case {case}: confusion[{g}][{p}] {} != {}", cm.counts[g][p], counts[g][p]);
            }
        }
        let got = f1(&cm, Averaging::for_classes(classes));
        ensure!(got == expected, "case {case}: f1 {got:?} != brute force {expected:?} ({classes} classes)");
        if classes > 2 {
            macro_cases += 1;
        }
    }
    Ok(format!("{METRIC_VECTORS} random vectors ({macro_cases} macro-averaged), confusion and F1 bit-identical"))
}

fn lcc_record(id: String, value: i8) -> Record {
    Record::new(id, vec!["a".into(), "b".into()], 1, Some(0), Label::new(Scheme::ScoreLcc, value).unwrap(), Corpus::Lcc).unwrap()
}

fn check_fold_laws(labels: &[i8], k: usize, seed: u64, order_seed: u64) -> Result<(), TestCaseError> {
    let records: Vec<Record> = labels.iter().enumerate().map(|(i, &l)| lcc_record(format!("r{i:03}"), l)).collect();
    let d = Dataset::new("p", Corpus::Lcc, records.clone()).unwrap();
    let f = make_folds(&d, k, seed).unwrap();

    // partition: every record in exactly one fold in range, nothing extra
    prop_assert_eq!(f.fold_of.len(), d.len());
    prop_assert!(d.records.iter().all(|r| f.fold_of.get(&r.id).is_some_and(|&x| x < k)));
    let mut seen = vec![0usize; d.len()];
    for fold in 0..k {
        let (train, test) = f.split(&d, fold);
        prop_assert_eq!(train.len() + test.len(), d.len());
        for &i in &test {
            seen[i] += 1;
        }
        let t: BTreeSet<_> = train.iter().collect();
        prop_assert!(test.iter().all(|i| !t.contains(i)));
    }
    prop_assert!(seen.iter().all(|&n| n == 1));

    // balance overall and per class
    let sizes = f.fold_sizes();
    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let mut per_class: BTreeMap<i8, Vec<usize>> = BTreeMap::new();
    for r in &d.records {
        per_class.entry(r.label.value).or_insert_with(|| vec![0; k])[f.fold_of[&r.id]] += 1;
    }
    for (class, counts) in &per_class {
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "class {} spread {:?}", class, counts);
    }
    let degraded: Vec<i8> = per_class.iter().filter(|(_, c)| c.iter().sum::<usize>() < k).map(|(&l, _)| l).collect();
    prop_assert_eq!(&f.degraded_classes, &degraded);

    // determined by (ids, labels, k, seed), not by record order
    let mut shuffled = records;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    let g = make_folds(&Dataset::new("q", Corpus::Lcc, shuffled).unwrap(), k, seed).unwrap();
    prop_assert_eq!(&f.fold_of, &g.fold_of);
    Ok(())
}

const FOLD_CASES: u32 = 200;

fn fold_laws() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: FOLD_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (prop::collection::vec(-1i8..=3, 2..150), 2usize..=12, any::<u64>(), any::<u64>())
        .prop_filter("k within dataset size", |(labels, k, _, _)| *k <= labels.len());
    runner
        .run(&strategy, |(labels, k, seed, order)| check_fold_laws(&labels, k, seed, order))
        .map_err(|e| e.to_string())?;
    Ok(format!("{FOLD_CASES} random datasets: partition, fold and class balance, degraded classes, order independence"))
}

// --- dataset statistics --------------------------------------------------------

/// Label of each MOH fixture record in aspect-group order: 194 groups with
/// only literal records, 11 with only metaphorical, 233 mixed; 1640 records,
/// 410 metaphorical.
fn moh_fixture_rows() -> Vec<(String, i8)> {
    let mut groups: Vec<Vec<i8>> = Vec::new();
    groups.extend((0..194).map(|_| vec![0]));
    groups.extend((0..11).map(|_| vec![1]));
    groups.extend((0..233).map(|_| vec![0, 1]));
    let mut metaphorical = 11 + 233;
    let mut literal = 194 + 233;
    let mut i = 0;
    while metaphorical < 410 {
        groups[205 + i % 233].push(1);
        metaphorical += 1;
        i += 1;
    }
    let mut j = 0;
    while literal < 1230 {
        let g = if j % 2 == 0 { j / 2 % 194 } else { 205 + j / 2 % 233 };
        groups[g].push(0);
        literal += 1;
        j += 1;
    }
    groups
        .into_iter()
        .enumerate()
        .flat_map(|(g, labels)| labels.into_iter().map(move |l| (format!("verb{g:03}"), l)))
        .collect()
}

fn write_moh(path: &Path, rows: &[(String, i8)]) {
    let mut body = String::from("id\tsentence\taspect_index\tlabel\n");
    for (i, (verb, label)) in rows.iter().enumerate() {
        let name = if *label == 1 { "metaphorical" } else { "literal" };
        writeln!(body, "moh{i:04}\tthey {verb} the thing{}\t1\t{name}", i % 7).unwrap();
    }
    std::fs::write(path, body).unwrap();
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mdbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("mdbench {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn dataset_statistics() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);

    let rows = moh_fixture_rows();
    write_moh(&p("moh.tsv"), &rows);
    let moh = load_dataset(p("moh.tsv"), Corpus::Moh).map_err(|e| e.to_string())?;
    let counts = moh.label_counts();
    ensure!(moh.len() == 1640 && counts.get(&1) == Some(&410), "MOH {} records, {:?} metaphorical", moh.len(), counts.get(&1));
    let groups = group_by_aspect(&moh);
    ensure!(
        (groups.len(), groups.all_literal, groups.all_metaphorical) == (438, 194, 11),
        "MOH groups {} / all literal {} / all metaphorical {}",
        groups.len(),
        groups.all_literal,
        groups.all_metaphorical
    );
    let inspect = run_cli(&["dataset", "inspect", "--dataset", p("moh.tsv").to_str().unwrap(), "--format", "moh"])?;
    ensure!(inspect.contains("1640 records"), "inspect output: {inspect}");
    ensure!(inspect.contains("438 aspect words: 194 all literal, 11 all metaphorical"), "inspect output: {inspect}");

    let mut lcc = String::from("id\tsentence\taspect_index\ttarget_index\tscore\n");
    let mut n = 0;
    for (score, count) in [(0, 493), (1, 1242), (2, 1251), (3, 1838)] {
        for _ in 0..count {
            writeln!(lcc, "lcc{n:05}\tthe storm of grief\t1\t3\t{score}").unwrap();
            n += 1;
        }
    }
    std::fs::write(p("lcc.tsv"), lcc).unwrap();
    let lcc = load_dataset(p("lcc.tsv"), Corpus::Lcc).map_err(|e| e.to_string())?;
    let want: BTreeMap<i8, usize> = [(0, 493), (1, 1242), (2, 1251), (3, 1838)].into();
    ensure!(lcc.label_counts() == want, "LCC class counts {:?}", lcc.label_counts());

    // 1639 annotations, 402 of them relabeled
    let original = &rows[..1639];
    let revised: Vec<(String, i8)> = original
        .iter()
        .enumerate()
        .map(|(i, (v, l))| (v.clone(), if i % 4 == 1 && i / 4 < 402 { 1 - l } else { *l }))
        .collect();
    write_moh(&p("orig.tsv"), original);
    write_moh(&p("rev.tsv"), &revised);
    let d = diff_annotations(
        &load_dataset(p("orig.tsv"), Corpus::Moh).map_err(|e| e.to_string())?,
        &load_dataset(p("rev.tsv"), Corpus::Moh).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(d.changed.len() == 402 && d.total == 1639, "diff {}/{}", d.changed.len(), d.total);
    ensure!(d.summary() == "402/1639 (24.53%)", "summary {:?}", d.summary());
    let cli = run_cli(&["annotate", "diff", "--original", p("orig.tsv").to_str().unwrap(), "--revised", p("rev.tsv").to_str().unwrap()])?;
    ensure!(cli.trim() == "402/1639 (24.53%)", "annotate diff printed {cli:?}");
    Ok("MOH 1640/410, LCC 493/1242/1251/1838, MOH groups 438 (194 literal, 11 metaphorical), diff 402/1639 (24.53%)".into())
}

// --- annotation -----------------------------------------------------------------

fn brute_majority(votes: &[i8], original: i8) -> i8 {
    let mut counts: BTreeMap<i8, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let Some(&top) = counts.values().max() else {
        return original;
    };
    let leaders: Vec<i8> = counts.iter().filter(|(_, &n)| n == top).map(|(&l, _)| l).collect();
    if leaders.len() == 1 {
        leaders[0]
    } else {
        original
    }
}

fn annotation_math() -> Outcome {
    let mut revisions = Vec::new();
    let mut slot = 0;
    for i in 0..100 {
        let mut rev = AnnotationRevision::new(format!("r{i:03}"), 0, 1);
        for a in ["v1", "v2", "v3"] {
            let label = if slot < 198 { 1 } else { 0 };
            rev.add_vote(a, label).map_err(|e| e.to_string())?;
            slot += 1;
        }
        revisions.push(rev);
    }
    let stats = agreement_rate(&revisions).map_err(|e| e.to_string())?;
    ensure!(stats.total_votes == 300 && stats.agreeing == 198, "{} of {} votes agree", stats.agreeing, stats.total_votes);
    ensure!(stats.rate == 0.66, "rate {:?} != 0.66", stats.rate);

    let alphabet: [i8; 5] = [-1, 0, 1, 2, 3];
    let mut sequences: Vec<Vec<i8>> = vec![vec![]];
    let mut frontier = sequences.clone();
    for _ in 0..5 {
        frontier = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |&l| [s.as_slice(), &[l]].concat()))
            .collect();
        sequences.extend(frontier.iter().cloned());
    }
    let multisets: BTreeSet<Vec<i8>> = sequences
        .iter()
        .map(|s| {
            let mut m = s.clone();
            m.sort_unstable();
            m
        })
        .collect();
    for votes in &sequences {
        for &original in &alphabet {
            let got = majority_vote(votes, original);
            let want = brute_majority(votes, original);
            ensure!(got == want, "majority_vote({votes:?}, {original}) = {got}, brute force {want}");
        }
    }
    Ok(format!(
        "198/300 -> {:?}; majority_vote matches brute force on {} multisets ({} orderings) x 5 originals",
        stats.rate,
        multisets.len(),
        sequences.len()
    ))
}

// --- determinism ------------------------------------------------------------------

/// Report files with every `"..._secs": value` line removed.
fn without_timing(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| {
            let t = l.trim_start();
            !(t.starts_with('"') && t.split_once("\":").is_some_and(|(k, _)| k.ends_with("_secs")))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("planted.tsv");
    planted_dataset(40, Corpus::Moh, 9).unwrap().save_tsv(&data).unwrap();
    let config = dir.path().join("run.json");
    let cfg = serde_json::json!({
        "dataset": data.to_str().unwrap(),
        "format": "moh",
        "task": "all",
        "k": 4,
        "seed": 13,
        "vocab_size": 300,
        "encoder.layers": 1,
        "encoder.heads": 2,
        "encoder.hidden": 16,
        "encoder.ff_dim": 32,
        "train.epochs": 2,
        "train.max_len": 24,
        "train.learning_rate": 5e-4
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        run_cli(&["cv", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
        runs.push(out);
    }
    let files: BTreeSet<_> = std::fs::read_dir(&runs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    let other: BTreeSet<_> = std::fs::read_dir(&runs[1]).unwrap().map(|e| e.unwrap().file_name()).collect();
    ensure!(files == other, "runs wrote different files: {files:?} vs {other:?}");
    ensure!(files.len() == 7, "expected 3 reports, 3 prediction dumps and a table, got {files:?}");
    let mut timing_lines = 0;
    for f in &files {
        let (a, b) = (runs[0].join(f), runs[1].join(f));
        let name = f.to_string_lossy();
        if name.ends_with(".json") {
            let full = std::fs::read_to_string(&a).unwrap();
            timing_lines += full.lines().count() - without_timing(&a).lines().count();
            ensure!(full.contains("\"config\""), "{name} does not embed the run configuration");
            ensure!(without_timing(&a) == without_timing(&b), "{name} differs between runs");
        } else {
            ensure!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), "{name} differs between runs");
        }
    }
    Ok(format!("cv ran twice: {} files identical, {timing_lines} timing lines excluded", files.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("attention normalization", attention_normalization),
        ("padding invariance", padding_invariance),
        ("overfit oracle", overfit_oracle),
        ("end-to-end learnability", end_to_end_learnability),
        ("metrics oracle", metrics_oracle),
        ("fold laws", fold_laws),
        ("dataset statistics", dataset_statistics),
        ("annotation math", annotation_math),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
