use std::ops::ControlFlow;

use mdbench::data::{Corpus, Scheme};
use mdbench::encoder::EncoderConfig;
use mdbench::heads::{Setting, TaskKind, TaskModel};
use mdbench::metrics::cross_validate;
use mdbench::synth::{planted_dataset, planted_lexicon};
use mdbench::tokenizer::{build_vocab, Vocab};
use mdbench::training::{fit, fit_examples, prepare_examples, TrainConfig};
use mdbench::Error;

fn vocab() -> Vocab {
    build_vocab(planted_lexicon(), 300).unwrap()
}

fn tiny(vocab: &Vocab, seed: u64) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        heads: 2,
        hidden: 16,
        ff_dim: 32,
        max_len: 24,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
        seed,
    }
}

fn short_run(task: &TaskKind) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 5e-4,
        max_len: 24,
        ..TrainConfig::for_task(task)
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let v = vocab();
    for (corpus, setting) in [
        (Corpus::Moh, Setting::SentenceLevel),
        (Corpus::Lcc, Setting::WordLevel),
        (Corpus::Moh, Setting::SequenceLabeling),
    ] {
        let data = planted_dataset(40, corpus, 2).unwrap();
        let task = TaskKind::for_scheme(setting, corpus.scheme());
        let model = TaskModel::init(&tiny(&v, 1), task).unwrap();
        let examples = prepare_examples(&task, &v, &data.records, 24).unwrap();
        let mut stats = None;
        // one epoch at a vanishing learning rate leaves the init loss
        let cfg = TrainConfig { epochs: 1, learning_rate: 1e-12, ..short_run(&task) };
        let mut m = model.clone();
        fit_examples(&mut m, &examples, &cfg, |e| {
            stats = Some(*e);
            ControlFlow::Continue(())
        })
        .unwrap();
        let uniform = (task.num_classes as f64).ln();
        let loss = stats.unwrap().mean_loss;
        assert!((loss - uniform).abs() < 0.1 * uniform, "{setting}: loss {loss} vs ln {} = {uniform}", task.num_classes);
    }
}

#[test]
fn training_is_reproducible() {
    let v = vocab();
    let data = planted_dataset(24, Corpus::Moh, 4).unwrap();
    let task = TaskKind::for_scheme(Setting::WordLevel, Scheme::BinaryMoh);
    let run = |seed: u64| {
        let mut m = TaskModel::init(&tiny(&v, 3), task).unwrap();
        let cfg = TrainConfig { seed, ..short_run(&task) };
        fit(&mut m, &v, &data.records, &cfg).unwrap()
    };
    let a = run(7);
    let b = run(7);
    assert_eq!(a.param_checksum, b.param_checksum);
    assert_eq!(a.epoch_loss, b.epoch_loss);
    assert_eq!(a.epoch_loss.len(), 2);
    assert_ne!(run(8).param_checksum, a.param_checksum);
}

#[test]
fn loss_falls_on_separable_data() {
    let v = vocab();
    let data = planted_dataset(32, Corpus::Moh, 6).unwrap();
    let task = TaskKind::for_scheme(Setting::SentenceLevel, Scheme::BinaryMoh);
    let enc = EncoderConfig { layers: 2, hidden: 32, ff_dim: 64, ..tiny(&v, 5) };
    let mut m = TaskModel::init(&enc, task).unwrap();
    let cfg = TrainConfig { epochs: 30, learning_rate: 1e-3, ..short_run(&task) };
    let r = fit(&mut m, &v, &data.records, &cfg).unwrap();
    assert!(r.epoch_loss.last().unwrap() < &(0.5 * r.epoch_loss[0]), "{:?}", r.epoch_loss);
}

#[test]
fn observer_can_stop_training() {
    let v = vocab();
    let data = planted_dataset(16, Corpus::Moh, 1).unwrap();
    let task = TaskKind::for_scheme(Setting::SentenceLevel, Scheme::BinaryMoh);
    let examples = prepare_examples(&task, &v, &data.records, 24).unwrap();
    let mut m = TaskModel::init(&tiny(&v, 0), task).unwrap();
    let cfg = TrainConfig { epochs: 10, ..short_run(&task) };
    let r = fit_examples(&mut m, &examples, &cfg, |e| if e.epoch == 2 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }).unwrap();
    assert_eq!(r.epoch_loss.len(), 3);
    assert!(r.stopped_early);
}

#[test]
fn invalid_configs_are_rejected() {
    let v = vocab();
    let data = planted_dataset(16, Corpus::Moh, 1).unwrap();
    let task = TaskKind::for_scheme(Setting::SentenceLevel, Scheme::BinaryMoh);
    let mut m = TaskModel::init(&tiny(&v, 0), task).unwrap();
    for bad in [
        TrainConfig { epochs: 0, ..short_run(&task) },
        TrainConfig { batch_size: 0, ..short_run(&task) },
        TrainConfig { learning_rate: 0.0, ..short_run(&task) },
        TrainConfig { weight_decay: -1.0, ..short_run(&task) },
    ] {
        assert!(matches!(fit(&mut m, &v, &data.records, &bad), Err(Error::Config(_))), "{bad:?}");
    }
    assert!(fit(&mut m, &v, &[], &short_run(&task)).is_err());
    let mut enc = tiny(&v, 0);
    enc.heads = 3;
    assert!(TaskModel::init(&enc, task).is_err());
}

#[test]
fn cross_validation_covers_every_record_once() {
    let v = vocab();
    let data = planted_dataset(30, Corpus::Lcc, 8).unwrap();
    let task = TaskKind::for_scheme(Setting::SentenceLevel, Scheme::ScoreLcc);
    let cfg = TrainConfig { epochs: 1, ..short_run(&task) };
    let report = cross_validate(&data, Setting::SentenceLevel, &v, &tiny(&v, 2), &cfg, 3, 4).unwrap();
    assert_eq!(report.num_classes, 4);
    assert_eq!(report.folds.len(), 3);
    assert_eq!(report.predictions.len(), 30);
    let ids: Vec<_> = report.predictions.iter().map(|p| p.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(ids, sorted);
    assert_eq!(report.folds.iter().map(|f| f.test_size).sum::<usize>(), 30);
    assert!(report.folds.iter().all(|f| f.confusion.total() == f.test_size as u64));
    let mean = report.fold_f1.iter().sum::<f64>() / 3.0;
    assert_eq!(report.mean_f1, mean);

    // same inputs, same report apart from timing
    let again = cross_validate(&data, Setting::SentenceLevel, &v, &tiny(&v, 2), &cfg, 3, 4).unwrap();
    assert_eq!(again.predictions, report.predictions);
    assert_eq!(again.fold_f1, report.fold_f1);
}
