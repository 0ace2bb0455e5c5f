use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::Value;

use mdbench::annotation::{agreement_rate, diff_annotations, merge_relabel, now_millis, AnnotationStore, UnvotedPolicy};
use mdbench::attention::{cls_attention, export_heatmap, HeatmapFormat};
use mdbench::data::{filter_uncertain, load_dataset, vocabulary_words, Dataset};
use mdbench::heads::{Setting, TaskModel};
use mdbench::metrics::{
    confusion, cross_validate, f1, group_by_aspect, results_table, write_prediction_dump, Averaging, ConfusionMatrix,
    HeldOutPrediction,
};
use mdbench::tokenizer::{build_vocab, Vocab};
use mdbench::training::{fit, gradcheck, prepare_examples};
use mdbench_service::{Session, SessionConfig};

use crate::config::{resolve_seed, Overrides, RunConfig};
use crate::{DiffArgs, EvalArgs, GradcheckArgs, HeatmapArgs, InspectArgs, MergeArgs, PlantedArgs, RunArgs, ServeArgs, StatsArgs};

const MODEL_FILE: &str = "model.ckpt";
const VOCAB_FILE: &str = "vocab.txt";
const VOCAB_SIDECAR: &str = "vocab.json";
const RUN_FILE: &str = "run.json";

fn overrides(a: &RunArgs) -> anyhow::Result<Overrides> {
    let mut o = match &a.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    let mut flags = Overrides::default();
    for assignment in &a.assignments {
        flags.set_assignment(assignment)?;
    }
    let mut put = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            flags.set(key, v);
        }
    };
    put("dataset", a.dataset.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
    put("format", a.format.map(|f| Value::from(f.as_str())));
    put("task", a.task.clone().map(Value::from));
    put("k", a.k.map(Value::from));
    put("seed", a.seed.map(Value::from));
    put("train.max_len", a.max_len.map(Value::from));
    put("train.epochs", a.epochs.map(Value::from));
    put("train.batch_size", a.batch_size.map(Value::from));
    put("train.learning_rate", a.lr.map(Value::from));
    put("train.weight_decay", a.weight_decay.map(Value::from));
    put("encoder.layers", a.layers.map(Value::from));
    put("encoder.heads", a.heads.map(Value::from));
    put("encoder.hidden", a.hidden.map(Value::from));
    put("encoder.ff_dim", a.ff_dim.map(Value::from));
    put("encoder.dropout_rate", a.dropout.map(Value::from));
    put("vocab_size", a.vocab_size.map(Value::from));
    o.merge(flags);
    Ok(o)
}

/// The configured dataset with uncertain LCC records dropped.
fn load_training_data(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let Some(path) = &cfg.dataset else {
        bail!("no dataset given; pass --dataset or set \"dataset\" in the config");
    };
    let full = load_dataset(path, cfg.format).with_context(|| format!("loading {}", path.display()))?;
    let d = filter_uncertain(&full);
    if d.len() < full.len() {
        log::info!("dropped {} uncertain records", full.len() - d.len());
    }
    Ok(d)
}

fn dataset_vocab(d: &Dataset, size: usize) -> anyhow::Result<Vocab> {
    Ok(build_vocab(vocabulary_words(d), size)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Artifact<'a, T> {
    config: &'a RunConfig,
    report: T,
}

pub fn train(a: &RunArgs) -> anyhow::Result<ExitCode> {
    let o = overrides(a)?;
    let [setting] = o.settings()?[..] else {
        bail!("train needs a single --task");
    };
    let Some(dir) = &a.checkpoint else {
        bail!("train needs --checkpoint DIR to save the model");
    };
    let mut cfg = o.resolve(setting)?;
    let mut data = load_training_data(&cfg)?;
    data.records.sort_by(|x, y| x.id.cmp(&y.id));
    let vocab = dataset_vocab(&data, cfg.vocab_size)?;
    cfg.encoder.vocab_size = vocab.len();
    let mut model = TaskModel::init(&cfg.encoder, cfg.task_kind())?;
    log::info!("training {} on {} records ({} parameters)", setting, data.len(), cfg.encoder.param_count());
    let report = fit(&mut model, &vocab, &data.records, &cfg.train)?;

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    model.save(dir.join(MODEL_FILE))?;
    vocab.save(dir.join(VOCAB_FILE), dir.join(VOCAB_SIDECAR))?;
    write_json(&dir.join(RUN_FILE), &cfg)?;
    emit_json(a.out.as_deref(), &Artifact { config: &cfg, report })?;
    Ok(ExitCode::SUCCESS)
}

struct Checkpoint {
    cfg: RunConfig,
    model: TaskModel,
    vocab: Vocab,
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<Checkpoint> {
    let run = fs::read_to_string(dir.join(RUN_FILE)).with_context(|| format!("reading {}", dir.join(RUN_FILE).display()))?;
    let cfg: RunConfig = serde_json::from_str(&run).context("parsing run.json")?;
    let model = TaskModel::load(dir.join(MODEL_FILE))?;
    let vocab = Vocab::load(dir.join(VOCAB_FILE), dir.join(VOCAB_SIDECAR))?;
    if vocab.len() != model.encoder.cfg.vocab_size {
        bail!("vocabulary has {} entries, model expects {}", vocab.len(), model.encoder.cfg.vocab_size);
    }
    Ok(Checkpoint { cfg, model, vocab })
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    dataset: String,
    records: usize,
    task: Setting,
    averaging: Averaging,
    f1: f64,
    confusion: ConfusionMatrix,
    zero_support_classes: Vec<usize>,
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let format = a.format.unwrap_or(ck.cfg.format);
    if format.scheme() != ck.cfg.format.scheme() {
        bail!("checkpoint was trained on {} labels, dataset is {}", ck.cfg.format, format);
    }
    let mut data = filter_uncertain(&load_dataset(&a.dataset, format)?);
    data.records.sort_by(|x, y| x.id.cmp(&y.id));
    let task = ck.model.task;
    let examples = prepare_examples(&task, &ck.vocab, &data.records, ck.cfg.train.max_len)?;
    let mut cm = ConfusionMatrix::new(task.num_classes);
    let mut rows = Vec::with_capacity(examples.len());
    for ex in &examples {
        let p = ck.model.predict(&ex.encoding)?;
        cm.merge(&confusion(&p.labels, &ex.gold, task.num_classes)?);
        rows.push(HeldOutPrediction {
            id: ex.id.clone(),
            fold: 0,
            gold: ex.gold.clone(),
            pred: p.labels,
            logits: p.logits,
        });
    }
    if let Some(path) = &a.predictions {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_prediction_dump(std::io::BufWriter::new(file), task.setting, &rows)?;
    }
    let averaging = Averaging::for_classes(task.num_classes);
    let report = EvalReport {
        checkpoint: a.checkpoint.clone(),
        dataset: data.name.clone(),
        records: data.len(),
        task: task.setting,
        averaging,
        f1: f1(&cm, averaging),
        zero_support_classes: cm.zero_support_classes(),
        confusion: cm,
    };
    emit_json(a.out.as_deref(), &Artifact { config: &ck.cfg, report })?;
    Ok(ExitCode::SUCCESS)
}

pub fn cv(a: &RunArgs) -> anyhow::Result<ExitCode> {
    let o = overrides(a)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("mdbench-cv"));
    let configs = o
        .settings()?
        .into_iter()
        .map(|s| o.resolve(s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let data = load_training_data(&configs[0])?;
    let vocab = dataset_vocab(&data, configs[0].vocab_size)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut reports = Vec::new();
    for mut cfg in configs {
        cfg.encoder.vocab_size = vocab.len();
        log::info!("{}-fold cross validation, {} on {}", cfg.k, cfg.task, data.name);
        let report = cross_validate(&data, cfg.task, &vocab, &cfg.encoder, &cfg.train, cfg.k, cfg.seed)?;
        let stem = format!("{}_{}", data.corpus, cfg.task.short_name().to_lowercase());
        write_json(&out.join(format!("{stem}.json")), &Artifact { config: &cfg, report: &report })?;
        let preds = fs::File::create(out.join(format!("{stem}_predictions.tsv")))?;
        report.write_predictions(std::io::BufWriter::new(preds))?;
        println!("{} {}: mean F1 {:.4} over {} folds", data.name, cfg.task.short_name(), report.mean_f1, report.k);
        reports.push(report);
    }
    let table = results_table(&reports);
    fs::write(out.join("results.md"), &table)?;
    println!("\n{table}");
    Ok(ExitCode::SUCCESS)
}

pub fn heatmap(a: &HeatmapArgs) -> anyhow::Result<ExitCode> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (words, aspect) = match (&a.sentence, &a.id, &a.dataset) {
        (Some(s), _, _) => (s.split_whitespace().map(str::to_string).collect::<Vec<_>>(), a.aspect),
        (None, Some(id), Some(path)) => {
            let d = load_dataset(path, a.format.unwrap_or(ck.cfg.format))?;
            let r = d.get(id).with_context(|| format!("no record {id:?} in {}", path.display()))?;
            (r.sentence.clone(), a.aspect.or(Some(r.aspect_index)))
        }
        _ => bail!("heatmap needs --sentence, or --id with --dataset"),
    };
    if words.is_empty() {
        bail!("empty sentence");
    }
    let profile = cls_attention(&ck.model, &ck.vocab, &words, aspect, ck.cfg.train.max_len)?;
    let format = match a.out.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("svg") => HeatmapFormat::Svg,
        _ => HeatmapFormat::Json,
    };
    export_heatmap(&profile, &a.out, format)?;
    if let Some((i, s)) = profile.scores.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)) {
        println!("predicted {}; most attended: {:?} ({s:.3})", profile.predicted_label, profile.words[i]);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<ExitCode> {
    let original = load_dataset(&a.original, a.format)?;
    let revised = load_dataset(&a.revised, a.format)?;
    let cfg = SessionConfig {
        annotators: a.annotators.clone(),
        sample_size: a.sample_size,
        seed: resolve_seed(a.seed, a.config.as_deref())?,
        static_dir: a.static_dir.clone(),
    };
    let session = Session::open(&a.log, original, &revised, cfg)?;
    log::info!("{} items in the validation sample", session.sample().len());
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("invalid --host/--port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(mdbench_service::serve(addr, Arc::new(session)))?;
    Ok(ExitCode::SUCCESS)
}

pub fn diff(a: &DiffArgs) -> anyhow::Result<ExitCode> {
    let original = load_dataset(&a.original, a.format)?;
    let revised = load_dataset(&a.revised, a.format)?;
    let d = diff_annotations(&original, &revised)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&d)?);
    } else {
        println!("{}", d.summary());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn merge(a: &MergeArgs) -> anyhow::Result<ExitCode> {
    let policy = match a.policy.as_str() {
        "keep-revision" => UnvotedPolicy::KeepRevision,
        "keep-original" => UnvotedPolicy::KeepOriginal,
        other => bail!("unknown policy {other:?}; expected keep-revision or keep-original"),
    };
    let original = load_dataset(&a.original, a.format)?;
    let mut store = AnnotationStore::open(&a.log, &original)?;
    let revisions = store.merge(policy, "merge", now_millis())?;
    let merged = merge_relabel(&original, &revisions)?;
    merged.save_tsv(&a.out)?;
    write_json(&a.out.with_extension("provenance.json"), &merged.provenance)?;
    let changed = revisions.iter().filter(|r| r.final_label != Some(r.original_label)).count();
    println!("merged {} revisions, {changed} labels changed", revisions.len());
    Ok(ExitCode::SUCCESS)
}

pub fn stats(a: &StatsArgs) -> anyhow::Result<ExitCode> {
    let original = load_dataset(&a.original, a.format)?;
    let store = AnnotationStore::open(&a.log, &original)?;
    let stats = agreement_rate(&store.state().list())?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(ExitCode::SUCCESS)
}

pub fn inspect(a: &InspectArgs) -> anyhow::Result<ExitCode> {
    let d = load_dataset(&a.dataset, a.format)?;
    let groups = group_by_aspect(&d);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({
            "dataset": d.name,
            "records": d.len(),
            "labels": d.label_counts(),
            "aspect_groups": groups,
        }))?);
        return Ok(ExitCode::SUCCESS);
    }
    println!("{} ({}): {} records", d.name, d.corpus.display_name(), d.len());
    for (label, n) in d.label_counts() {
        println!("  {:>14} {n}", d.scheme.label_name(label));
    }
    println!(
        "{} aspect words: {} all literal, {} all metaphorical, {} mixed",
        groups.len(),
        groups.all_literal,
        groups.all_metaphorical,
        groups.mixed
    );
    Ok(ExitCode::SUCCESS)
}

pub fn planted(a: &PlantedArgs) -> anyhow::Result<ExitCode> {
    let seed = resolve_seed(a.seed, None)?;
    let d = mdbench::synth::planted_dataset(a.n, a.format, seed)?;
    d.save_tsv(&a.out)?;
    println!("wrote {} records to {}", d.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<ExitCode> {
    let seed = resolve_seed(a.seed, a.config.as_deref())?;
    let checks = gradcheck::check_all(seed, a.eps);
    println!("{:<18} {:>14} {:>8}  worst tensor", "block", "max rel error", "coords");
    for c in &checks {
        let mark = if c.passed() { "" } else { "  FAIL" };
        println!("{:<18} {:>14.3e} {:>8}  {}{mark}", c.block, c.max_rel_error, c.coordinates, c.worst);
    }
    if checks.iter().all(|c| c.passed()) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed (tolerance {:e})", gradcheck::TOLERANCE);
        Ok(ExitCode::FAILURE)
    }
}

