//! Run configuration: defaults, a flat dotted-key JSON file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use mdbench::data::Corpus;
use mdbench::encoder::EncoderConfig;
use mdbench::heads::{Setting, TaskKind};
use mdbench::training::TrainConfig;

pub const SEED_ENV: &str = "MDBENCH_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub format: Corpus,
    pub task: Setting,
    pub k: usize,
    /// Master seed; fold assignment uses it directly, and the encoder and
    /// training seeds default to it.
    pub seed: u64,
    /// Target size of the vocabulary built from the training data.
    pub vocab_size: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    fn defaults(setting: Setting) -> Self {
        let task = TaskKind::for_scheme(setting, Corpus::Moh.scheme());
        Self {
            dataset: None,
            format: Corpus::Moh,
            task: setting,
            k: 10,
            seed: 0,
            vocab_size: 8000,
            encoder: EncoderConfig::desk(0),
            train: TrainConfig::for_task(&task),
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        TaskKind::for_scheme(self.task, self.format.scheme())
    }
}

/// Key/value overrides in application order: file first, flags second.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    values: BTreeMap<String, Value>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(map) = value else {
            bail!("config {} must be a JSON object", path.display());
        };
        let mut out = Self::default();
        for (k, v) in map {
            if v.is_object() {
                bail!("config key {k:?}: nested objects are not allowed, use dotted keys");
            }
            out.values.insert(k, v);
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    /// `key=value`, where the value is parsed as JSON and falls back to a
    /// plain string.
    pub fn set_assignment(&mut self, assignment: &str) -> anyhow::Result<()> {
        let Some((key, raw)) = assignment.split_once('=') else {
            bail!("--set expects key=value, got {assignment:?}");
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn merge(&mut self, later: Overrides) {
        self.values.extend(later.values);
    }

    /// Settings named by the `task` key; `all` (the default) expands to the
    /// three settings.
    pub fn settings(&self) -> anyhow::Result<Vec<Setting>> {
        match self.values.get("task") {
            None => Ok(Setting::ALL.to_vec()),
            Some(Value::String(s)) if s == "all" => Ok(Setting::ALL.to_vec()),
            Some(Value::String(s)) => Ok(vec![s.parse()?]),
            Some(other) => bail!("task must be a string, got {other}"),
        }
    }

    /// Resolves against the defaults of `setting`. The seed falls back to
    /// the environment, then 0.
    pub fn resolve(&self, setting: Setting) -> anyhow::Result<RunConfig> {
        let mut flat = BTreeMap::new();
        flatten(&serde_json::to_value(RunConfig::defaults(setting))?, "", &mut flat);
        for (key, value) in &self.values {
            if key == "task" {
                continue;
            }
            if !flat.contains_key(key) {
                bail!("unknown config key {key:?}");
            }
            flat.insert(key.clone(), value.clone());
        }
        if !self.values.contains_key("seed") {
            flat.insert("seed".into(), Value::from(env_seed()?.unwrap_or(0)));
        }
        let seed = flat["seed"].clone();
        for derived in ["encoder.seed", "train.seed"] {
            if !self.values.contains_key(derived) {
                flat.insert(derived.into(), seed.clone());
            }
        }
        if !self.values.contains_key("encoder.max_len") {
            let len = flat["train.max_len"].clone();
            flat.insert("encoder.max_len".into(), len);
        }
        flat.insert("task".into(), serde_json::to_value(setting)?);
        let cfg: RunConfig = serde_json::from_value(unflatten(flat)).context("invalid configuration")?;
        cfg.train.validate()?;
        if cfg.train.max_len > cfg.encoder.max_len {
            bail!(
                "train.max_len {} exceeds encoder.max_len {}",
                cfg.train.max_len,
                cfg.encoder.max_len
            );
        }
        Ok(cfg)
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not a seed"))?)),
        Err(_) => Ok(None),
    }
}

/// Seed for commands without a full run configuration: flag, then the
/// config file's `seed`, then the environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<&Path>) -> anyhow::Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(path) = config {
        if let Some(v) = Overrides::from_file(path)?.get("seed") {
            return v.as_u64().with_context(|| format!("seed must be a non-negative integer, got {v}"));
        }
    }
    Ok(env_seed()?.unwrap_or(0))
}

fn flatten(value: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, &key, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), value);
                break;
            }
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config keys form a tree");
        }
    }
    Value::Object(root)
}
