use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use setvec_core::data::PhantomConfig;
use setvec_core::train::TrainConfig;
use setvec_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Digits,
    Phantom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Directory with the IDX digit files.
    pub mnist_dir: PathBuf,
    /// Where bag datasets live; defaults to the output directory.
    pub dataset_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub phantom: PhantomConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Digits,
            mnist_dir: PathBuf::from("data/mnist"),
            dataset_dir: None,
            n_train: 2000,
            n_test: 500,
            min_size: 20,
            max_size: 50,
            phantom: PhantomConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lambda1: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            lambda1: vec![0.0, 100.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Test,
}

impl EvalSplit {
    pub fn dir_name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: EvalSplit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Test,
        }
    }
}

/// Everything a command needs. `seed` is the single source of randomness;
/// it overrides `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            train: TrainConfig::digits(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn dataset_dir(&self, out: &Path) -> PathBuf {
        self.data.dataset_dir.clone().unwrap_or_else(|| out.to_path_buf())
    }
}

/// Sets `path` (dot separated) inside `root` to `raw`, parsed as JSON when
/// possible and taken as a string otherwise.
pub fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Usage(format!("bad override key `{path}`")));
    }
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Usage(format!("`{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys is non-empty")
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
/// The training defaults follow `data.kind`: the phantom preset for
/// phantoms, the digit preset otherwise.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let over = match file {
        Some(f) => {
            let text = std::fs::read_to_string(f).map_err(|e| Error::Path {
                path: f.display().to_string(),
                hint: e.to_string(),
            })?;
            Some(
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::Usage(format!("{}: invalid JSON: {e}", f.display())))?,
            )
        }
        None => None,
    };
    let layered = |base: RunConfig| -> Result<Value> {
        let mut v = serde_json::to_value(base)?;
        if let Some(o) = &over {
            merge(&mut v, o.clone());
        }
        for s in sets {
            let (k, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{s}`")))?;
            set_path(&mut v, k.trim(), raw.trim())?;
        }
        if let Some(seed) = seed {
            set_path(&mut v, "seed", &seed.to_string())?;
        }
        Ok(v)
    };
    let mut v = layered(RunConfig::default())?;
    if v["data"]["kind"] == "phantom" {
        v = layered(RunConfig {
            train: TrainConfig::phantom(),
            ..RunConfig::default()
        })?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(v).map_err(|e| Error::Usage(format!("invalid configuration: {e}")))?;
    cfg.train.seed = cfg.seed;
    if cfg.data.min_size > cfg.data.max_size {
        return Err(Error::Usage(format!(
            "data.min_size {} exceeds data.max_size {}",
            cfg.data.min_size, cfg.data.max_size
        )));
    }
    cfg.train.validate()?;
    Ok(cfg)
}
