//! Run configuration, read from a TOML file.
//!
//! Any key can be overridden from the environment with `RAGPIPE_` followed
//! by the upper-cased key path joined with `__`, e.g.
//! `RAGPIPE_RETRIEVAL__THRESHOLD=0.7`. Relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bucketer::{BucketConfig, BucketMode, DEFAULT_BUCKETS};
use crate::corpus::SplitMode;
use crate::corruptor::{CorruptionSpec, MaskScope, MaskSchedule, MAX_MASK_RATIO};
use crate::embedder::DEFAULT_DIMENSION;
use crate::error::{Error, Result};
use crate::genadapter::GeneratorContract;
use crate::kbstore::{DEFAULT_MAX_INPUT_LEN, DEFAULT_THRESHOLD};
use crate::metrics::CiderVariant;

pub const ENV_PREFIX: &str = "RAGPIPE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub buckets: BucketsConfig,
    #[serde(default)]
    pub generator: GeneratorContract,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Labeled corpus to split into train/val.
    pub corpus: PathBuf,
    /// Unlabeled test corpus.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Token-per-line base vocabulary; a synthetic base is used if absent.
    #[serde(default)]
    pub base_vocab: Option<PathBuf>,
    /// Mask schedule state; the initial ratio is used while it does not exist.
    #[serde(default)]
    pub schedule_state: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: 0.9,
            seed: 17,
            mode: SplitMode::Ranked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub synthetic_base_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            synthetic_base_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub lambda: f64,
    pub max_span: usize,
    pub seed: u64,
    pub scope: MaskScope,
    pub initial_ratio: f64,
    pub step: f64,
    pub cap: f64,
    pub probe_interval: u32,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            lambda: 3.0,
            max_span: 10,
            seed: 7,
            scope: MaskScope::All,
            initial_ratio: 0.3,
            step: 0.05,
            cap: MAX_MASK_RATIO,
            probe_interval: 10,
        }
    }
}

impl CorruptionConfig {
    pub fn schedule(&self) -> Result<MaskSchedule> {
        MaskSchedule::new(self.initial_ratio, self.step, self.cap, self.probe_interval)
    }

    pub fn spec(&self, mask_ratio: f64) -> CorruptionSpec {
        CorruptionSpec {
            mask_ratio,
            poisson_lambda: self.lambda,
            max_span: self.max_span,
            seed: self.seed,
            scope: self.scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub dimension: usize,
    /// Per-iteration external embedding files; empty means built-in tf-idf.
    pub external: Vec<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            dimension: DEFAULT_DIMENSION,
            external: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub threshold: f64,
    pub iterations: u32,
    pub max_input_len: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            threshold: DEFAULT_THRESHOLD,
            iterations: 2,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BucketsConfig {
    pub n: usize,
    pub mode: BucketMode,
    pub boundaries: Vec<f64>,
    /// Reuse boundaries saved by an earlier run instead of recomputing them.
    pub frozen_boundaries: Option<PathBuf>,
}

impl Default for BucketsConfig {
    fn default() -> Self {
        BucketsConfig {
            n: DEFAULT_BUCKETS,
            mode: BucketMode::EqualFrequency,
            boundaries: Vec::new(),
            frozen_boundaries: None,
        }
    }
}

impl BucketsConfig {
    pub fn bucket_config(&self) -> Result<BucketConfig> {
        if let Some(path) = &self.frozen_boundaries {
            let saved = BucketConfig::read(path)?;
            return BucketConfig::fixed(saved.boundaries);
        }
        let cfg = BucketConfig {
            n_buckets: self.n,
            mode: self.mode,
            boundaries: self.boundaries.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cider: CiderVariant,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Extra prediction files fused with the run's own validation predictions.
    pub predictions: Vec<PathBuf>,
}

fn apply_override(root: &mut toml::Table, path: &[String], raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override path crosses non-table key `{key}`")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__"))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_ascii_lowercase)
                .collect();
            apply_override(&mut root, &path, &value)?;
        }
        let mut cfg: PipelineConfig =
            toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    /// Load, apply `RAGPIPE_*` environment overrides, resolve paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, std::env::vars())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.corpus);
        fix(&mut paths.out_dir);
        for p in [&mut paths.test, &mut paths.base_vocab, &mut paths.schedule_state, &mut self.buckets.frozen_boundaries]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.embedder.external.iter_mut().for_each(fix);
        self.ensemble.predictions.iter_mut().for_each(fix);
    }

    /// Range and path checks; nothing is written.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} `{}` does not exist", p.display())))
            }
        };
        must_exist(&self.paths.corpus, "corpus")?;
        if let Some(p) = &self.paths.test {
            must_exist(p, "test corpus")?;
        }
        if let Some(p) = &self.paths.base_vocab {
            must_exist(p, "base vocabulary")?;
        }
        if let Some(p) = &self.buckets.frozen_boundaries {
            must_exist(p, "frozen boundaries")?;
        }
        for p in &self.embedder.external {
            must_exist(p, "external embeddings")?;
        }
        for p in &self.ensemble.predictions {
            must_exist(p, "ensemble predictions")?;
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad(format!("split.ratio {} must lie in (0, 1)", self.split.ratio));
        }
        if !(-1.0..=1.0).contains(&self.retrieval.threshold) {
            return bad(format!("retrieval.threshold {} must lie in [-1, 1]", self.retrieval.threshold));
        }
        if self.retrieval.iterations == 0 {
            return bad("retrieval.iterations must be at least 1".into());
        }
        if self.retrieval.max_input_len == 0 {
            return bad("retrieval.max_input_len must be positive".into());
        }
        if self.embedder.dimension == 0 {
            return bad("embedder.dimension must be positive".into());
        }
        let schedule = self.corruption.schedule()?;
        self.corruption.spec(schedule.current_ratio).validate()?;
        if self.buckets.frozen_boundaries.is_none() {
            self.buckets.bucket_config()?;
        }
        self.generator.validate()?;
        Ok(())
    }
}
