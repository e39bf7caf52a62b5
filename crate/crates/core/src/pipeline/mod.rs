//! End-to-end driver: split → vocab → pretrain-corpus → (embed → kb →
//! augment) × iterations → bucket → generate → eval → ensemble.
//!
//! Every stage reads and writes files under the run directory and is
//! recorded in `manifest.json`; unchanged stages are skipped on rerun.

pub mod config;
pub mod manifest;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::bucketer::{bucket_samples, fit_bucket_embedder, inference_prompt};
use crate::corpus::{parse_corpus, split_corpus, write_corpus, write_text, Sample, TokenSeq};
use crate::corruptor::{corrupt_corpus, write_dae, MaskSchedule};
use crate::embedder::{write_embeddings, EmbeddingTable, EmbeddingVector, TfIdfEmbedder};
use crate::ensemble::{fuse_corpus, DfSource};
use crate::error::{Error, Result};
use crate::genadapter::{predict, read_predictions, write_predictions, Prediction};
use crate::kbstore::{augment, build_kb, KeySource, KnowledgeBase};
use crate::metrics::{evaluate, CiderVariant, EvalReport};
use crate::vocab::{corpus_tokens, extend_vocab, Vocabulary};

pub use config::PipelineConfig;
pub use manifest::{FileHash, Manifest, StageRecord};
pub use synth::{make_synthetic_corpus, write_synthetic_corpus, SynthConfig, SynthStats};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Validation(Error),
    #[error("stage `{stage}` failed")]
    Stage {
        stage: String,
        #[source]
        source: Error,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub report: EvalReport,
    pub fused_report: EvalReport,
}

struct Runner {
    root: PathBuf,
    previous: Manifest,
    current: Manifest,
    executed: Vec<String>,
    skipped: Vec<String>,
    timings: BTreeMap<String, f64>,
}

fn stage_err(stage: &str) -> impl Fn(Error) -> PipelineError + '_ {
    move |source| PipelineError::Stage {
        stage: stage.to_string(),
        source,
    }
}

impl Runner {
    fn new(root: PathBuf) -> Self {
        let previous = Manifest::read_or_default(root.join(MANIFEST_FILE));
        Runner {
            root,
            previous,
            current: Manifest::default(),
            executed: Vec::new(),
            skipped: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    fn stage(
        &mut self,
        name: &str,
        params: serde_json::Value,
        inputs: &[PathBuf],
        outputs: &[String],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<(), PipelineError> {
        let fail = stage_err(name);
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    file: manifest::file_label(p),
                    sha256: manifest::hash_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(&fail)?;
        let input_hash = manifest::input_hash(name, &params, &inputs).map_err(&fail)?;

        if let Some(prev) = self.previous.get(name) {
            let same_outputs = prev.outputs.iter().map(|o| &o.file).eq(outputs.iter());
            if prev.input_hash == input_hash && same_outputs && prev.outputs_intact(&self.root) {
                self.current.stages.push(prev.clone());
                self.skipped.push(name.to_string());
                return self.current.write(self.path(MANIFEST_FILE)).map_err(&fail);
            }
        }

        let start = Instant::now();
        body().map_err(&fail)?;
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        let outputs = outputs
            .iter()
            .map(|o| {
                Ok(FileHash {
                    file: o.clone(),
                    sha256: manifest::hash_file(&self.path(o))?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(&fail)?;
        self.current.stages.push(StageRecord {
            stage: name.to_string(),
            input_hash,
            params,
            inputs,
            outputs,
        });
        self.executed.push(name.to_string());
        self.current.write(self.path(MANIFEST_FILE)).map_err(&fail)
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn read_split(root: &Path, file: &str) -> Result<Vec<Sample>> {
    parse_corpus(root.join(file))
}

/// Split, plus the optional test corpus copied in normalized form.
fn split_stage(cfg: &PipelineConfig, root: &Path) -> Result<()> {
    let samples = parse_corpus(&cfg.paths.corpus)?;
    let assignment = split_corpus(&samples, cfg.split.ratio, cfg.split.seed, cfg.split.mode)?;
    let (train, val) = assignment.apply(&samples);
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("split left train or validation empty"));
    }
    if let Some(s) = val.iter().chain(&train).find(|s| !s.has_diagnosis()) {
        return Err(Error::MissingDiagnosis(s.id.clone()));
    }
    let test = match &cfg.paths.test {
        Some(p) => parse_corpus(p)?,
        None => Vec::new(),
    };
    let labeled: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let clashes: Vec<&str> = test.iter().map(|s| s.id.as_str()).filter(|id| labeled.contains(id)).collect();
    if !clashes.is_empty() {
        return Err(Error::IdMismatch(format!("test ids also in the labeled corpus: {}", clashes.join(", "))));
    }
    write_corpus(root.join("train.jsonl"), &train)?;
    write_corpus(root.join("val.jsonl"), &val)?;
    write_corpus(root.join("test.jsonl"), &test)
}

fn vocab_stage(cfg: &PipelineConfig, root: &Path) -> Result<()> {
    let base = match &cfg.paths.base_vocab {
        Some(p) => Vocabulary::read_base(p)?,
        None => Vocabulary::synthetic_base(cfg.vocab.synthetic_base_size),
    };
    let mut seqs: Vec<TokenSeq> = Vec::new();
    for file in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        for s in read_split(root, file)? {
            seqs.extend([s.clinical, s.description, s.diagnosis]);
            seqs.extend(s.retrieved);
        }
    }
    extend_vocab(&base, &corpus_tokens(&seqs), cfg.buckets.n)?.write(root.join("vocab.txt"))
}

fn mask_ratio(cfg: &PipelineConfig) -> Result<f64> {
    match &cfg.paths.schedule_state {
        Some(p) if p.exists() => Ok(MaskSchedule::read(p)?.current_ratio),
        _ => Ok(cfg.corruption.schedule()?.current_ratio),
    }
}

fn embed_stage(cfg: &PipelineConfig, root: &Path, iteration: u32, out: &str) -> Result<()> {
    let mut all = Vec::new();
    for file in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        all.extend(read_split(root, file)?);
    }
    let rows: Vec<(String, EmbeddingVector)> = if cfg.embedder.external.is_empty() {
        let train = read_split(root, "train.jsonl")?;
        let embedder = TfIdfEmbedder::fit(train.iter().map(|s| &s.description), cfg.embedder.dimension)?;
        all.iter().map(|s| (s.id.clone(), embedder.embed(&s.description))).collect()
    } else {
        let ext = &cfg.embedder.external;
        let table = EmbeddingTable::read(&ext[(iteration as usize - 1).min(ext.len() - 1)])?;
        table.check_covers(all.iter().map(|s| s.id.as_str()))?;
        all.iter()
            .map(|s| (s.id.clone(), table.get(&s.id).expect("coverage checked").clone()))
            .collect()
    };
    write_embeddings(root.join(out), &rows)
}

fn bucket_stage(cfg: &PipelineConfig, root: &Path, train: &str, val: &str, test: &str) -> Result<()> {
    let bucket_cfg = cfg.buckets.bucket_config()?;
    let train = read_split(root, train)?;
    let embedder = fit_bucket_embedder(&train, cfg.embedder.dimension)?;
    let (bucketed, finalized) = bucket_samples(&train, &embedder, &bucket_cfg)?;
    let prompt = inference_prompt(&finalized);
    let with_prompt = |file: &str| -> Result<Vec<Sample>> {
        Ok(read_split(root, file)?
            .into_iter()
            .map(|s| Sample {
                bucket: Some(prompt),
                ..s
            })
            .collect())
    };
    write_corpus(root.join("train_bucketed.jsonl"), &bucketed)?;
    write_corpus(root.join("val_bucketed.jsonl"), &with_prompt(val)?)?;
    write_corpus(root.join("test_bucketed.jsonl"), &with_prompt(test)?)?;
    finalized.write(root.join("bounds.json"))
}

fn generate_stage(cfg: &PipelineConfig, root: &Path) -> Result<()> {
    let vocab = Vocabulary::read(root.join("vocab.txt"))?;
    let max_len = cfg.retrieval.max_input_len;
    for (input, output) in [("val_bucketed.jsonl", "preds_val.jsonl"), ("test_bucketed.jsonl", "preds_test.jsonl")] {
        let samples = read_split(root, input)?;
        let preds = if samples.is_empty() {
            Vec::new()
        } else {
            predict(&samples, &vocab, &cfg.generator, max_len)?
        };
        write_predictions(root.join(output), &preds)?;
    }
    Ok(())
}

/// Score predictions against the gold diagnoses of `gold`, in gold order.
pub fn score_predictions(preds: &[Prediction], gold: &[Sample], variant: CiderVariant) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &TokenSeq> = preds.iter().map(|p| (p.id.as_str(), &p.output)).collect();
    let missing: Vec<&str> = gold
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IdMismatch(format!("predictions missing {}", missing.join(", "))));
    }
    let rows: Vec<(String, TokenSeq, TokenSeq)> = gold
        .iter()
        .map(|s| (s.id.clone(), by_id[s.id.as_str()].clone(), s.diagnosis.clone()))
        .collect();
    evaluate(&rows, variant)
}

fn eval_stage(root: &Path, preds: &str, report: &str, variant: CiderVariant) -> Result<()> {
    let preds = read_predictions(root.join(preds))?;
    let gold = read_split(root, "val.jsonl")?;
    score_predictions(&preds, &gold, variant)?.write(root.join(report))
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Run (or resume) the whole pipeline described by `cfg`.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Validation)?;
    let root = cfg.paths.out_dir.clone();
    fs::create_dir_all(&root).map_err(|e| PipelineError::Stage {
        stage: "setup".into(),
        source: Error::io(&root, e),
    })?;
    let mut r = Runner::new(root.clone());
    let p = |f: &str| root.join(f);

    let mut inputs = vec![cfg.paths.corpus.clone()];
    inputs.extend(cfg.paths.test.clone());
    r.stage(
        "split",
        json!(cfg.split),
        &inputs,
        &names(&["train.jsonl", "val.jsonl", "test.jsonl"]),
        || split_stage(cfg, &root),
    )?;

    let mut inputs = vec![p("train.jsonl"), p("val.jsonl"), p("test.jsonl")];
    inputs.extend(cfg.paths.base_vocab.clone());
    let params = json!({
        "synthetic_base_size": cfg.paths.base_vocab.is_none().then_some(cfg.vocab.synthetic_base_size),
        "n_buckets": cfg.buckets.n,
    });
    r.stage("vocab", params, &inputs, &names(&["vocab.txt"]), || vocab_stage(cfg, &root))?;

    let ratio = mask_ratio(cfg).map_err(PipelineError::Validation)?;
    let spec = cfg.corruption.spec(ratio);
    spec.validate().map_err(PipelineError::Validation)?;
    r.stage(
        "pretrain-corpus",
        json!(spec),
        &[p("train.jsonl"), p("vocab.txt")],
        &names(&["dae.jsonl"]),
        || {
            let train = read_split(&root, "train.jsonl")?;
            let vocab = Vocabulary::read(root.join("vocab.txt"))?;
            write_dae(root.join("dae.jsonl"), &corrupt_corpus(&train, &vocab, &spec)?)
        },
    )?;

    let mut current = ["train.jsonl".to_string(), "val.jsonl".to_string(), "test.jsonl".to_string()];
    for i in 1..=cfg.retrieval.iterations {
        let emb = format!("emb-{i}.jsonl");
        let mut inputs = vec![p("train.jsonl"), p("val.jsonl"), p("test.jsonl")];
        if !cfg.embedder.external.is_empty() {
            let ext = &cfg.embedder.external;
            inputs.push(ext[(i as usize - 1).min(ext.len() - 1)].clone());
        }
        let params = json!({ "dimension": cfg.embedder.dimension, "external": !cfg.embedder.external.is_empty() });
        r.stage(&format!("embed-{i}"), params, &inputs, std::slice::from_ref(&emb), || {
            embed_stage(cfg, &root, i, &emb)
        })?;

        let kb_file = format!("kb-{i}.jsonl");
        r.stage(
            &format!("kb-{i}"),
            json!({ "iteration": i }),
            &[p("train.jsonl"), p(&emb)],
            std::slice::from_ref(&kb_file),
            || {
                let table = EmbeddingTable::read(root.join(&emb))?;
                let train = read_split(&root, "train.jsonl")?;
                build_kb(&train, KeySource::Table(&table), i)?.write(root.join(&kb_file))
            },
        )?;

        let next = [
            format!("train_aug{i}.jsonl"),
            format!("val_aug{i}.jsonl"),
            format!("test_aug{i}.jsonl"),
        ];
        let mut inputs: Vec<PathBuf> = current.iter().map(|f| p(f)).collect();
        inputs.extend([p(&kb_file), p(&emb)]);
        r.stage(
            &format!("augment-{i}"),
            json!({ "threshold": cfg.retrieval.threshold }),
            &inputs,
            &next,
            || {
                let kb = KnowledgeBase::read(root.join(&kb_file))?;
                let table = EmbeddingTable::read(root.join(&emb))?;
                for (k, (from, to)) in current.iter().zip(&next).enumerate() {
                    let samples = read_split(&root, from)?;
                    let exclude_self = k == 0;
                    let out = augment(&samples, &kb, KeySource::Table(&table), cfg.retrieval.threshold, exclude_self)?;
                    write_corpus(root.join(to), &out)?;
                }
                Ok(())
            },
        )?;
        current = next;
    }

    let mut inputs: Vec<PathBuf> = current.iter().map(|f| p(f)).collect();
    inputs.extend(cfg.buckets.frozen_boundaries.clone());
    let params = json!({
        "n": cfg.buckets.n,
        "mode": cfg.buckets.mode,
        "boundaries": cfg.buckets.boundaries,
        "frozen": cfg.buckets.frozen_boundaries.is_some(),
        "dimension": cfg.embedder.dimension,
    });
    r.stage(
        "bucket",
        params,
        &inputs,
        &names(&["train_bucketed.jsonl", "val_bucketed.jsonl", "test_bucketed.jsonl", "bounds.json"]),
        || bucket_stage(cfg, &root, &current[0], &current[1], &current[2]),
    )?;

    r.stage(
        "generate",
        json!({ "generator": cfg.generator, "max_input_len": cfg.retrieval.max_input_len }),
        &[p("val_bucketed.jsonl"), p("test_bucketed.jsonl"), p("vocab.txt")],
        &names(&["preds_val.jsonl", "preds_test.jsonl"]),
        || generate_stage(cfg, &root),
    )?;

    r.stage(
        "eval",
        json!({ "cider": cfg.eval.cider }),
        &[p("preds_val.jsonl"), p("val.jsonl")],
        &names(&["report.json"]),
        || eval_stage(&root, "preds_val.jsonl", "report.json", cfg.eval.cider),
    )?;

    let mut inputs = vec![p("preds_val.jsonl"), p("val.jsonl")];
    inputs.extend(cfg.ensemble.predictions.iter().cloned());
    r.stage(
        "ensemble",
        json!({ "models": 1 + cfg.ensemble.predictions.len(), "cider": cfg.eval.cider }),
        &inputs,
        &names(&["fused_val.jsonl", "fused_report.json"]),
        || {
            let mut models = vec![root.join("preds_val.jsonl")];
            models.extend(cfg.ensemble.predictions.iter().cloned());
            fuse_corpus(&models, DfSource::Candidates, root.join("fused_val.jsonl"))?;
            eval_stage(&root, "fused_val.jsonl", "fused_report.json", cfg.eval.cider)
        },
    )?;

    let finish = stage_err("finish");
    write_text(
        root.join(TIMINGS_FILE),
        &(serde_json::to_string_pretty(&r.timings).map_err(|e| finish(e.into()))? + "\n"),
    )
    .map_err(&finish)?;
    Ok(RunReport {
        out_dir: root.clone(),
        report: read_report(&root.join("report.json")).map_err(&finish)?,
        fused_report: read_report(&root.join("fused_report.json")).map_err(&finish)?,
        executed: r.executed,
        skipped: r.skipped,
    })
}
