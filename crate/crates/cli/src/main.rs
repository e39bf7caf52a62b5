//! `ragpipe`: command-line front end for every pipeline stage.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 stage
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ragpipe_core::bucketer::{bucket_samples, fit_bucket_embedder, inference_prompt, BucketConfig, BucketMode};
use ragpipe_core::corpus::{parse_corpus, split_corpus, write_corpus, Sample, SplitMode, TokenSeq};
use ragpipe_core::corruptor::{corrupt_corpus, write_dae, MaskSchedule, MaskScope, MAX_MASK_RATIO};
use ragpipe_core::embedder::{write_embeddings, EmbeddingTable, TfIdfEmbedder, DEFAULT_DIMENSION};
use ragpipe_core::ensemble::{fuse_corpus, DfSource};
use ragpipe_core::genadapter::{predict, probe_score, write_predictions, GeneratorContract, Prediction};
use ragpipe_core::kbstore::{
    build_kb, iterate, render_input, EmbedSource, KeySource, KnowledgeBase, Splits, DEFAULT_MAX_INPUT_LEN,
    DEFAULT_THRESHOLD,
};
use ragpipe_core::metrics::CiderVariant;
use ragpipe_core::pipeline::{self, score_predictions, PipelineConfig, PipelineError, SynthConfig};
use ragpipe_core::vocab::{corpus_tokens, extend_vocab, Vocabulary};
use ragpipe_core::{CorruptionSpec, Error};

#[derive(Parser)]
#[command(name = "ragpipe", version, about = "Retrieval-augmented, bucket-prompted diagnosis generation data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a labeled corpus into train and validation files.
    Split(SplitArgs),
    /// Extend a base vocabulary with corpus tokens and special tokens.
    Vocab(VocabArgs),
    /// Build span-masked denoising pairs.
    PretrainCorpus(PretrainArgs),
    /// Create or advance a mask-ratio schedule state file.
    Schedule(ScheduleArgs),
    /// Composite score of a generator on labeled validation samples.
    Probe(ProbeArgs),
    /// Embed one field of every sample with the built-in tf-idf embedder.
    Embed(EmbedArgs),
    /// Build or query a knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Iterative retrieval augmentation of train/val/test.
    Augment(AugmentArgs),
    /// Assign similarity buckets to a training file.
    Bucket(BucketArgs),
    /// Print rendered model inputs as `{id, input}` records.
    Render(RenderArgs),
    /// Run a generator over rendered inputs.
    Generate(GenerateArgs),
    /// Score predictions against gold diagnoses.
    Eval(EvalArgs),
    /// Fuse several models' predictions by CIDEr consensus.
    Ensemble(EnsembleArgs),
    /// Run the whole pipeline from a TOML config.
    Run(RunArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitModeArg {
    Ranked,
    Threshold,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    ratio: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, value_enum, default_value = "ranked")]
    mode: SplitModeArg,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_val: PathBuf,
}

#[derive(Args)]
struct VocabArgs {
    /// Base vocabulary, one token per line.
    #[arg(long, conflicts_with = "synthetic_base")]
    base: Option<PathBuf>,
    /// Use a placeholder base of this size instead of `--base`.
    #[arg(long)]
    synthetic_base: Option<usize>,
    /// Extra tokens, one per line.
    #[arg(long)]
    new_tokens: Option<PathBuf>,
    /// Corpus files whose raw token ids are added.
    #[arg(long = "from")]
    from: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    buckets: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    DiagnosisOnly,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Mask ratio; taken from `--schedule` when given.
    #[arg(long, conflicts_with = "schedule")]
    ratio: Option<f64>,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    max_span: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "all")]
    scope: ScopeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    state: PathBuf,
    /// Record a probe score; without it a fresh state is written.
    #[arg(long)]
    score: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    initial: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = MAX_MASK_RATIO)]
    cap: f64,
    #[arg(long, default_value_t = 10)]
    interval: u32,
}

#[derive(Args)]
struct GeneratorArgs {
    /// `builtin` or `cmd:<shell command>`.
    #[arg(long, default_value = "builtin")]
    generator: String,
    /// Timeout for an external generator, in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_INPUT_LEN)]
    max_len: usize,
}

impl GeneratorArgs {
    fn contract(&self) -> ragpipe_core::Result<GeneratorContract> {
        let mut gc = GeneratorContract::parse(&self.generator)?;
        if let (GeneratorContract::ExternalCommand { timeout_secs, .. }, Some(t)) = (&mut gc, self.timeout) {
            *timeout_secs = t;
        }
        gc.validate()?;
        Ok(gc)
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    gen: GeneratorArgs,
    /// Schedule state to advance with the probe score.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Description,
    Diagnosis,
    Clinical,
    /// Clinical + description + retrieved values.
    Input,
}

impl Field {
    fn of(self, s: &Sample) -> TokenSeq {
        match self {
            Field::Description => s.description.clone(),
            Field::Diagnosis => s.diagnosis.clone(),
            Field::Clinical => s.clinical.clone(),
            Field::Input => ragpipe_core::bucketer::input_side(s),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "description")]
    field: Field,
    /// Corpus to fit idf on; defaults to `--in`.
    #[arg(long)]
    fit_on: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    /// Save the fitted embedder for later `kb query`.
    #[arg(long)]
    embedder_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Build a KB from training samples.
    Build(KbBuildArgs),
    /// Nearest stored pair for a token string.
    Query(KbQueryArgs),
}

#[derive(Args)]
struct KbBuildArgs {
    #[arg(long)]
    train: PathBuf,
    /// External embeddings keyed by id; the built-in embedder is fit otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    embedder_out: Option<PathBuf>,
}

#[derive(Args)]
struct KbQueryArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Saved embedder; must match the KB's fingerprint.
    #[arg(long)]
    embedder: PathBuf,
    /// Space-separated raw token ids.
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 2)]
    iters: u32,
    /// Per-iteration external embedding files (repeatable).
    #[arg(long)]
    embeddings: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    /// Receives `{train,val,test}_aug<i>.jsonl` and `kb-<i>.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BucketModeArg {
    EqualFrequency,
    FixedThresholds,
}

#[derive(Args)]
struct BucketArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    buckets: usize,
    #[arg(long, value_enum, default_value = "equal-frequency")]
    mode: BucketModeArg,
    /// Comma-separated descending cut points for fixed mode.
    #[arg(long, value_delimiter = ',')]
    boundaries: Vec<f64>,
    /// Reuse boundaries saved by an earlier run.
    #[arg(long, conflicts_with_all = ["boundaries", "mode"])]
    boundaries_in: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    boundaries_out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_INPUT_LEN)]
    max_len: usize,
    /// Prefix each input with its bucket prompt (inference bucket if unset).
    #[arg(long)]
    prompt: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiderArg {
    CiderD,
    Plain,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "cider-d")]
    cider: CiderArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Corpus whose diagnoses supply document frequencies instead of the candidates.
    #[arg(long)]
    df_ref: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_samples(path: &Path) -> anyhow::Result<Vec<Sample>> {
    parse_corpus(path).with_context(|| format!("reading {}", path.display()))
}

fn split(a: SplitArgs) -> anyhow::Result<()> {
    let samples = read_samples(&a.input)?;
    let mode = match a.mode {
        SplitModeArg::Ranked => SplitMode::Ranked,
        SplitModeArg::Threshold => SplitMode::Threshold,
    };
    let assignment = split_corpus(&samples, a.ratio, a.seed, mode)?;
    let (train, val) = assignment.apply(&samples);
    write_corpus(&a.out_train, &train)?;
    write_corpus(&a.out_val, &val)?;
    eprintln!("train {} / val {}", train.len(), val.len());
    Ok(())
}

fn vocab(a: VocabArgs) -> anyhow::Result<()> {
    let base = match (&a.base, a.synthetic_base) {
        (Some(p), _) => Vocabulary::read_base(p)?,
        (None, Some(n)) => Vocabulary::synthetic_base(n),
        (None, None) => return Err(Error::InvalidConfig("give --base or --synthetic-base".into()).into()),
    };
    let mut tokens: Vec<String> = Vec::new();
    if let Some(p) = &a.new_tokens {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        tokens.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    let mut seqs = Vec::new();
    for p in &a.from {
        for s in read_samples(p)? {
            seqs.extend([s.clinical, s.description, s.diagnosis]);
            seqs.extend(s.retrieved);
        }
    }
    tokens.extend(corpus_tokens(&seqs));
    let v = extend_vocab(&base, &tokens, a.buckets)?;
    v.write(&a.out)?;
    eprintln!("base {} + new {} = core {} ({} total)", v.base_size(), v.core_size() - v.base_size(), v.core_size(), v.len());
    Ok(())
}

fn pretrain(a: PretrainArgs) -> anyhow::Result<()> {
    let ratio = match (&a.schedule, a.ratio) {
        (Some(p), _) => MaskSchedule::read(p)?.current_ratio,
        (None, Some(r)) => r,
        (None, None) => MaskSchedule::default().current_ratio,
    };
    let spec = CorruptionSpec {
        mask_ratio: ratio,
        poisson_lambda: a.lambda,
        max_span: a.max_span,
        seed: a.seed,
        scope: match a.scope {
            ScopeArg::All => MaskScope::All,
            ScopeArg::DiagnosisOnly => MaskScope::DiagnosisOnly,
        },
    };
    spec.validate()?;
    let samples = read_samples(&a.input)?;
    let vocab = Vocabulary::read(&a.vocab)?;
    let records = corrupt_corpus(&samples, &vocab, &spec)?;
    write_dae(&a.out, &records)?;
    eprintln!("{} pairs at mask ratio {ratio}", records.len());
    Ok(())
}

fn schedule(a: ScheduleArgs) -> anyhow::Result<()> {
    let sched = match a.score {
        None => MaskSchedule::new(a.initial, a.step, a.cap, a.interval)?,
        Some(score) => {
            let mut s = MaskSchedule::read(&a.state)?;
            s.step(score);
            s
        }
    };
    sched.write(&a.state)?;
    print_json(&serde_json::to_value(&sched)?)
}

fn probe(a: ProbeArgs) -> anyhow::Result<()> {
    let gc = a.gen.contract()?;
    let val = read_samples(&a.val)?;
    let vocab = Vocabulary::read(&a.vocab)?;
    let score = probe_score(&val, &vocab, &gc, a.gen.max_len)?;
    println!("{score}");
    if let Some(p) = &a.schedule {
        let mut s = MaskSchedule::read(p)?;
        s.step(score);
        s.write(p)?;
        eprintln!("mask ratio now {}", s.current_ratio);
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> anyhow::Result<()> {
    let samples = read_samples(&a.input)?;
    let fit_docs: Vec<TokenSeq> = match &a.fit_on {
        Some(p) => read_samples(p)?.iter().map(|s| a.field.of(s)).collect(),
        None => samples.iter().map(|s| a.field.of(s)).collect(),
    };
    let embedder = TfIdfEmbedder::fit(&fit_docs, a.dim)?;
    let rows: Vec<_> = samples
        .iter()
        .map(|s| (s.id.clone(), embedder.embed(&a.field.of(s))))
        .collect();
    write_embeddings(&a.out, &rows)?;
    if let Some(p) = &a.embedder_out {
        embedder.write(p)?;
    }
    Ok(())
}

fn kb(cmd: KbCommand) -> anyhow::Result<()> {
    match cmd {
        KbCommand::Build(a) => {
            let train = read_samples(&a.train)?;
            let kb = match &a.embeddings {
                Some(p) => build_kb(&train, KeySource::Table(&EmbeddingTable::read(p)?), a.iteration)?,
                None => {
                    let e = TfIdfEmbedder::fit(train.iter().map(|s| &s.description), a.dim)?;
                    if let Some(p) = &a.embedder_out {
                        e.write(p)?;
                    }
                    build_kb(&train, KeySource::Builtin(&e), a.iteration)?
                }
            };
            kb.write(&a.out)?;
            eprintln!("{} pairs, fingerprint {}", kb.len(), kb.embedder_fingerprint);
            Ok(())
        }
        KbCommand::Query(a) => {
            let kb = KnowledgeBase::read(&a.kb)?;
            let e = TfIdfEmbedder::read(&a.embedder)?;
            if e.fingerprint() != kb.embedder_fingerprint {
                return Err(Error::InvalidConfig(format!(
                    "embedder fingerprint {} does not match the knowledge base's {}",
                    e.fingerprint(),
                    kb.embedder_fingerprint
                ))
                .into());
            }
            let query: TokenSeq = a.text.parse().map_err(|b: ragpipe_core::corpus::BadToken| {
                Error::InvalidConfig(format!("bad token `{}` in --text", b.0))
            })?;
            let result = kb.retrieve(&e.embed(&query), a.threshold, None)?;
            print_json(&serde_json::json!({
                "matched": result.matched.map(|m| serde_json::json!({
                    "source_id": m.source_id,
                    "similarity": m.similarity,
                    "value": m.value,
                })),
                "threshold": result.threshold,
            }))
        }
    }
}

fn augment(a: AugmentArgs) -> anyhow::Result<()> {
    let splits = Splits {
        train: read_samples(&a.train)?,
        val: read_samples(&a.val)?,
        test: match &a.test {
            Some(p) => read_samples(p)?,
            None => Vec::new(),
        },
    };
    let source = if a.embeddings.is_empty() {
        EmbedSource::Builtin { dimension: a.dim }
    } else {
        EmbedSource::External(
            a.embeddings
                .iter()
                .map(EmbeddingTable::read)
                .collect::<ragpipe_core::Result<Vec<_>>>()?,
        )
    };
    let outputs = iterate(&splits, a.threshold, a.iters, &source)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (i, out) in outputs.iter().enumerate() {
        let i = i + 1;
        out.kb.write(a.out_dir.join(format!("kb-{i}.jsonl")))?;
        write_corpus(a.out_dir.join(format!("train_aug{i}.jsonl")), &out.splits.train)?;
        write_corpus(a.out_dir.join(format!("val_aug{i}.jsonl")), &out.splits.val)?;
        if a.test.is_some() {
            write_corpus(a.out_dir.join(format!("test_aug{i}.jsonl")), &out.splits.test)?;
        }
        let hits = out.splits.train.iter().filter(|s| s.retrieved.len() >= i).count();
        eprintln!("iteration {i}: {hits}/{} train samples retrieved", out.splits.train.len());
    }
    Ok(())
}

fn bucket(a: BucketArgs) -> anyhow::Result<()> {
    let cfg = match &a.boundaries_in {
        Some(p) => BucketConfig::fixed(BucketConfig::read(p)?.boundaries)?,
        None => {
            let cfg = BucketConfig {
                n_buckets: a.buckets,
                mode: match a.mode {
                    BucketModeArg::EqualFrequency => BucketMode::EqualFrequency,
                    BucketModeArg::FixedThresholds => BucketMode::FixedThresholds,
                },
                boundaries: a.boundaries.clone(),
            };
            cfg.validate()?;
            cfg
        }
    };
    let samples = read_samples(&a.input)?;
    let embedder = fit_bucket_embedder(&samples, a.dim)?;
    let (bucketed, finalized) = bucket_samples(&samples, &embedder, &cfg)?;
    write_corpus(&a.out, &bucketed)?;
    if let Some(p) = &a.boundaries_out {
        finalized.write(p)?;
    }
    let mut sizes = vec![0usize; finalized.n_buckets];
    for s in &bucketed {
        sizes[s.bucket.expect("bucketed")] += 1;
    }
    eprintln!("bucket sizes {sizes:?}, boundaries {:?}", finalized.boundaries);
    Ok(())
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    let vocab = Vocabulary::read(&a.vocab)?;
    let default_prompt = inference_prompt(&BucketConfig::default());
    for s in read_samples(&a.input)? {
        let mut input = render_input(&s, &vocab, a.max_len)?;
        if a.prompt {
            let b = vocab.specials().bucket(s.bucket.unwrap_or(default_prompt))?;
            input.0.insert(0, b);
        }
        let text = vocab.decode(&input)?.join(" ");
        println!("{}", serde_json::json!({ "id": s.id, "input": text }));
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let gc = a.gen.contract()?;
    let samples = read_samples(&a.input)?;
    let vocab = Vocabulary::read(&a.vocab)?;
    let preds: Vec<Prediction> = predict(&samples, &vocab, &gc, a.gen.max_len)?;
    write_predictions(&a.out, &preds)?;
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let preds = ragpipe_core::genadapter::read_predictions(&a.pred)?;
    let gold = read_samples(&a.gold)?;
    let variant = match a.cider {
        CiderArg::CiderD => CiderVariant::CiderD,
        CiderArg::Plain => CiderVariant::Plain,
    };
    let report = score_predictions(&preds, &gold, variant)?;
    report.write(&a.out)?;
    println!(
        "cider {:.4}  bleu {:.4}  score {:.4}",
        report.cider, report.bleu, report.composite
    );
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> anyhow::Result<()> {
    let refs: Option<Vec<TokenSeq>> = match &a.df_ref {
        Some(p) => Some(read_samples(p)?.into_iter().map(|s| s.diagnosis).collect()),
        None => None,
    };
    let df = match &refs {
        Some(r) => DfSource::Reference(r),
        None => DfSource::Candidates,
    };
    let fused = fuse_corpus(&a.pred, df, &a.out)?;
    eprintln!("fused {} samples from {} models", fused.len(), a.pred.len());
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let cfg = PipelineConfig::load(&a.config).map_err(PipelineError::Validation)?;
    let report = pipeline::run(&cfg)?;
    eprintln!(
        "executed {:?}; skipped {:?}",
        report.executed, report.skipped
    );
    println!(
        "cider {:.4}  bleu {:.4}  score {:.4}",
        report.report.cider, report.report.bleu, report.report.composite
    );
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let stats = pipeline::write_synthetic_corpus(&a.out, &SynthConfig::new(a.n, a.seed, a.noise))?;
    eprintln!("{} samples around {} prototypes", stats.n, stats.prototypes);
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Split(a) => split(a),
        Command::Vocab(a) => vocab(a),
        Command::PretrainCorpus(a) => pretrain(a),
        Command::Schedule(a) => schedule(a),
        Command::Probe(a) => probe(a),
        Command::Embed(a) => embed(a),
        Command::Kb(c) => kb(c),
        Command::Augment(a) => augment(a),
        Command::Bucket(a) => bucket(a),
        Command::Render(a) => render(a),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    }
}

/// 1 for configuration and argument problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::Validation(_) => 1,
                PipelineError::Stage { .. } => 2,
            };
        }
        if let Some(Error::InvalidConfig(_)) = cause.downcast_ref::<Error>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
