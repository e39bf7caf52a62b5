//! Generator contract.
//!
//! A generator maps rendered model inputs (vocabulary index space) to
//! outputs. Two kinds exist: the built-in retrieval-copy baseline and an
//! external command speaking line-delimited JSON over stdin/stdout:
//!
//! ```text
//! stdin:  {"id":"s1","input":"51622 12 7 51618 88 29"}
//! stdout: {"id":"s1","output":"55 72"}
//! ```
//!
//! Outputs must come back one per input, in order, echoing the ids.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bucketer::{apply_prompt, inference_prompt, BucketConfig};
use crate::corpus::{write_text, Sample, TokenSeq};
use crate::error::{Error, Result};
use crate::metrics::{bleu, cider, composite};
use crate::vocab::{SpecialIds, Vocabulary};

pub const TIMEOUT_ENV: &str = "RAGPIPE_GEN_TIMEOUT";
pub const DEFAULT_TIMEOUT_SECS: f64 = 600.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorContract {
    #[default]
    BuiltinCopy,
    ExternalCommand {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

impl GeneratorContract {
    /// `builtin` / `builtin-copy`, or `cmd:<shell command>`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "builtin" | "builtin-copy" => Ok(GeneratorContract::BuiltinCopy),
            _ => match spec.strip_prefix("cmd:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(GeneratorContract::ExternalCommand {
                    command: cmd.trim().to_string(),
                    timeout_secs: DEFAULT_TIMEOUT_SECS,
                }),
                _ => Err(Error::InvalidConfig(format!(
                    "generator must be `builtin` or `cmd:<command>`, got `{spec}`"
                ))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorContract::BuiltinCopy => Ok(()),
            GeneratorContract::ExternalCommand { command, timeout_secs } => {
                if command.trim().is_empty() {
                    return Err(Error::InvalidConfig("external generator needs a command".into()));
                }
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                    return Err(Error::InvalidConfig(format!("bad generator timeout {timeout_secs}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireInput {
    pub id: String,
    pub input: TokenSeq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireOutput {
    pub id: String,
    pub output: TokenSeq,
}

/// A prediction in raw token space; also the prediction file record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: TokenSeq,
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Retrieval-copy: the first retrieved segment if there is one, else the
/// description segment.
pub fn copy_baseline(input: &TokenSeq, specials: &SpecialIds) -> TokenSeq {
    let mut tokens = input.tokens();
    if let Some((first, rest)) = tokens.split_first() {
        if specials.buckets.contains(first) {
            tokens = rest;
        }
    }
    let segments: Vec<&[u32]> = tokens.split(|&t| t == specials.sep).collect();
    let chosen = match segments.get(2) {
        Some(r) if !r.is_empty() => r,
        _ => segments.get(1).unwrap_or(&segments[0]),
    };
    TokenSeq(chosen.to_vec())
}

fn effective_timeout(configured: f64) -> Result<Duration> {
    let secs = match std::env::var(TIMEOUT_ENV) {
        Ok(v) => v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|s| s.is_finite() && *s > 0.0)
            .ok_or_else(|| Error::InvalidConfig(format!("{TIMEOUT_ENV}={v} is not a positive number")))?,
        Err(_) => configured,
    };
    Ok(Duration::from_secs_f64(secs))
}

fn run_external(command: &str, timeout: Duration, inputs: &[(String, TokenSeq)]) -> Result<Vec<TokenSeq>> {
    let mut payload = String::new();
    for (id, input) in inputs {
        let rec = WireInput {
            id: id.clone(),
            input: input.clone(),
        };
        payload.push_str(&serde_json::to_string(&rec)?);
        payload.push('\n');
    }
    let gen_err = |msg: String| Error::Generator(msg);
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| gen_err(format!("cannot start `{command}`: {e}")))?;
    let mut stdin = child.stdin.take().expect("stdin piped");
    let mut stdout = child.stdout.take().expect("stdout piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    // A generator that exits without reading all input yields a broken pipe
    // here; its exit status is what gets reported.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(payload.as_bytes());
    });
    let reader = thread::spawn(move || {
        let mut s = String::new();
        stdout.read_to_string(&mut s).map(|_| s)
    });
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| gen_err(e.to_string()))? {
            break status;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(gen_err(format!("`{command}` timed out after {:.1}s", timeout.as_secs_f64())));
        }
        thread::sleep(Duration::from_millis(5));
    };
    let _ = writer.join();
    let out = reader
        .join()
        .expect("reader thread")
        .map_err(|e| gen_err(format!("reading generator output: {e}")))?;
    let err_text = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(gen_err(format!("`{command}` exited with {status}: {}", err_text.trim())));
    }

    let outputs: Vec<WireOutput> = out
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| gen_err(format!("output record {}: {e}", i + 1))))
        .collect::<Result<_>>()?;
    if outputs.len() != inputs.len() {
        return Err(gen_err(format!(
            "expected {} outputs, got {}",
            inputs.len(),
            outputs.len()
        )));
    }
    inputs
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(i, ((id, _), o))| {
            if &o.id == id {
                Ok(o.output)
            } else {
                Err(gen_err(format!("output {} has id `{}`, expected `{id}`", i + 1, o.id)))
            }
        })
        .collect()
}

/// One output per input, aligned by position.
pub fn generate(inputs: &[(String, TokenSeq)], gc: &GeneratorContract, specials: &SpecialIds) -> Result<Vec<TokenSeq>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("nothing to generate"));
    }
    gc.validate()?;
    match gc {
        GeneratorContract::BuiltinCopy => Ok(inputs.iter().map(|(_, x)| copy_baseline(x, specials)).collect()),
        GeneratorContract::ExternalCommand { command, timeout_secs } => {
            run_external(command, effective_timeout(*timeout_secs)?, inputs)
        }
    }
}

/// Render each sample with the inference prompt, generate, and map the
/// outputs back to raw token ids.
pub fn predict(
    samples: &[Sample],
    vocab: &Vocabulary,
    gc: &GeneratorContract,
    max_input_len: usize,
) -> Result<Vec<Prediction>> {
    let prompt = inference_prompt(&BucketConfig::default());
    let inputs = samples
        .iter()
        .map(|s| Ok((s.id.clone(), apply_prompt(s, prompt, vocab, max_input_len)?)))
        .collect::<Result<Vec<_>>>()?;
    let outputs = generate(&inputs, gc, vocab.specials())?;
    samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| {
            Ok(Prediction {
                id: s.id.clone(),
                output: vocab.decode_raw(&o)?,
            })
        })
        .collect()
}

/// Composite score of the generator's predictions on labeled samples.
pub fn probe_score(val: &[Sample], vocab: &Vocabulary, gc: &GeneratorContract, max_input_len: usize) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyInput("probe needs validation samples"));
    }
    if let Some(s) = val.iter().find(|s| !s.has_diagnosis()) {
        return Err(Error::MissingDiagnosis(s.id.clone()));
    }
    let preds = predict(val, vocab, gc, max_input_len)?;
    let cands: Vec<TokenSeq> = preds.into_iter().map(|p| p.output).collect();
    let refs: Vec<TokenSeq> = val.iter().map(|s| s.diagnosis.clone()).collect();
    Ok(composite(cider(&cands, &refs)?, bleu(&cands, &refs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specials() -> SpecialIds {
        SpecialIds {
            sep: 100,
            mask: 101,
            pad: 102,
            buckets: vec![103, 104],
        }
    }

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    #[test]
    fn copy_prefers_first_retrieved() {
        let x = seq(&[103, 1, 100, 2, 3, 100, 7, 8, 100, 9]);
        assert_eq!(copy_baseline(&x, &specials()), seq(&[7, 8]));
    }

    #[test]
    fn copy_falls_back_to_description() {
        assert_eq!(copy_baseline(&seq(&[103, 1, 100, 2, 3]), &specials()), seq(&[2, 3]));
        assert_eq!(copy_baseline(&seq(&[100, 2, 3]), &specials()), seq(&[2, 3]));
        assert_eq!(copy_baseline(&seq(&[5]), &specials()), seq(&[5]));
    }

    #[test]
    fn parse_generator_spec() {
        assert_eq!(GeneratorContract::parse("builtin").unwrap(), GeneratorContract::BuiltinCopy);
        match GeneratorContract::parse("cmd: python my_model.py").unwrap() {
            GeneratorContract::ExternalCommand { command, .. } => assert_eq!(command, "python my_model.py"),
            other => panic!("{other:?}"),
        }
        assert!(GeneratorContract::parse("cmd:").is_err());
        assert!(GeneratorContract::parse("gpt").is_err());
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            generate(&[], &GeneratorContract::BuiltinCopy, &specials()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn external_command_needs_text() {
        let gc = GeneratorContract::ExternalCommand {
            command: " ".into(),
            timeout_secs: 1.0,
        };
        assert!(gc.validate().is_err());
    }
}
