//! CIDEr-consensus fusion of several models' predictions.
//!
//! For each sample every candidate is scored by its summed CIDEr-D against
//! the other candidates; the highest total wins, ties going to the model
//! registered first.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::genadapter::{read_predictions, write_predictions, Prediction};
use crate::metrics::{CiderScorer, CiderVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub sample_id: String,
    pub candidates: Vec<TokenSeq>,
    pub model_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub index: usize,
    pub selected: TokenSeq,
    pub scores: Vec<f64>,
}

/// Document frequencies for pairwise scoring: one document per candidate
/// across the whole fusion run.
pub fn fit_candidate_df<'a>(sets: impl IntoIterator<Item = &'a CandidateSet>) -> CiderScorer {
    CiderScorer::fit(sets.into_iter().flat_map(|s| s.candidates.iter()), CiderVariant::CiderD)
}

pub fn fuse(cs: &CandidateSet, scorer: &CiderScorer) -> Result<Fused> {
    let n = cs.candidates.len();
    if n == 0 {
        return Err(Error::EmptyInput("candidate set is empty"));
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| scorer.pair(&cs.candidates[i], &cs.candidates[j]))
                .sum()
        })
        .collect();
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[index] {
            index = i;
        }
    }
    Ok(Fused {
        index,
        selected: cs.candidates[index].clone(),
        scores,
    })
}

/// Group per-model predictions by id, failing when the id sets differ.
/// Sets come back ordered by id.
pub fn collect_candidates(models: &[(String, Vec<Prediction>)]) -> Result<Vec<CandidateSet>> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no prediction files to fuse"));
    }
    let maps: Vec<BTreeMap<&str, &TokenSeq>> = models
        .iter()
        .map(|(_, preds)| preds.iter().map(|p| (p.id.as_str(), &p.output)).collect())
        .collect();
    let all: BTreeSet<&str> = maps.iter().flat_map(|m| m.keys().copied()).collect();
    let mut problems = Vec::new();
    for ((name, preds), m) in models.iter().zip(&maps) {
        let missing: Vec<&str> = all.iter().filter(|id| !m.contains_key(*id)).copied().collect();
        if !missing.is_empty() {
            problems.push(format!("{name} is missing {}", missing.join(", ")));
        }
        if m.len() != preds.len() {
            problems.push(format!("{name} has duplicate ids"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::IdMismatch(problems.join("; ")));
    }
    Ok(all
        .into_iter()
        .map(|id| CandidateSet {
            sample_id: id.to_string(),
            candidates: maps.iter().map(|m| m[id].clone()).collect(),
            model_names: models.iter().map(|(n, _)| n.clone()).collect(),
        })
        .collect())
}

/// Where pairwise CIDEr-D document frequencies come from.
#[derive(Debug, Clone, Copy, Default)]
pub enum DfSource<'a> {
    /// Every candidate of every set is one document.
    #[default]
    Candidates,
    /// An external reference corpus, e.g. training diagnoses.
    Reference(&'a [TokenSeq]),
}

/// Fuse whole prediction corpora. Output is ordered by sample id.
pub fn fuse_predictions(models: &[(String, Vec<Prediction>)]) -> Result<Vec<Prediction>> {
    fuse_predictions_with(models, DfSource::Candidates)
}

pub fn fuse_predictions_with(models: &[(String, Vec<Prediction>)], df: DfSource<'_>) -> Result<Vec<Prediction>> {
    let sets = collect_candidates(models)?;
    let scorer = match df {
        DfSource::Candidates => fit_candidate_df(&sets),
        DfSource::Reference(docs) => {
            if docs.is_empty() {
                return Err(Error::EmptyInput("df reference corpus is empty"));
            }
            CiderScorer::fit(docs, CiderVariant::CiderD)
        }
    };
    sets.par_iter()
        .map(|cs| {
            let f = fuse(cs, &scorer)?;
            Ok(Prediction {
                id: cs.sample_id.clone(),
                output: f.selected,
            })
        })
        .collect()
}

pub fn fuse_corpus<P: AsRef<Path>>(inputs: &[P], df: DfSource<'_>, out: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let models = inputs
        .iter()
        .map(|p| Ok((p.as_ref().display().to_string(), read_predictions(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse_predictions_with(&models, df)?;
    write_predictions(out, &fused)?;
    Ok(fused)
}
