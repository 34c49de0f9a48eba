//! Lexical first-stage retrieval: BM25, Jelinek-Mercer and Dirichlet
//! smoothed query likelihood over an [`InvertedIndex`].

pub(crate) mod ranked;
mod score;

pub use ranked::{RankedList, ScoredDoc};
pub use score::{score, score_bm25, score_lmd, score_lmjm};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, AnalysisConfig, InvertedIndex};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalModel {
    Bm25,
    Lmjm,
    #[default]
    Lmd,
}

impl std::str::FromStr for RetrievalModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Ok(RetrievalModel::Bm25),
            "lmjm" => Ok(RetrievalModel::Lmjm),
            "lmd" => Ok(RetrievalModel::Lmd),
            other => Err(Error::Config(format!("unknown retrieval model {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub model: RetrievalModel,
    pub k1: f64,
    pub b: f64,
    pub lambda: f64,
    pub mu: f64,
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            model: RetrievalModel::Lmd,
            k1: 0.9,
            b: 0.4,
            lambda: 0.5,
            mu: 1000.0,
            k: 1000,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("retrieval cutoff k must be >= 1".into()));
        }
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!(
                "bm25 k1 must be >= 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "bm25 b must be in [0, 1], got {}",
                self.b
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lmjm lambda must be in (0, 1), got {}",
                self.lambda
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "lmd mu must be > 0, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Per-document score decomposed as `base(|d|) + Σ_{t∈d} delta(tf)`, so
/// that only documents in the postings union need accumulators.
struct TermScorer<'a> {
    index: &'a InvertedIndex,
    config: &'a RetrievalConfig,
}

impl TermScorer<'_> {
    /// Contribution of `term` to a document of length `len` with frequency `tf`.
    fn contribution(&self, term: &str, tf: u32, len: u32) -> f64 {
        let idx = self.index;
        let c = self.config;
        match c.model {
            RetrievalModel::Bm25 => score::bm25_term(idx, term, tf, len, c.k1, c.b),
            RetrievalModel::Lmjm => score::lmjm_term(idx, term, tf, len, c.lambda),
            RetrievalModel::Lmd => score::lmd_term(idx, term, tf, len, c.mu),
        }
    }
}

/// Ranks documents containing at least one query term and returns the
/// top `config.k`. Scores are accumulated term-at-a-time over the union
/// of the query terms' postings.
pub fn search(
    index: &InvertedIndex,
    query: &str,
    config: &RetrievalConfig,
    analysis: &AnalysisConfig,
) -> Result<RankedList> {
    config.validate()?;
    if analysis != index.analysis() {
        return Err(Error::Config(
            "query analysis differs from the index's analysis".into(),
        ));
    }
    let tokens = tokenize(query, analysis);
    Ok(search_tokens(index, &tokens, config))
}

pub fn search_tokens(
    index: &InvertedIndex,
    tokens: &[String],
    config: &RetrievalConfig,
) -> RankedList {
    let scorer = TermScorer { index, config };
    // only in-vocabulary terms contribute
    let terms: Vec<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| index.collection_freq(t) > 0)
        .collect();

    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for term in &terms {
        for p in index.postings(term) {
            let len = index.doc_len(p.doc);
            let delta = scorer.contribution(term, p.tf, len) - scorer.contribution(term, 0, len);
            *acc.entry(p.doc).or_insert(0.0) += delta;
        }
    }

    let mut entries: Vec<ScoredDoc> = acc
        .into_iter()
        .map(|(doc, delta)| {
            let len = index.doc_len(doc);
            let base: f64 = terms.iter().map(|t| scorer.contribution(t, 0, len)).sum();
            ScoredDoc {
                doc_id: index.doc_id(doc).to_string(),
                score: base + delta,
            }
        })
        .collect();
    ranked::sort_entries(&mut entries);
    entries.truncate(config.k);
    RankedList {
        turn_key: String::new(),
        entries,
    }
}
