use crate::corpus::InvertedIndex;
use crate::{Error, Result};

use super::{RetrievalConfig, RetrievalModel};

pub(super) fn bm25_term(
    idx: &InvertedIndex,
    term: &str,
    tf: u32,
    len: u32,
    k1: f64,
    b: f64,
) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let n = idx.doc_count() as f64;
    let df = idx.doc_freq(term) as f64;
    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
    let avgdl = idx.avg_doc_len();
    let norm = if avgdl > 0.0 {
        1.0 - b + b * f64::from(len) / avgdl
    } else {
        1.0
    };
    let tf = f64::from(tf);
    idf * tf * (k1 + 1.0) / (tf + k1 * norm)
}

pub(super) fn lmjm_term(idx: &InvertedIndex, term: &str, tf: u32, len: u32, lambda: f64) -> f64 {
    let doc_part = if len == 0 {
        0.0
    } else {
        f64::from(tf) / f64::from(len)
    };
    ((1.0 - lambda) * doc_part + lambda * idx.collection_prob(term)).ln()
}

pub(super) fn lmd_term(idx: &InvertedIndex, term: &str, tf: u32, len: u32, mu: f64) -> f64 {
    ((f64::from(tf) + mu * idx.collection_prob(term)) / (f64::from(len) + mu)).ln()
}

fn resolve(index: &InvertedIndex, doc_id: &str) -> Result<u32> {
    index
        .doc_ordinal(doc_id)
        .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
}

fn sum_in_vocab(query: &[String], index: &InvertedIndex, mut f: impl FnMut(&str) -> f64) -> f64 {
    query
        .iter()
        .filter(|t| index.collection_freq(t) > 0)
        .map(|t| f(t))
        .sum()
}

/// Dirichlet-smoothed query log-likelihood:
/// `Σ_t log((tf(t,d) + mu·p(t|C)) / (|d| + mu))`. Terms absent from the
/// collection are skipped.
pub fn score_lmd(query: &[String], doc_id: &str, index: &InvertedIndex, mu: f64) -> Result<f64> {
    let doc = resolve(index, doc_id)?;
    let len = index.doc_len(doc);
    Ok(sum_in_vocab(query, index, |t| {
        lmd_term(index, t, index.term_freq(t, doc), len, mu)
    }))
}

/// Jelinek-Mercer smoothed query log-likelihood:
/// `Σ_t log((1-λ)·tf/|d| + λ·p(t|C))`.
pub fn score_lmjm(
    query: &[String],
    doc_id: &str,
    index: &InvertedIndex,
    lambda: f64,
) -> Result<f64> {
    let doc = resolve(index, doc_id)?;
    let len = index.doc_len(doc);
    Ok(sum_in_vocab(query, index, |t| {
        lmjm_term(index, t, index.term_freq(t, doc), len, lambda)
    }))
}

/// Okapi BM25 with `idf = ln((N - df + 0.5)/(df + 0.5) + 1)`. Repeated query
/// terms are counted once per occurrence.
pub fn score_bm25(
    query: &[String],
    doc_id: &str,
    index: &InvertedIndex,
    k1: f64,
    b: f64,
) -> Result<f64> {
    let doc = resolve(index, doc_id)?;
    let len = index.doc_len(doc);
    Ok(sum_in_vocab(query, index, |t| {
        bm25_term(index, t, index.term_freq(t, doc), len, k1, b)
    }))
}

/// Scores one document with the model selected in `config`.
pub fn score(
    query: &[String],
    doc_id: &str,
    index: &InvertedIndex,
    config: &RetrievalConfig,
) -> Result<f64> {
    match config.model {
        RetrievalModel::Bm25 => score_bm25(query, doc_id, index, config.k1, config.b),
        RetrievalModel::Lmjm => score_lmjm(query, doc_id, index, config.lambda),
        RetrievalModel::Lmd => score_lmd(query, doc_id, index, config.mu),
    }
}
