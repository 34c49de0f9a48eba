use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Graded judgments for one turn: doc id → grade.
pub type Judgments = BTreeMap<String, i32>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^rel - 1`
    #[default]
    Exponential,
    /// `rel`
    Linear,
}

impl Gain {
    pub fn apply(self, grade: i32) -> f64 {
        let g = grade.max(0);
        match self {
            Gain::Exponential => 2f64.powi(g) - 1.0,
            Gain::Linear => g as f64,
        }
    }
}

impl FromStr for Gain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Gain::Exponential),
            "linear" | "lin" => Ok(Gain::Linear),
            other => Err(Error::Config(format!("unknown gain `{other}`"))),
        }
    }
}

fn discount(rank0: usize) -> f64 {
    (rank0 as f64 + 2.0).log2()
}

fn grade_of(judgments: &Judgments, doc: &str) -> i32 {
    judgments.get(doc).copied().unwrap_or(0)
}

pub fn dcg_at_k<S: AsRef<str>>(ranked: &[S], judgments: &Judgments, k: usize, gain: Gain) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.apply(grade_of(judgments, d.as_ref())) / discount(i))
        .sum()
}

/// nDCG@k normalised by the ideal ordering of all judged documents.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranked: &[S],
    judgments: &Judgments,
    k: usize,
    gain: Gain,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config("nDCG cutoff must be >= 1".into()));
    }
    let mut ideal: Vec<i32> = judgments.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / discount(i))
        .sum();
    if idcg <= 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(ranked, judgments, k, gain) / idcg)
}

fn relevant_count(judgments: &Judgments, threshold: i32) -> usize {
    judgments.values().filter(|&&g| g >= threshold).count()
}

pub fn average_precision<S: AsRef<str>>(
    ranked: &[S],
    judgments: &Judgments,
    threshold: i32,
) -> f64 {
    let r = relevant_count(judgments, threshold);
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if grade_of(judgments, d.as_ref()) >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], judgments: &Judgments, threshold: i32) -> f64 {
    ranked
        .iter()
        .position(|d| grade_of(judgments, d.as_ref()) >= threshold)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn recall_at_k<S: AsRef<str>>(
    ranked: &[S],
    judgments: &Judgments,
    k: usize,
    threshold: i32,
) -> f64 {
    let r = relevant_count(judgments, threshold);
    if r == 0 {
        return 0.0;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|d| grade_of(judgments, d.as_ref()) >= threshold)
        .count();
    found as f64 / r as f64
}

/// A single per-turn metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum Metric {
    Ndcg { k: usize, gain: Gain },
    Ap,
    Rr,
    Recall { k: usize },
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Ndcg { k, .. } => format!("ndcg@{k}"),
            Metric::Ap => "map".into(),
            Metric::Rr => "mrr".into(),
            Metric::Recall { k } => format!("recall@{k}"),
        }
    }

    pub fn compute<S: AsRef<str>>(
        &self,
        ranked: &[S],
        judgments: &Judgments,
        threshold: i32,
    ) -> Result<f64> {
        Ok(match *self {
            Metric::Ndcg { k, gain } => ndcg_at_k(ranked, judgments, k, gain)?,
            Metric::Ap => average_precision(ranked, judgments, threshold),
            Metric::Rr => reciprocal_rank(ranked, judgments, threshold),
            Metric::Recall { k } => recall_at_k(ranked, judgments, k, threshold),
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// `ndcg@3`, `map`, `mrr`, `recall@1000`, `ndcg_lin@3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let (name, k) = match s.split_once('@') {
            Some((n, k)) => {
                let k = k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad cutoff in `{s}`")))?;
                (n, Some(k))
            }
            None => (s.as_str(), None),
        };
        match (name, k) {
            ("ndcg", k) => Ok(Metric::Ndcg {
                k: k.unwrap_or(3),
                gain: Gain::Exponential,
            }),
            ("ndcg_lin", k) => Ok(Metric::Ndcg {
                k: k.unwrap_or(3),
                gain: Gain::Linear,
            }),
            ("map" | "ap", None) => Ok(Metric::Ap),
            ("mrr" | "rr", None) => Ok(Metric::Rr),
            ("recall", k) => Ok(Metric::Recall {
                k: k.unwrap_or(1000),
            }),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}
