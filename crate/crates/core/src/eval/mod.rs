//! Ranking and rewrite metrics, TREC file formats and per-turn analyses.

mod analysis;
mod bleu;
mod metrics;
mod trec;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analysis::{
    attention_by_depth, export_embeddings, per_turn_breakdown, read_embeddings,
    write_attention_csv, write_breakdown_csv, EmbeddingRow, TurnLog,
};
pub use bleu::{bleu4, bleu_tokenize};
pub use metrics::{
    average_precision, dcg_at_k, ndcg_at_k, recall_at_k, reciprocal_rank, Gain, Judgments, Metric,
};
pub use trec::{read_run, write_run, write_run_to, Qrels};

use crate::retrieval::RankedList;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ndcg_k: usize,
    pub recall_k: usize,
    pub gain: Gain,
    /// Minimum grade counted as relevant for MAP, MRR and recall.
    pub threshold: i32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ndcg_k: 3,
            recall_k: 1000,
            gain: Gain::Exponential,
            threshold: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub ndcg: f64,
    pub ap: f64,
    pub rr: f64,
    pub recall: f64,
}

impl TurnMetrics {
    pub fn compute(list: &RankedList, judgments: &Judgments, cfg: &MetricConfig) -> Result<Self> {
        let ids = list.doc_ids();
        Ok(TurnMetrics {
            ndcg: ndcg_at_k(&ids, judgments, cfg.ndcg_k, cfg.gain)?,
            ap: average_precision(&ids, judgments, cfg.threshold),
            rr: reciprocal_rank(&ids, judgments, cfg.threshold),
            recall: recall_at_k(&ids, judgments, cfg.recall_k, cfg.threshold),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub per_turn: BTreeMap<String, TurnMetrics>,
    /// Macro averages over evaluated turns.
    pub mean: TurnMetrics,
    /// Run turns without any judgments.
    pub excluded: Vec<String>,
    /// nDCG by turn depth.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ndcg_by_depth: BTreeMap<usize, f64>,
}

/// Evaluates every run turn that has judgments.
pub fn evaluate(run: &[RankedList], qrels: &Qrels, cfg: &MetricConfig) -> Result<MetricReport> {
    let mut report = MetricReport {
        config: *cfg,
        ..Default::default()
    };
    for list in run {
        match qrels.get(&list.turn_key) {
            Some(j) => {
                report
                    .per_turn
                    .insert(list.turn_key.clone(), TurnMetrics::compute(list, j, cfg)?);
            }
            None => report.excluded.push(list.turn_key.clone()),
        }
    }
    let n = report.per_turn.len();
    if n > 0 {
        let mut m = TurnMetrics::default();
        for t in report.per_turn.values() {
            m.ndcg += t.ndcg;
            m.ap += t.ap;
            m.rr += t.rr;
            m.recall += t.recall;
        }
        let n = n as f64;
        report.mean = TurnMetrics {
            ndcg: m.ndcg / n,
            ap: m.ap / n,
            rr: m.rr / n,
            recall: m.recall / n,
        };
    }
    if run
        .iter()
        .all(|l| crate::rewrite::parse_turn_key(&l.turn_key).is_some())
    {
        report.ndcg_by_depth = per_turn_breakdown(
            run,
            qrels,
            Metric::Ndcg {
                k: cfg.ndcg_k,
                gain: cfg.gain,
            },
            cfg.threshold,
        )?;
    }
    Ok(report)
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column summary.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let ndcg = format!("ndcg@{}", c.ndcg_k);
        let recall = format!("recall@{}", c.recall_k);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>10} {:>10} {:>12}",
            "turn", ndcg, "map", "mrr", recall
        );
        for (k, t) in &self.per_turn {
            let _ = writeln!(
                s,
                "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>12.4}",
                k, t.ndcg, t.ap, t.rr, t.recall
            );
        }
        let m = &self.mean;
        let _ = writeln!(
            s,
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>12.4}",
            "all", m.ndcg, m.ap, m.rr, m.recall
        );
        let _ = writeln!(
            s,
            "evaluated {} turns, {} without judgments",
            self.per_turn.len(),
            self.excluded.len()
        );
        s
    }
}
