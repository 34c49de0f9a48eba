use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::trec::Qrels;
use crate::retrieval::RankedList;
use crate::rewrite::parse_turn_key;
use crate::{Error, Result};

/// What the pipeline records about one turn after re-ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnLog {
    pub topic_id: String,
    pub turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_doc: Option<String>,
    /// Memnet attention of the top-ranked candidate over earlier turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
    /// Pair embedding of the top-ranked candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

/// Macro-average of `metric` per turn depth. Turns without judgments are skipped.
pub fn per_turn_breakdown(
    run: &[RankedList],
    qrels: &Qrels,
    metric: Metric,
    threshold: i32,
) -> Result<BTreeMap<usize, f64>> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for list in run {
        let Some((_, depth)) = parse_turn_key(&list.turn_key) else {
            return Err(Error::Invalid(format!("bad turn key `{}`", list.turn_key)));
        };
        let Some(j) = qrels.get(&list.turn_key) else {
            continue;
        };
        let v = metric.compute(&list.doc_ids(), j, threshold)?;
        let e = acc.entry(depth).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(d, (s, n))| (d, s / n as f64))
        .collect())
}

/// Mean attention vector per turn depth.
pub fn attention_by_depth(logs: &[TurnLog]) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for log in logs {
        let Some(a) = &log.attention else { continue };
        let e = acc
            .entry(log.turn)
            .or_insert_with(|| (vec![0.0; a.len()], 0));
        if e.0.len() != a.len() {
            return Err(Error::Invalid(format!(
                "turn {} of {} has {} attention weights, expected {}",
                log.turn,
                log.topic_id,
                a.len(),
                e.0.len()
            )));
        }
        for (s, w) in e.0.iter_mut().zip(a) {
            *s += w;
        }
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(d, (s, n))| (d, s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

/// CSV `depth,memory,weight` with 1-based memory indices.
pub fn write_attention_csv<W: Write>(w: W, table: &BTreeMap<usize, Vec<f64>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["depth", "memory", "weight"])
        .map_err(csv_err)?;
    for (depth, row) in table {
        for (i, v) in row.iter().enumerate() {
            out.write_record([depth.to_string(), (i + 1).to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_breakdown_csv<W: Write>(
    w: W,
    metric: &str,
    table: &BTreeMap<usize, f64>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["depth", metric]).map_err(csv_err)?;
    for (depth, v) in table {
        out.write_record([depth.to_string(), v.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One row per logged turn with an embedding: `topic_id,turn,v0,v1,...`.
pub fn export_embeddings<W: Write>(w: W, logs: &[TurnLog]) -> Result<usize> {
    let rows: Vec<(&TurnLog, &Vec<f32>)> = logs
        .iter()
        .filter_map(|l| l.embedding.as_ref().map(|e| (l, e)))
        .collect();
    let dim = rows.first().map_or(0, |(_, e)| e.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["topic_id".to_string(), "turn".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for (log, e) in &rows {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        let mut rec = vec![log.topic_id.clone(), log.turn.to_string()];
        rec.extend(e.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(rows.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub topic_id: String,
    pub turn: usize,
    pub vector: Vec<f32>,
}

pub fn read_embeddings<R: Read>(r: R) -> Result<Vec<EmbeddingRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: &str| Error::Format(format!("embedding row {}: {m}", i + 1));
        let topic_id = rec.get(0).ok_or_else(|| bad("missing topic"))?.to_string();
        let turn = rec
            .get(1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad turn"))?;
        let vector = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f32>().map_err(|_| bad("bad value")))
            .collect::<Result<_>>()?;
        rows.push(EmbeddingRow {
            topic_id,
            turn,
            vector,
        });
    }
    Ok(rows)
}
