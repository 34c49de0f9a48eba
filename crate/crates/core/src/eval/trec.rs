use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::metrics::Judgments;
use crate::retrieval::{RankedList, ScoredDoc};
use crate::{Error, Result};

/// Graded relevance judgments keyed by turn key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Qrels {
    turns: BTreeMap<String, Judgments>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, turn_key: impl Into<String>, doc_id: impl Into<String>, grade: i32) {
        self.turns
            .entry(turn_key.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn get(&self, turn_key: &str) -> Option<&Judgments> {
        self.turns.get(turn_key)
    }

    pub fn turn_keys(&self) -> impl Iterator<Item = &str> {
        self.turns.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Judgments)> {
        self.turns.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn judgment_count(&self) -> usize {
        self.turns.values().map(BTreeMap::len).sum()
    }

    pub fn map_grades(&self, mut f: impl FnMut(i32) -> Result<i32>) -> Result<Qrels> {
        let mut out = Qrels::new();
        for (key, judg) in &self.turns {
            for (doc, &g) in judg {
                out.insert(key.clone(), doc.clone(), f(g)?);
            }
        }
        Ok(out)
    }

    /// `topic_turn iter docid grade`, whitespace separated.
    pub fn read(path: &Path) -> Result<Qrels> {
        let reader = BufReader::new(File::open(path)?);
        let mut q = Qrels::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let grade = fields[3]
                .parse::<i32>()
                .map_err(|_| Error::parse(path, i + 1, format!("bad grade `{}`", fields[3])))?;
            q.insert(fields[0], fields[2], grade);
        }
        Ok(q)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (key, judg) in &self.turns {
            for (doc, g) in judg {
                writeln!(w, "{key} Q0 {doc} {g}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes TREC run lines `topic_turn Q0 docid rank score tag`.
pub fn write_run_to<W: Write>(w: &mut W, lists: &[RankedList], tag: &str) -> Result<()> {
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            if !e.score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "score of {} in {}",
                    e.doc_id, list.turn_key
                )));
            }
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                list.turn_key,
                e.doc_id,
                i + 1,
                e.score,
                tag
            )?;
        }
    }
    Ok(())
}

pub fn write_run(path: &Path, lists: &[RankedList], tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_run_to(&mut w, lists, tag)?;
    w.flush()?;
    Ok(())
}

/// Reads a TREC run; turn keys keep their first-appearance order and
/// entries are ordered by the rank column.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let reader = BufReader::new(File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(u64, ScoredDoc)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let rank: u64 = f[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad rank `{}`", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score `{}`", f[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, i + 1, "non-finite score"));
        }
        let key = f[0].to_string();
        let entries = rows.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if entries.iter().any(|(_, e)| e.doc_id == f[2]) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate doc `{}` for {}", f[2], f[0]),
            ));
        }
        entries.push((rank, ScoredDoc::new(f[2], score)));
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let mut entries = rows.remove(&key).unwrap_or_default();
            entries.sort_by_key(|(r, _)| *r);
            RankedList {
                turn_key: key,
                entries: entries.into_iter().map(|(_, e)| e).collect(),
            }
        })
        .collect())
}
