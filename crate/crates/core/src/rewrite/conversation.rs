use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::retrieval::RankedList;
use crate::{Error, Result};

/// One user utterance and everything attached to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    #[serde(rename = "raw")]
    pub raw_query: String,
    #[serde(rename = "manual", default, skip_serializing_if = "Option::is_none")]
    pub manual_query: Option<String>,
    #[serde(rename = "auto", default, skip_serializing_if = "Option::is_none")]
    pub auto_query: Option<String>,
    #[serde(rename = "rewritten", default, skip_serializing_if = "Option::is_none")]
    pub rewritten_query: Option<String>,
    #[serde(rename = "passage", default, skip_serializing_if = "Option::is_none")]
    pub top_passage_text: Option<String>,
    #[serde(skip)]
    pub result: Option<RankedList>,
}

impl Turn {
    pub fn new(index: usize, raw_query: impl Into<String>) -> Self {
        Turn {
            index,
            raw_query: raw_query.into(),
            manual_query: None,
            auto_query: None,
            rewritten_query: None,
            top_passage_text: None,
            result: None,
        }
    }
}

/// A topic: turns `1..=n` in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub topic_id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(topic_id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let conv = Conversation {
            topic_id: topic_id.into(),
            turns,
        };
        conv.validate()?;
        Ok(conv)
    }

    /// Builds a conversation from raw query strings, numbering turns from 1.
    pub fn from_queries<S: AsRef<str>>(topic_id: impl Into<String>, queries: &[S]) -> Result<Self> {
        let turns = queries
            .iter()
            .enumerate()
            .map(|(i, q)| Turn::new(i + 1, q.as_ref()))
            .collect();
        Self::new(topic_id, turns)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topic_id.is_empty() {
            return Err(Error::Invalid("empty topic id".into()));
        }
        if self.turns.is_empty() {
            return Err(Error::Invalid(format!(
                "topic {} has no turns",
                self.topic_id
            )));
        }
        for (pos, t) in self.turns.iter().enumerate() {
            if t.index != pos + 1 {
                return Err(Error::Invalid(format!(
                    "topic {}: turn indices must be contiguous from 1 (found {} at position {})",
                    self.topic_id,
                    t.index,
                    pos + 1
                )));
            }
            if t.raw_query.trim().is_empty() {
                return Err(Error::Invalid(format!(
                    "topic {} turn {}: empty query",
                    self.topic_id, t.index
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Turn `i` (1-based).
    pub fn turn(&self, i: usize) -> Result<&Turn> {
        if i == 0 || i > self.turns.len() {
            return Err(Error::Invalid(format!(
                "turn {i} out of range for topic {} with {} turns",
                self.topic_id,
                self.turns.len()
            )));
        }
        Ok(&self.turns[i - 1])
    }

    pub fn turn_mut(&mut self, i: usize) -> Result<&mut Turn> {
        self.turn(i)?;
        Ok(&mut self.turns[i - 1])
    }

    /// `"topicid_turnindex"`, the TREC CAsT turn key.
    pub fn turn_key(&self, i: usize) -> String {
        turn_key(&self.topic_id, i)
    }
}

pub fn turn_key(topic_id: &str, turn: usize) -> String {
    format!("{topic_id}_{turn}")
}

/// Splits a turn key at its last underscore.
pub fn parse_turn_key(key: &str) -> Option<(&str, usize)> {
    let (topic, turn) = key.rsplit_once('_')?;
    let turn = turn.parse().ok()?;
    (!topic.is_empty() && turn >= 1).then_some((topic, turn))
}

/// Reads a topics file: a JSON array of topics, a single topic object, or
/// one topic object per line.
pub fn read_topics(path: &Path) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path)?;
    let trimmed = text.trim_start();
    let convs: Vec<Conversation> = if trimmed.starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
    } else {
        match serde_json::from_str::<Conversation>(&text) {
            Ok(c) => vec![c],
            Err(_) => {
                let mut out = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    out.push(
                        serde_json::from_str(line)
                            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?,
                    );
                }
                out
            }
        }
    };
    for c in &convs {
        c.validate()
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    }
    Ok(convs)
}

pub fn write_topics(path: &Path, topics: &[Conversation]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(topics)?)?;
    Ok(())
}

/// A coreference mention: character span `[start, end)` of a turn's raw query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Coreference clusters for one topic, as produced by an external resolver.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorefClusters {
    pub clusters: Vec<Vec<Mention>>,
}

/// Coreference sidecar file: `{"<topic_id>": [[mention, ...], ...], ...}`.
pub fn read_coref(path: &Path) -> Result<BTreeMap<String, CorefClusters>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}
