//! Conversational query rewriting: raw, manual, prefixing, union fusion,
//! pronoun-only coreference substitution and seq2seq rewriting.

mod conversation;
mod coref;

pub use conversation::{
    parse_turn_key, read_coref, read_topics, turn_key, write_topics, Conversation, CorefClusters,
    Mention, Turn,
};
pub use coref::{coref_pronoun_rewrite, is_pronoun, pronouns};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::retrieval::{ranked, RankedList, ScoredDoc};
use crate::{Error, Result};

pub const CTX_TOKEN: &str = "[CTX]";
pub const TURN_TOKEN: &str = "[TURN]";

/// Which query variant of a turn to read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    #[default]
    Raw,
    Manual,
    Auto,
    T5,
}

impl QuerySource {
    pub fn text(self, turn: &Turn) -> Result<&str> {
        let (value, what) = match self {
            QuerySource::Raw => return Ok(&turn.raw_query),
            QuerySource::Manual => (&turn.manual_query, "manual"),
            QuerySource::Auto => (&turn.auto_query, "auto"),
            QuerySource::T5 => (&turn.rewritten_query, "rewritten"),
        };
        value
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("turn {} has no {what} query", turn.index)))
    }
}

/// Joins two queries with exactly one space between them.
pub fn join_queries(first: &str, second: &str) -> String {
    format!("{} {}", first.trim(), second.trim())
}

/// Turn 1 is returned verbatim; later turns get the first query prefixed.
pub fn prefix_rewrite(conv: &Conversation, i: usize) -> Result<String> {
    let first = conv.turn(1)?;
    let current = conv.turn(i)?;
    if i == 1 {
        return Ok(first.raw_query.clone());
    }
    Ok(join_queries(&first.raw_query, &current.raw_query))
}

/// Number of queries issued by the union method at turn depth `t`:
/// one for `t <= 2`, `t - 1` afterwards.
pub fn union_size(t: usize) -> usize {
    if t <= 2 {
        1
    } else {
        t - 1
    }
}

/// The queries issued at turn `i`: `q_1` for turn 1, `q_1 q_2` for turn 2,
/// and `q_j q_i` for every earlier `j` after that.
pub fn union_plan(conv: &Conversation, i: usize, source: QuerySource) -> Result<Vec<String>> {
    let current = source.text(conv.turn(i)?)?;
    match i {
        1 => Ok(vec![current.to_string()]),
        2 => Ok(vec![join_queries(source.text(conv.turn(1)?)?, current)]),
        _ => (1..i)
            .map(|j| Ok(join_queries(source.text(conv.turn(j)?)?, current)))
            .collect(),
    }
}

/// Union of several ranked lists. A document retrieved by more than one
/// query keeps its highest score; the result is re-sorted and cut at `k`.
pub fn fuse_union(lists: &[RankedList], k: usize) -> RankedList {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for e in lists.iter().flat_map(|l| &l.entries) {
        best.entry(&e.doc_id)
            .and_modify(|s| {
                if e.score > *s {
                    *s = e.score
                }
            })
            .or_insert(e.score);
    }
    let mut entries: Vec<ScoredDoc> = best
        .into_iter()
        .map(|(d, s)| ScoredDoc::new(d, s))
        .collect();
    ranked::sort_entries(&mut entries);
    entries.truncate(k);
    let turn_key = lists
        .first()
        .map(|l| l.turn_key.clone())
        .unwrap_or_default();
    RankedList { turn_key, entries }
}

/// Seq2seq rewriter input: `q_i [CTX] q_1 p_1 [TURN] q_2 p_2 ... q_{i-1} p_{i-1}`.
/// History turns without a stored passage contribute their query alone.
pub fn build_t5_input(conv: &Conversation, i: usize) -> Result<String> {
    Ok(RewriteRequest::for_turn(conv, i)?.t5_input())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

/// Wire body of the sidecar's `/rewrite` endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub current: String,
    pub history: Vec<HistoryTurn>,
}

impl RewriteRequest {
    pub fn for_turn(conv: &Conversation, i: usize) -> Result<Self> {
        let current = conv.turn(i)?;
        let history = conv.turns[..i - 1]
            .iter()
            .map(|t| HistoryTurn {
                query: t.raw_query.clone(),
                passage: t.top_passage_text.clone(),
            })
            .collect();
        Ok(RewriteRequest {
            current: current.raw_query.clone(),
            history,
        })
    }

    pub fn t5_input(&self) -> String {
        let mut out = format!("{} {CTX_TOKEN}", self.current.trim());
        for (j, h) in self.history.iter().enumerate() {
            if j > 0 {
                out.push(' ');
                out.push_str(TURN_TOKEN);
            }
            out.push(' ');
            out.push_str(h.query.trim());
            if let Some(p) = h
                .passage
                .as_deref()
                .map(str::trim)
                .filter(|p| !p.is_empty())
            {
                out.push(' ');
                out.push_str(p);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResponse {
    pub rewritten: String,
}

/// Anything that turns a conversational query into a self-contained one.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, request: &RewriteRequest) -> Result<String>;
}

/// Returns the text before `[CTX]` of the seq2seq input, i.e. the current
/// query unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoRewriter;

impl Rewriter for EchoRewriter {
    fn rewrite(&self, request: &RewriteRequest) -> Result<String> {
        let input = request.t5_input();
        Ok(input
            .split(CTX_TOKEN)
            .next()
            .unwrap_or_default()
            .trim()
            .to_string())
    }
}

/// Calls `provider`; an empty rewrite falls back to the current query.
pub fn rewrite_via_provider(request: &RewriteRequest, provider: &dyn Rewriter) -> Result<String> {
    let out = provider.rewrite(request)?;
    let out = out.trim();
    if out.is_empty() {
        log::warn!(
            "rewriter returned an empty query; using {:?}",
            request.current
        );
        return Ok(request.current.trim().to_string());
    }
    Ok(out.to_string())
}
