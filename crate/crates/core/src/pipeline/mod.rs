//! Per-conversation orchestration: rewrite, retrieve, embed, re-rank.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocStore, InvertedIndex};
use crate::embed::{embed_pairs, EmbeddingKey, EmbeddingProvider};
use crate::eval::{evaluate, write_run_to, MetricConfig, MetricReport, Qrels, TurnLog};
use crate::rerank::{rerank_turn, ConversationState, HeadParams};
use crate::retrieval::{search, RankedList, RetrievalConfig};
use crate::rewrite::{
    coref_pronoun_rewrite, fuse_union, join_queries, rewrite_via_provider, union_plan,
    Conversation, CorefClusters, QuerySource, RewriteRequest, Rewriter,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMethod {
    #[default]
    Raw,
    Manual,
    Auto,
    /// First query prefixed to the pronoun-resolved current query.
    PrefixCoref,
    T5,
    /// Retrieval with the union of T5 rewrites; re-ranking with the current one.
    T5Union,
}

impl QueryMethod {
    pub const ALL: [QueryMethod; 6] = [
        QueryMethod::Raw,
        QueryMethod::Manual,
        QueryMethod::Auto,
        QueryMethod::PrefixCoref,
        QueryMethod::T5,
        QueryMethod::T5Union,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryMethod::Raw => "raw",
            QueryMethod::Manual => "manual",
            QueryMethod::Auto => "auto",
            QueryMethod::PrefixCoref => "prefix_coref",
            QueryMethod::T5 => "t5",
            QueryMethod::T5Union => "t5_union",
        }
    }
}

impl FromStr for QueryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        QueryMethod::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown query method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub query_method: QueryMethod,
    pub retrieval: RetrievalConfig,
    /// Candidates handed to the head per turn.
    pub rerank_depth: usize,
    pub metrics: MetricConfig,
    /// Run tag written in the last column of run files.
    pub tag: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            query_method: QueryMethod::Raw,
            retrieval: RetrievalConfig::default(),
            rerank_depth: 1000,
            metrics: MetricConfig::default(),
            tag: "convsearch".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        if self.rerank_depth == 0 {
            return Err(Error::Config("rerank depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything a run needs besides the topics.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub index: &'a InvertedIndex,
    pub docs: &'a DocStore,
    pub head: Option<&'a HeadParams>,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    pub rewriter: Option<&'a dyn Rewriter>,
    pub coref: Option<&'a BTreeMap<String, CorefClusters>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, index: &'a InvertedIndex, docs: &'a DocStore) -> Self {
        Pipeline {
            config,
            index,
            docs,
            head: None,
            embedder: None,
            rewriter: None,
            coref: None,
        }
    }

    pub fn with_head(mut self, head: &'a HeadParams, embedder: &'a dyn EmbeddingProvider) -> Self {
        self.head = Some(head);
        self.embedder = Some(embedder);
        self
    }

    pub fn with_rewriter(mut self, rewriter: &'a dyn Rewriter) -> Self {
        self.rewriter = Some(rewriter);
        self
    }

    pub fn with_coref(mut self, coref: &'a BTreeMap<String, CorefClusters>) -> Self {
        self.coref = Some(coref);
        self
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if let Some(h) = self.head {
            h.validate()?;
            let e = self
                .embedder
                .ok_or_else(|| Error::Config("re-ranking needs an embedding provider".into()))?;
            if e.dim() != h.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: h.input_dim,
                    actual: e.dim(),
                });
            }
        }
        match self.config.query_method {
            QueryMethod::T5 | QueryMethod::T5Union if self.rewriter.is_none() => {
                Err(Error::Config("t5 query methods need a rewriter".into()))
            }
            QueryMethod::PrefixCoref if self.coref.is_none() => Err(Error::Config(
                "prefix_coref needs coreference clusters".into(),
            )),
            _ => Ok(()),
        }
    }

    /// (retrieval queries, re-ranking query) for turn `i`. T5 methods store
    /// the rewrite on the turn.
    fn queries(&self, conv: &mut Conversation, i: usize) -> Result<(Vec<String>, String)> {
        let single = |q: String| (vec![q.clone()], q);
        Ok(match self.config.query_method {
            QueryMethod::Raw => single(conv.turn(i)?.raw_query.clone()),
            QueryMethod::Manual => single(QuerySource::Manual.text(conv.turn(i)?)?.to_string()),
            QueryMethod::Auto => single(QuerySource::Auto.text(conv.turn(i)?)?.to_string()),
            QueryMethod::PrefixCoref => {
                let empty = CorefClusters::default();
                let clusters = self
                    .coref
                    .and_then(|c| c.get(&conv.topic_id))
                    .unwrap_or(&empty);
                let resolved = coref_pronoun_rewrite(conv, i, clusters)?;
                if i == 1 {
                    single(resolved)
                } else {
                    single(join_queries(&conv.turn(1)?.raw_query, &resolved))
                }
            }
            QueryMethod::T5 | QueryMethod::T5Union => {
                let rewriter = self
                    .rewriter
                    .ok_or_else(|| Error::Config("no rewriter".into()))?;
                let rewritten =
                    rewrite_via_provider(&RewriteRequest::for_turn(conv, i)?, rewriter)?;
                conv.turn_mut(i)?.rewritten_query = Some(rewritten.clone());
                if self.config.query_method == QueryMethod::T5 {
                    single(rewritten)
                } else {
                    (union_plan(conv, i, QuerySource::T5)?, rewritten)
                }
            }
        })
    }

    fn run_turn(
        &self,
        conv: &mut Conversation,
        i: usize,
        state: &mut Option<ConversationState>,
    ) -> Result<TurnOutput> {
        let key = conv.turn_key(i);
        let (retrieval_queries, rerank_query) = self.queries(conv, i)?;
        let analysis = self.index.analysis();
        let lists = retrieval_queries
            .iter()
            .map(|q| search(self.index, q, &self.config.retrieval, analysis))
            .collect::<Result<Vec<_>>>()?;
        let retrieved = if lists.len() == 1 {
            lists.into_iter().next().expect("one list")
        } else {
            fuse_union(&lists, self.config.retrieval.k)
        }
        .with_key(key.clone());

        let mut log = TurnLog {
            topic_id: conv.topic_id.clone(),
            turn: i,
            top_doc: None,
            attention: None,
            embedding: None,
        };
        let final_list = match (self.head, self.embedder, state.as_mut()) {
            (Some(head), Some(embedder), Some(st)) => {
                let mut candidates = retrieved.clone();
                candidates.entries.truncate(self.config.rerank_depth);
                let keys = candidates
                    .entries
                    .iter()
                    .map(|e| EmbeddingKey::new(rerank_query.clone(), self.docs.text(&e.doc_id)?))
                    .collect::<Result<Vec<_>>>()?;
                let vectors = embed_pairs(&keys, embedder)?;
                let embs: Vec<Vec<f64>> = vectors.iter().map(|v| v.to_f64()).collect();
                let outcome = rerank_turn(&candidates, &embs, st, head)?;
                log.attention = outcome.top_attention().map(<[f64]>::to_vec);
                if let Some(top) = outcome.list.top() {
                    let pos = candidates
                        .entries
                        .iter()
                        .position(|e| e.doc_id == top.doc_id)
                        .expect("candidate");
                    log.embedding = Some(vectors[pos].values().to_vec());
                }
                *st = outcome.state;
                outcome.list
            }
            _ => retrieved.clone(),
        };
        log.top_doc = final_list.top().map(|t| t.doc_id.clone());
        conv.turn_mut(i)?.top_passage_text = match &log.top_doc {
            Some(d) => Some(self.docs.text(d)?.to_string()),
            None => None,
        };
        Ok(TurnOutput {
            retrieval: retrieved,
            ranked: final_list,
            query: rerank_query,
            log,
        })
    }

    /// Runs the turns of one conversation in order, threading the head's
    /// state. A failing turn stops the topic; finished turns are kept.
    pub fn run_conversation(&self, conv: &Conversation) -> ConversationRun {
        let mut conv = conv.clone();
        let mut run = ConversationRun {
            topic_id: conv.topic_id.clone(),
            turns: Vec::new(),
            error: None,
            conversation: None,
        };
        if let Err(e) = self.check().and_then(|_| conv.validate()) {
            run.error = Some(TurnError {
                turn: 0,
                message: e.to_string(),
            });
            return run;
        }
        let mut state = self.head.map(ConversationState::new);
        let indices: Vec<usize> = conv.turns.iter().map(|t| t.index).collect();
        for i in indices {
            match self.run_turn(&mut conv, i, &mut state) {
                Ok(out) => run.turns.push(out),
                Err(e) => {
                    warn!("topic {} turn {i}: {e}", conv.topic_id);
                    run.error = Some(TurnError {
                        turn: i,
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        run.conversation = Some(conv);
        run
    }

    /// Runs every topic (concurrently) and evaluates against `qrels` when given.
    pub fn run_benchmark(
        &self,
        topics: &[Conversation],
        qrels: Option<&Qrels>,
    ) -> Result<BenchmarkOutput> {
        self.check()?;
        let runs: Vec<ConversationRun> = topics
            .par_iter()
            .map(|c| self.run_conversation(c))
            .collect();
        let mut out = BenchmarkOutput::default();
        for r in runs {
            if let Some(e) = &r.error {
                out.failures.push(TopicFailure {
                    topic_id: r.topic_id.clone(),
                    turn: e.turn,
                    error: e.message.clone(),
                });
            }
            for t in r.turns {
                out.run.push(t.ranked);
                out.retrieval_run.push(t.retrieval);
                out.queries
                    .push((t.log.topic_id.clone(), t.log.turn, t.query));
                out.logs.push(t.log);
            }
        }
        if let Some(q) = qrels {
            out.report = Some(evaluate(&out.run, q, &self.config.metrics)?);
        }
        info!(
            "{} turns run, {} topics failed",
            out.run.len(),
            out.failures.len()
        );
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutput {
    /// First-stage list (fused for union methods).
    pub retrieval: RankedList,
    /// Final list (re-ranked when a head is configured).
    pub ranked: RankedList,
    /// Query used for re-ranking.
    pub query: String,
    pub log: TurnLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnError {
    /// 0 when the topic failed before its first turn.
    pub turn: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversationRun {
    pub topic_id: String,
    pub turns: Vec<TurnOutput>,
    pub error: Option<TurnError>,
    /// The conversation with rewrites and top passages filled in.
    pub conversation: Option<Conversation>,
}

impl ConversationRun {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicFailure {
    pub topic_id: String,
    pub turn: usize,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkOutput {
    pub run: Vec<RankedList>,
    pub retrieval_run: Vec<RankedList>,
    pub logs: Vec<TurnLog>,
    /// (topic, turn, query used for re-ranking)
    pub queries: Vec<(String, usize, String)>,
    pub report: Option<MetricReport>,
    pub failures: Vec<TopicFailure>,
}

impl BenchmarkOutput {
    /// Writes `run.txt`, `retrieval.txt`, `turns.jsonl`, `failures.json`
    /// and, with qrels, `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path, tag: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("run.txt"))?);
        write_run_to(&mut w, &self.run, tag)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("retrieval.txt"))?);
        write_run_to(&mut w, &self.retrieval_run, tag)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("turns.jsonl"))?);
        for l in &self.logs {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        std::fs::write(
            dir.join("failures.json"),
            serde_json::to_string_pretty(&self.failures)?,
        )?;
        if let Some(r) = &self.report {
            std::fs::write(dir.join("metrics.json"), r.to_json()?)?;
        }
        Ok(())
    }
}

/// Reads the per-turn logs written by [`BenchmarkOutput::write`].
pub fn read_turn_logs(path: &Path) -> Result<Vec<TurnLog>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}
