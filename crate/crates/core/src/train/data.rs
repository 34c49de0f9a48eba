use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::DocStore;
use crate::embed::{embed_pairs, EmbeddingKey, EmbeddingProvider};
use crate::eval::Qrels;
use crate::rewrite::{Conversation, QuerySource};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QrelScale {
    /// Grades 0..=2, positive from 1.
    ZeroTwo,
    /// Grades 0..=4, positive from 3.
    ZeroFour,
}

impl QrelScale {
    pub fn max_grade(self) -> i32 {
        match self {
            QrelScale::ZeroTwo => 2,
            QrelScale::ZeroFour => 4,
        }
    }

    pub fn binarize(self, grade: i32) -> Result<i32> {
        if !(0..=self.max_grade()).contains(&grade) {
            return Err(Error::Invalid(format!(
                "grade {grade} outside the 0..={} scale",
                self.max_grade()
            )));
        }
        let cut = match self {
            QrelScale::ZeroTwo => 1,
            QrelScale::ZeroFour => 3,
        };
        Ok(i32::from(grade >= cut))
    }
}

impl FromStr for QrelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_two" | "0_2" | "2" => Ok(QrelScale::ZeroTwo),
            "zero_four" | "0_4" | "4" => Ok(QrelScale::ZeroFour),
            other => Err(Error::Config(format!("unknown qrel scale `{other}`"))),
        }
    }
}

/// Graded qrels with their declared scale.
#[derive(Clone, Debug, PartialEq)]
pub struct QrelSet {
    pub qrels: Qrels,
    pub scale: QrelScale,
}

impl QrelSet {
    pub fn new(qrels: Qrels, scale: QrelScale) -> Result<Self> {
        qrels.map_grades(|g| scale.binarize(g))?;
        Ok(QrelSet { qrels, scale })
    }
}

/// Maps every grade to 0/1 by the set's scale.
pub fn binarize_qrels(set: &QrelSet) -> Result<Qrels> {
    set.qrels.map_grades(|g| set.scale.binarize(g))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledTurn {
    pub turn: usize,
    pub query: String,
    pub doc_id: String,
    pub label: bool,
}

/// One passage per turn, drawn from that turn's judgments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingConversation {
    pub topic_id: String,
    pub turns: Vec<SampledTurn>,
}

fn topic_rng(topic_id: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(topic_id.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::from_seed(d.into())
}

/// Builds `X` conversations for a topic, `X` being the number of judged
/// passages in turn 1.
///
/// Each turn's judged pool is shuffled and dealt to the conversations in
/// order; when it runs out a fresh shuffle of the same pool is dealt.
/// Turns without judgments are left out of every conversation.
pub fn sample_conversations(
    topic: &Conversation,
    binary: &Qrels,
    source: QuerySource,
    seed: u64,
) -> Result<Vec<TrainingConversation>> {
    let mut rng = topic_rng(&topic.topic_id, seed);
    let mut pools: Vec<(usize, String, Vec<(String, bool)>)> = Vec::new();
    for turn in &topic.turns {
        let key = topic.turn_key(turn.index);
        let pool: Vec<(String, bool)> = binary
            .get(&key)
            .map(|j| j.iter().map(|(d, &g)| (d.clone(), g > 0)).collect())
            .unwrap_or_default();
        if pool.is_empty() {
            if turn.index == 1 {
                return Err(Error::Invalid(format!(
                    "topic {} has no judged passage in turn 1",
                    topic.topic_id
                )));
            }
            warn!("{key}: no judged passages, turn left out of training conversations");
            continue;
        }
        pools.push((turn.index, source.text(turn)?.to_string(), pool));
    }
    let x = pools.first().map_or(0, |p| p.2.len());
    let mut convs: Vec<TrainingConversation> = (0..x)
        .map(|_| TrainingConversation {
            topic_id: topic.topic_id.clone(),
            turns: Vec::new(),
        })
        .collect();
    for (index, query, pool) in &pools {
        let mut deck: Vec<usize> = Vec::new();
        for conv in convs.iter_mut() {
            if deck.is_empty() {
                deck = (0..pool.len()).collect();
                deck.shuffle(&mut rng);
                deck.reverse();
            }
            let (doc_id, label) = &pool[deck.pop().expect("refilled")];
            conv.turns.push(SampledTurn {
                turn: *index,
                query: query.clone(),
                doc_id: doc_id.clone(),
                label: *label,
            });
        }
    }
    Ok(convs)
}

/// A training conversation with its pair embeddings resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedConversation {
    pub topic_id: String,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl PreparedConversation {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Embeds every (query, passage) pair in one provider batch.
pub fn prepare_conversations(
    conversations: &[TrainingConversation],
    docs: &DocStore,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PreparedConversation>> {
    let mut keys = Vec::new();
    for c in conversations {
        for t in &c.turns {
            keys.push(EmbeddingKey::new(t.query.clone(), docs.text(&t.doc_id)?)?);
        }
    }
    let mut vecs = embed_pairs(&keys, provider)?.into_iter();
    Ok(conversations
        .iter()
        .map(|c| PreparedConversation {
            topic_id: c.topic_id.clone(),
            embeddings: c
                .turns
                .iter()
                .map(|_| vecs.next().expect("one vector per turn").to_f64())
                .collect(),
            labels: c.turns.iter().map(|t| t.label).collect(),
        })
        .collect())
}
