#![allow(dead_code)]

use convsearch::eval::{ndcg_at_k, Gain, Judgments};
use convsearch::rerank::{rerank_turn, ConversationState, HeadParams};
use convsearch::retrieval::{RankedList, ScoredDoc};
use convsearch::train::PreparedConversation;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Synthetic conversations where the relevant passage of turn `t` is about
/// the topic of turn `t - 1`'s query.
///
/// Coordinate 0 is `opening` on pairs from the first turn and `later`
/// afterwards; the others are topics. A (query, passage) pair embeds as
/// `beta * u(passage topic) + alpha * u(query topic) + marker(t) * u0`
/// plus Gaussian noise on the topic coordinates.
#[derive(Clone, Debug)]
pub struct ContextTask {
    pub dim: usize,
    pub turns: usize,
    pub decoys: usize,
    pub alpha: f64,
    pub beta: f64,
    pub opening: f64,
    pub later: f64,
    pub noise: f64,
}

impl Default for ContextTask {
    fn default() -> Self {
        ContextTask {
            dim: 32,
            turns: 8,
            decoys: 5,
            alpha: 2.5,
            beta: 2.5,
            opening: 3.0,
            later: 1.0,
            noise: 0.3,
        }
    }
}

/// One evaluation conversation: per turn, candidate embeddings and the
/// position of the relevant one.
#[derive(Clone, Debug)]
pub struct EvalConversation {
    pub turns: Vec<Vec<Vec<f64>>>,
    pub relevant: Vec<usize>,
}

impl ContextTask {
    /// `turn` is 1-based.
    pub fn pair(
        &self,
        rng: &mut ChaCha8Rng,
        turn: usize,
        query_topic: usize,
        passage_topic: usize,
    ) -> Vec<f64> {
        let normal = Normal::new(0.0, self.noise).unwrap();
        let mut v: Vec<f64> = (0..self.dim)
            .map(|i| if i == 0 { 0.0 } else { normal.sample(rng) })
            .collect();
        v[0] = if turn == 1 { self.opening } else { self.later };
        v[query_topic] += self.alpha;
        v[passage_topic] += self.beta;
        v
    }

    /// (query topics, decoy topics) of a fresh conversation.
    fn topics(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
        let mut all: Vec<usize> = (1..self.dim).collect();
        all.shuffle(rng);
        let queries = all[..self.turns].to_vec();
        (queries, all[self.turns..].to_vec())
    }

    fn relevant_topic(queries: &[usize], t: usize) -> usize {
        queries[t.saturating_sub(1)]
    }

    /// Training conversations: one passage per turn, relevant half the time.
    pub fn training(&self, n: usize, seed: u64) -> Vec<PreparedConversation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|c| {
                let (queries, decoys) = self.topics(&mut rng);
                let mut embeddings = Vec::new();
                let mut labels = Vec::new();
                for t in 0..self.turns {
                    let label = rng.gen_bool(0.5);
                    let topic = if label {
                        Self::relevant_topic(&queries, t)
                    } else {
                        *decoys.choose(&mut rng).unwrap()
                    };
                    embeddings.push(self.pair(&mut rng, t + 1, queries[t], topic));
                    labels.push(label);
                }
                PreparedConversation {
                    topic_id: format!("c{c}"),
                    embeddings,
                    labels,
                }
            })
            .collect()
    }

    pub fn evaluation(&self, n: usize, seed: u64) -> Vec<EvalConversation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (queries, decoys) = self.topics(&mut rng);
                let mut turns = Vec::new();
                let mut relevant = Vec::new();
                for t in 0..self.turns {
                    let mut cands: Vec<Vec<f64>> = decoys
                        .choose_multiple(&mut rng, self.decoys)
                        .copied()
                        .collect::<Vec<_>>()
                        .into_iter()
                        .map(|d| self.pair(&mut rng, t + 1, queries[t], d))
                        .collect();
                    let at = rng.gen_range(0..=cands.len());
                    cands.insert(
                        at,
                        self.pair(
                            &mut rng,
                            t + 1,
                            queries[t],
                            Self::relevant_topic(&queries, t),
                        ),
                    );
                    turns.push(cands);
                    relevant.push(at);
                }
                EvalConversation { turns, relevant }
            })
            .collect()
    }
}

/// Mean nDCG@3 of re-ranking each turn's candidates, with state threaded
/// through the head's own top-1.
pub fn rerank_ndcg(conversations: &[EvalConversation], params: &HeadParams) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for conv in conversations {
        let mut state = ConversationState::new(params);
        for (t, cands) in conv.turns.iter().enumerate() {
            let mut judg = Judgments::new();
            judg.insert(format!("d{}", conv.relevant[t]), 1);
            // equal retrieval scores: order comes from the head alone
            let list = RankedList::from_entries(
                format!("c_{}", t + 1),
                (0..cands.len())
                    .map(|i| ScoredDoc::new(format!("d{i}"), 0.0))
                    .collect(),
            );
            let out = rerank_turn(&list, cands, &state, params).unwrap();
            total += ndcg_at_k(&out.list.doc_ids(), &judg, 3, Gain::Exponential).unwrap();
            n += 1;
            state = out.state;
        }
    }
    total / n as f64
}
