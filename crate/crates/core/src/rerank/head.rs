use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{self, RnnState};
use super::math::{dot, relevant_prob, softmax};
use super::{HeadKind, HeadParams};
use crate::retrieval::{RankedList, ScoredDoc};
use crate::{Error, Result};

/// Per-conversation context carried between turns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub kind: HeadKind,
    /// Recurrent hidden state `h` (recurrent kinds only).
    pub hidden: Vec<f64>,
    /// LSTM memory cell.
    pub cell: Vec<f64>,
    /// Stored top-1 embeddings of earlier turns (memnet).
    pub memories: Vec<Vec<f64>>,
    /// Stored top-1 embeddings of earlier turns (bidirectional kinds).
    pub history: Vec<Vec<f64>>,
}

impl ConversationState {
    pub fn new(params: &HeadParams) -> Self {
        let (hidden, cell) = match params.kind.cell() {
            Some(kind) => {
                let s = RnnState::zeros(kind, params.hidden);
                (s.h, s.c)
            }
            None => (Vec::new(), Vec::new()),
        };
        ConversationState {
            kind: params.kind,
            hidden,
            cell,
            memories: Vec::new(),
            history: Vec::new(),
        }
    }

    fn rnn(&self) -> RnnState {
        RnnState {
            h: self.hidden.clone(),
            c: self.cell.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnScore {
    pub prob_relevant: f64,
    /// Attention over memories, memnet with a non-empty memory only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
}

fn check_dim(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Relevant-class probability of `softmax(FFNN(v))` for a head whose
/// output layer reads `v` directly (linear and memnet).
pub fn linear_forward(emb: &[f64], params: &HeadParams) -> Result<f64> {
    check_dim(params.ffnn_width(), emb)?;
    let (l0, l1) = params.logits(emb);
    Ok(relevant_prob(l0, l1))
}

/// One step of the forward cell: returns the output (the new `h`) and the
/// advanced state.
pub fn rnn_step(
    emb: &[f64],
    state: &ConversationState,
    params: &HeadParams,
) -> Result<(Vec<f64>, ConversationState)> {
    if !params.kind.is_recurrent() {
        return Err(Error::Config(format!(
            "{} head has no recurrent cell",
            params.kind
        )));
    }
    check_dim(params.input_dim, emb)?;
    check_dim(params.hidden, &state.hidden)?;
    let (next, _) = cell::step(&params.cell(false), emb, &state.rnn());
    let mut new_state = state.clone();
    new_state.hidden = next.h.clone();
    new_state.cell = next.c;
    Ok((next.h, new_state))
}

/// Forward hidden state after consuming `history` from a zero state.
pub fn recompute_hidden(history: &[Vec<f64>], params: &HeadParams) -> Result<RnnState> {
    let kind = params
        .kind
        .cell()
        .ok_or_else(|| Error::Config("not a recurrent head".into()))?;
    let p = params.cell(false);
    let mut s = RnnState::zeros(kind, params.hidden);
    for x in history {
        check_dim(params.input_dim, x)?;
        s = cell::step(&p, x, &s).0;
    }
    Ok(s)
}

/// Scores a candidate with a recurrent head.
///
/// Unidirectional heads step the candidate from the threaded hidden state.
/// Bidirectional heads read the sequence `(history…, candidate)` in both
/// directions and concatenate the outputs at the candidate's (last)
/// position. The forward output there equals a step from the threaded
/// state, which always equals a recomputation over `history`. The
/// backward direction starts at the candidate, so its output at that
/// position is one step from a zero state.
pub fn rnn_score(
    candidate: &[f64],
    state: &ConversationState,
    params: &HeadParams,
) -> Result<TurnScore> {
    let (fwd, _) = rnn_step(candidate, state, params)?;
    let features = if params.kind.is_bidirectional() {
        let kind = params.kind.cell().expect("recurrent");
        let (bwd, _) = cell::step(
            &params.cell(true),
            candidate,
            &RnnState::zeros(kind, params.hidden),
        );
        let mut v = fwd;
        v.extend_from_slice(&bwd.h);
        v
    } else {
        fwd
    };
    let (l0, l1) = params.logits(&features);
    Ok(TurnScore {
        prob_relevant: relevant_prob(l0, l1),
        attention: None,
    })
}

/// Single-hop memory read: `a = softmax(emb · m_i)`, `c = Σ a_i m_i`,
/// `P = softmax(FFNN(c + emb))`. With no memories the read is bypassed and
/// the result is exactly [`linear_forward`].
pub fn memnet_score(
    candidate: &[f64],
    memories: &[Vec<f64>],
    params: &HeadParams,
) -> Result<TurnScore> {
    check_dim(params.ffnn_width(), candidate)?;
    if memories.is_empty() {
        return Ok(TurnScore {
            prob_relevant: linear_forward(candidate, params)?,
            attention: None,
        });
    }
    for m in memories {
        check_dim(candidate.len(), m)?;
    }
    let logits: Vec<f64> = memories.iter().map(|m| dot(candidate, m)).collect();
    let attention = softmax(&logits);
    let mut v = candidate.to_vec();
    for (a, m) in attention.iter().zip(memories) {
        for (vi, mi) in v.iter_mut().zip(m) {
            *vi += a * mi;
        }
    }
    let (l0, l1) = params.logits(&v);
    Ok(TurnScore {
        prob_relevant: relevant_prob(l0, l1),
        attention: Some(attention),
    })
}

/// Scores one candidate with whichever head `params` describes.
pub fn score_candidate(
    emb: &[f64],
    state: &ConversationState,
    params: &HeadParams,
) -> Result<TurnScore> {
    match params.kind {
        HeadKind::Linear => Ok(TurnScore {
            prob_relevant: linear_forward(emb, params)?,
            attention: None,
        }),
        HeadKind::MemNet => memnet_score(emb, &state.memories, params),
        _ => rnn_score(emb, state, params),
    }
}

/// Context update after a turn, from the embedding of its top-ranked passage.
pub(crate) fn advance(
    state: &ConversationState,
    top: &[f64],
    params: &HeadParams,
) -> Result<ConversationState> {
    match params.kind {
        HeadKind::Linear => Ok(state.clone()),
        HeadKind::MemNet => {
            let mut s = state.clone();
            s.memories.push(top.to_vec());
            Ok(s)
        }
        kind => {
            let (_, mut s) = rnn_step(top, state, params)?;
            if kind.is_bidirectional() {
                s.history.push(top.to_vec());
            }
            Ok(s)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankOutcome {
    /// Candidates ordered by relevant-class probability.
    pub list: RankedList,
    /// State after storing the new top-1.
    pub state: ConversationState,
    /// Per-candidate scores in the order of `list`.
    pub scores: Vec<TurnScore>,
    /// Embedding of the new top-1 (what was stored).
    pub top_embedding: Option<Vec<f64>>,
}

impl RerankOutcome {
    /// Attention of the top-ranked candidate over the memories.
    pub fn top_attention(&self) -> Option<&[f64]> {
        self.scores.first().and_then(|s| s.attention.as_deref())
    }
}

/// Re-orders `candidates` by the head's probability (doc-id tiebreak) and
/// threads the conversation state through the new top-1.
pub fn rerank_turn(
    candidates: &RankedList,
    embs: &[Vec<f64>],
    state: &ConversationState,
    params: &HeadParams,
) -> Result<RerankOutcome> {
    if candidates.len() != embs.len() {
        return Err(Error::Invalid(format!(
            "{} candidates but {} embeddings",
            candidates.len(),
            embs.len()
        )));
    }
    let scores: Vec<TurnScore> = embs
        .par_iter()
        .map(|e| score_candidate(e, state, params))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .prob_relevant
            .total_cmp(&scores[a].prob_relevant)
            .then_with(|| {
                candidates.entries[a]
                    .doc_id
                    .cmp(&candidates.entries[b].doc_id)
            })
    });

    let entries = order
        .iter()
        .map(|&i| {
            ScoredDoc::new(
                candidates.entries[i].doc_id.clone(),
                scores[i].prob_relevant,
            )
        })
        .collect();
    let list = RankedList {
        turn_key: candidates.turn_key.clone(),
        entries,
    };
    let top_embedding = order.first().map(|&i| embs[i].clone());
    let new_state = match &top_embedding {
        Some(top) => advance(state, top, params)?,
        None => state.clone(),
    };
    let mut scores: Vec<Option<TurnScore>> = scores.into_iter().map(Some).collect();
    let scores = order
        .iter()
        .map(|&i| scores[i].take().expect("each index once"))
        .collect();
    Ok(RerankOutcome {
        list,
        state: new_state,
        scores,
        top_embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = HeadParams::zeros(HeadKind::Linear, 4, 0);
        assert_eq!(linear_forward(&[1.0, -2.0, 3.0, 0.5], &p).unwrap(), 0.5);
    }

    #[test]
    fn equal_logits_give_one_half() {
        let mut p = HeadParams::zeros(HeadKind::Linear, 2, 0);
        // W = [[1, 0], [0, 1]], b = 0, emb = (1, 1) -> logits (1, 1)
        p.values[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear_forward(&[1.0, 1.0], &p).unwrap(), 0.5);
    }

    #[test]
    fn linear_matches_hand_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = 7;
            let p = HeadParams::init(HeadKind::Linear, h, 0, rng.gen()).unwrap();
            let emb = rand_vec(&mut rng, h);
            // oracle: explicit exponentials, no shared helpers
            let mut logits = [0.0f64; 2];
            for (c, logit) in logits.iter_mut().enumerate() {
                *logit = p.values[2 * h + c];
                for j in 0..h {
                    *logit += p.values[c * h + j] * emb[j];
                }
            }
            let expected = logits[1].exp() / (logits[0].exp() + logits[1].exp());
            assert!((linear_forward(&emb, &p).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch() {
        let p = HeadParams::zeros(HeadKind::Linear, 4, 0);
        assert!(matches!(
            linear_forward(&[1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        let p = HeadParams::init(HeadKind::Gru, 4, 3, 0).unwrap();
        let s = ConversationState::new(&p);
        assert!(rnn_step(&[1.0; 5], &s, &p).is_err());
        let m = HeadParams::zeros(HeadKind::MemNet, 2, 0);
        assert!(memnet_score(&[1.0, 0.0], &[vec![1.0]], &m).is_err());
    }

    #[test]
    fn gru_zero_fixed_point() {
        let p = HeadParams::zeros(HeadKind::Gru, 5, 4);
        let s = ConversationState::new(&p);
        let (out, next) = rnn_step(&[0.3, -1.0, 2.0, 0.0, 1.0], &s, &p).unwrap();
        assert_eq!(out, vec![0.0; 4]);
        assert_eq!(next.hidden, vec![0.0; 4]);
    }

    /// Scalar-by-scalar LSTM reference written straight from the cell equations.
    fn lstm_oracle(p: &HeadParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (hi, d) = (p.input_dim, p.hidden);
        let v = &p.values;
        let w = |k: usize, r: usize, col: usize| v[k * d * hi + r * hi + col];
        let u = |k: usize, r: usize, col: usize| v[4 * d * hi + k * d * d + r * d + col];
        let b = |k: usize, r: usize| v[4 * d * hi + 4 * d * d + k * d + r];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h2 = vec![0.0; d];
        let mut c2 = vec![0.0; d];
        for r in 0..d {
            let mut pre = [0.0; 4];
            for (k, pre) in pre.iter_mut().enumerate() {
                *pre = b(k, r);
                for col in 0..hi {
                    *pre += w(k, r, col) * x[col];
                }
                for col in 0..d {
                    *pre += u(k, r, col) * h[col];
                }
            }
            let (i, f, g, o) = (sig(pre[0]), sig(pre[1]), pre[2].tanh(), sig(pre[3]));
            c2[r] = f * c[r] + i * g;
            h2[r] = o * c2[r].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn lstm_step_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = HeadParams::init(HeadKind::Lstm, 6, 5, rng.gen()).unwrap();
            let mut s = ConversationState::new(&p);
            s.hidden = rand_vec(&mut rng, 5);
            s.cell = rand_vec(&mut rng, 5);
            let x = rand_vec(&mut rng, 6);
            let (h, c) = lstm_oracle(&p, &x, &s.hidden, &s.cell);
            let (out, next) = rnn_step(&x, &s, &p).unwrap();
            for j in 0..5 {
                assert!((out[j] - h[j]).abs() < 1e-10);
                assert!((next.cell[j] - c[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn successive_steps_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HeadParams::init(HeadKind::Gru, 4, 3, 1).unwrap();
        let (x1, x2) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 4));
        let s0 = ConversationState::new(&p);
        let (_, s1) = rnn_step(&x1, &s0, &p).unwrap();
        let (_, s2) = rnn_step(&x2, &s1, &p).unwrap();
        let direct = recompute_hidden(&[x1, x2], &p).unwrap();
        assert_eq!(s2.hidden, direct.h);
    }

    #[test]
    fn first_turn_rnn_is_step_then_ffnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = HeadParams::init(HeadKind::Lstm, 4, 3, 2).unwrap();
        let x = rand_vec(&mut rng, 4);
        let s = ConversationState::new(&p);
        let (out, _) = rnn_step(&x, &s, &p).unwrap();
        let (l0, l1) = p.logits(&out);
        assert_eq!(
            rnn_score(&x, &s, &p).unwrap().prob_relevant,
            relevant_prob(l0, l1)
        );
    }

    #[test]
    fn bidirectional_empty_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = HeadParams::init(HeadKind::BiGru, 4, 3, 4).unwrap();
        let x = rand_vec(&mut rng, 4);
        let s = ConversationState::new(&p);
        let fwd = cell::step(&p.cell(false), &x, &RnnState::zeros(cell::CellKind::Gru, 3))
            .0
            .h;
        let bwd = cell::step(&p.cell(true), &x, &RnnState::zeros(cell::CellKind::Gru, 3))
            .0
            .h;
        let (l0, l1) = p.logits(&[fwd, bwd].concat());
        assert_eq!(
            rnn_score(&x, &s, &p).unwrap().prob_relevant,
            relevant_prob(l0, l1)
        );
    }

    #[test]
    fn memnet_single_memory_and_bypass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = HeadParams::init(HeadKind::MemNet, 4, 0, 0).unwrap();
        let emb = rand_vec(&mut rng, 4);
        let mem = rand_vec(&mut rng, 4);
        let one = memnet_score(&emb, std::slice::from_ref(&mem), &p).unwrap();
        assert_eq!(one.attention, Some(vec![1.0]));
        let c_plus: Vec<f64> = emb.iter().zip(&mem).map(|(a, b)| a + b).collect();
        assert_eq!(one.prob_relevant, linear_forward(&c_plus, &p).unwrap());
        let empty = memnet_score(&emb, &[], &p).unwrap();
        assert_eq!(
            empty.prob_relevant.to_bits(),
            linear_forward(&emb, &p).unwrap().to_bits()
        );
        assert!(empty.attention.is_none());
    }

    #[test]
    fn memnet_orthogonal_memories() {
        let p = HeadParams::zeros(HeadKind::MemNet, 2, 0);
        let m = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = memnet_score(&[1.0, 0.0], &m, &p).unwrap();
        let a = s.attention.unwrap();
        // softmax([1, 0]) = (e/(e+1), 1/(e+1))
        let e = std::f64::consts::E;
        assert!((a[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((a[0] - 0.7311).abs() < 1e-4 && (a[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn single_candidate_rerank() {
        let p = HeadParams::init(HeadKind::Gru, 3, 2, 0).unwrap();
        let s = ConversationState::new(&p);
        let list = RankedList::from_entries("t_1", vec![ScoredDoc::new("d", -3.0)]);
        let emb = vec![vec![0.1, 0.2, 0.3]];
        let out = rerank_turn(&list, &emb, &s, &p).unwrap();
        assert_eq!(out.list.doc_ids(), vec!["d"]);
        assert_eq!(out.state, rnn_step(&emb[0], &s, &p).unwrap().1);
    }

    #[test]
    fn rerank_count_mismatch() {
        let p = HeadParams::zeros(HeadKind::Linear, 3, 0);
        let list = RankedList::from_entries(
            "t",
            vec![ScoredDoc::new("a", 1.0), ScoredDoc::new("b", 0.5)],
        );
        assert!(rerank_turn(&list, &[vec![0.0; 3]], &ConversationState::new(&p), &p).is_err());
    }

    #[test]
    fn memnet_rerank_orders_by_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = HeadParams::init(HeadKind::MemNet, 5, 0, 6).unwrap();
        let mut state = ConversationState::new(&p);
        state.memories = vec![rand_vec(&mut rng, 5), rand_vec(&mut rng, 5)];
        let embs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 5)).collect();
        let list = RankedList::from_entries(
            "t",
            vec![
                ScoredDoc::new("a", 3.0),
                ScoredDoc::new("b", 2.0),
                ScoredDoc::new("c", 1.0),
            ],
        );
        let mut expected: Vec<(f64, &str)> = ["a", "b", "c"]
            .iter()
            .zip(&embs)
            .map(|(d, e)| {
                (
                    memnet_score(e, &state.memories, &p).unwrap().prob_relevant,
                    *d,
                )
            })
            .collect();
        expected.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(y.1)));
        let out = rerank_turn(&list, &embs, &state, &p).unwrap();
        assert_eq!(
            out.list.doc_ids(),
            expected.iter().map(|e| e.1).collect::<Vec<_>>()
        );
        assert_eq!(out.state.memories.len(), 3);
        let top = ["a", "b", "c"]
            .iter()
            .position(|d| *d == expected[0].1)
            .unwrap();
        assert_eq!(out.state.memories[2], embs[top]);
    }

    #[test]
    fn linear_order_ignores_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = HeadParams::init(HeadKind::Linear, 4, 0, 1).unwrap();
        let embs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 4)).collect();
        let list = RankedList::from_entries(
            "t",
            (0..4)
                .map(|i| ScoredDoc::new(format!("d{i}"), 0.0))
                .collect(),
        );
        let fresh = ConversationState::new(&p);
        let mut used = fresh.clone();
        used.memories.push(rand_vec(&mut rng, 4));
        let a = rerank_turn(&list, &embs, &fresh, &p).unwrap();
        let b = rerank_turn(&list, &embs, &used, &p).unwrap();
        assert_eq!(a.list, b.list);
    }
}
