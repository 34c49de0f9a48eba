//! Training loss and its exact gradient.
//!
//! A training conversation is a sequence of turns, each with one pair
//! embedding and a binary label. The context for turn `t` is built from
//! the embeddings of turns `1..t`, exactly as at inference time with those
//! embeddings in place of the top-1 passages.

use super::cell::{self, CellGrads, RnnState, StepCache};
use super::head::{advance, score_candidate, ConversationState};
use super::math::{dot, relevant_prob, softmax};
use super::HeadParams;
use crate::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct TrainingTurn<'a> {
    pub embedding: &'a [f64],
    pub label: bool,
}

/// Cross-entropy of one prediction, probability clamped to `[1e-12, 1 - 1e-12]`.
pub fn turn_loss(prob: f64, label: bool) -> f64 {
    let s = prob.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if label {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

fn clamped(prob: f64) -> bool {
    !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&prob)
}

/// Summed loss over a conversation, evaluated with the inference code path.
pub fn conversation_loss(turns: &[TrainingTurn], params: &HeadParams) -> Result<f64> {
    let mut state = ConversationState::new(params);
    let mut loss = 0.0;
    for t in turns {
        loss += turn_loss(
            score_candidate(t.embedding, &state, params)?.prob_relevant,
            t.label,
        );
        state = advance(&state, t.embedding, params)?;
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversationGradient {
    pub loss: f64,
    /// Per-turn relevant-class probabilities.
    pub probs: Vec<f64>,
    /// dL/dθ in the flat parameter layout.
    pub params: Vec<f64>,
    /// dL/d(embedding) per turn.
    pub inputs: Vec<Vec<f64>>,
}

/// Adds the output-layer gradient for features `v` and returns dL/dv.
fn ffnn_backward(params: &HeadParams, v: &[f64], dl1: f64, grad: &mut [f64]) -> Vec<f64> {
    let f = params.ffnn_width();
    let r = params.ffnn_range();
    let (w, _) = params.ffnn();
    let g = &mut grad[r];
    // logits (l0, l1): dl0 = -dl1
    for (c, dl) in [(0usize, -dl1), (1, dl1)] {
        for j in 0..f {
            g[c * f + j] += dl * v[j];
        }
        g[2 * f + c] += dl;
    }
    (0..f).map(|j| dl1 * (w[f + j] - w[j])).collect()
}

/// Forward pass to features, returns (prob, dL/d(l1 - l0)).
fn output_grad(params: &HeadParams, v: &[f64], label: bool) -> (f64, f64, f64) {
    let (l0, l1) = params.logits(v);
    let s = relevant_prob(l0, l1);
    let y = if label { 1.0 } else { 0.0 };
    let d = if clamped(s) { 0.0 } else { s - y };
    (s, turn_loss(s, label), d)
}

/// Exact gradient of the summed conversation loss (backpropagation
/// through the whole conversation for recurrent heads).
pub fn conversation_gradient(
    turns: &[TrainingTurn],
    params: &HeadParams,
) -> Result<ConversationGradient> {
    let n_in = params.input_dim;
    for t in turns {
        if t.embedding.len() != n_in {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                actual: t.embedding.len(),
            });
        }
    }
    let mut grad = vec![0.0; params.values.len()];
    let mut inputs = vec![vec![0.0; n_in]; turns.len()];
    let mut probs = Vec::with_capacity(turns.len());
    let mut loss = 0.0;

    match params.kind.cell() {
        None if params.kind == super::HeadKind::Linear => {
            for (t, turn) in turns.iter().enumerate() {
                let (s, l, d) = output_grad(params, turn.embedding, turn.label);
                probs.push(s);
                loss += l;
                inputs[t] = ffnn_backward(params, turn.embedding, d, &mut grad);
            }
        }
        None => {
            for (t, turn) in turns.iter().enumerate() {
                let e = turn.embedding;
                let mems = &turns[..t];
                let att = if mems.is_empty() {
                    Vec::new()
                } else {
                    softmax(&mems.iter().map(|m| dot(e, m.embedding)).collect::<Vec<_>>())
                };
                let mut v = e.to_vec();
                for (a, m) in att.iter().zip(mems) {
                    for (vi, mi) in v.iter_mut().zip(m.embedding) {
                        *vi += a * mi;
                    }
                }
                let (s, l, d) = output_grad(params, &v, turn.label);
                probs.push(s);
                loss += l;
                let dv = ffnn_backward(params, &v, d, &mut grad);
                for (x, g) in inputs[t].iter_mut().zip(&dv) {
                    *x += g;
                }
                if att.is_empty() {
                    continue;
                }
                let da: Vec<f64> = mems.iter().map(|m| dot(&dv, m.embedding)).collect();
                let mean: f64 = att.iter().zip(&da).map(|(a, d)| a * d).sum();
                for (i, m) in mems.iter().enumerate() {
                    let dlogit = att[i] * (da[i] - mean);
                    for j in 0..n_in {
                        inputs[i][j] += att[i] * dv[j] + dlogit * e[j];
                        inputs[t][j] += dlogit * m.embedding[j];
                    }
                }
            }
        }
        Some(kind) => {
            let d = params.hidden;
            let bi = params.kind.is_bidirectional();
            let fwd = params.cell(false);
            let mut states = Vec::with_capacity(turns.len());
            let mut caches: Vec<StepCache> = Vec::with_capacity(turns.len());
            let mut bwd_caches: Vec<StepCache> = Vec::new();
            let mut dfeat_h = Vec::with_capacity(turns.len());
            let mut prev = RnnState::zeros(kind, d);
            for turn in turns {
                let (next, cache) = cell::step(&fwd, turn.embedding, &prev);
                caches.push(cache);
                let mut v = next.h.clone();
                if bi {
                    let (b, bc) = cell::step(
                        &params.cell(true),
                        turn.embedding,
                        &RnnState::zeros(kind, d),
                    );
                    bwd_caches.push(bc);
                    v.extend_from_slice(&b.h);
                }
                let (s, l, dl) = output_grad(params, &v, turn.label);
                probs.push(s);
                loss += l;
                dfeat_h.push(ffnn_backward(params, &v, dl, &mut grad));
                states.push(next.clone());
                prev = next;
            }

            if bi {
                let bwd = params.cell(true);
                let mut g = grad[params.cell_range(true)].to_vec();
                {
                    let mut cg = CellGrads::split(kind, n_in, d, &mut g);
                    for (t, cache) in bwd_caches.iter().enumerate() {
                        let mut dn = RnnState::zeros(kind, d);
                        dn.h.copy_from_slice(&dfeat_h[t][d..]);
                        let (dx, _) = cell::step_backward(&bwd, cache, &dn, &mut cg);
                        for (x, v) in inputs[t].iter_mut().zip(dx) {
                            *x += v;
                        }
                    }
                }
                grad[params.cell_range(true)].copy_from_slice(&g);
            }

            let mut g = grad[params.cell_range(false)].to_vec();
            {
                let mut cg = CellGrads::split(kind, n_in, d, &mut g);
                let mut carry = RnnState::zeros(kind, d);
                for t in (0..turns.len()).rev() {
                    for (c, v) in carry.h.iter_mut().zip(&dfeat_h[t][..d]) {
                        *c += v;
                    }
                    let (dx, dprev) = cell::step_backward(&fwd, &caches[t], &carry, &mut cg);
                    for (x, v) in inputs[t].iter_mut().zip(dx) {
                        *x += v;
                    }
                    carry = dprev;
                }
            }
            grad[params.cell_range(false)].copy_from_slice(&g);
        }
    }

    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("conversation gradient".into()));
    }
    Ok(ConversationGradient {
        loss,
        probs,
        params: grad,
        inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::HeadKind;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(Vec<f64>, bool)> {
        (0..n)
            .map(|_| {
                (
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen(),
                )
            })
            .collect()
    }

    fn as_turns(data: &[(Vec<f64>, bool)]) -> Vec<TrainingTurn<'_>> {
        data.iter()
            .map(|(e, l)| TrainingTurn {
                embedding: e,
                label: *l,
            })
            .collect()
    }

    #[test]
    fn loss_values() {
        assert!((turn_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((turn_loss(0.25, false) - (-(0.75f64).ln())).abs() < 1e-15);
        assert!((turn_loss(0.0, true) - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(turn_loss(1.0, false).is_finite());
    }

    #[test]
    fn loss_matches_gradient_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in HeadKind::ALL {
            let p = HeadParams::init(kind, 4, 3, 9).unwrap();
            let data = sample(&mut rng, 5, 4);
            let turns = as_turns(&data);
            let a = conversation_loss(&turns, &p).unwrap();
            let b = conversation_gradient(&turns, &p).unwrap().loss;
            assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for kind in HeadKind::ALL {
            let mut p = HeadParams::init(kind, 3, 2, rng.gen()).unwrap();
            let data = sample(&mut rng, 4, 3);
            let g = conversation_gradient(&as_turns(&data), &p).unwrap();
            for i in 0..p.values.len() {
                let orig = p.values[i];
                p.values[i] = orig + h;
                let up = conversation_loss(&as_turns(&data), &p).unwrap();
                p.values[i] = orig - h;
                let down = conversation_loss(&as_turns(&data), &p).unwrap();
                p.values[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let err =
                    (numeric - g.params[i]).abs() / numeric.abs().max(g.params[i].abs()).max(1e-8);
                assert!(err < 1e-4, "{kind} param {i}: {numeric} vs {}", g.params[i]);
            }
            for t in 0..data.len() {
                for j in 0..3 {
                    let mut d = data.clone();
                    d[t].0[j] += h;
                    let up = conversation_loss(&as_turns(&d), &p).unwrap();
                    d[t].0[j] -= 2.0 * h;
                    let down = conversation_loss(&as_turns(&d), &p).unwrap();
                    let numeric = (up - down) / (2.0 * h);
                    let err = (numeric - g.inputs[t][j]).abs()
                        / numeric.abs().max(g.inputs[t][j].abs()).max(1e-8);
                    assert!(
                        err < 1e-4,
                        "{kind} input {t},{j}: {numeric} vs {}",
                        g.inputs[t][j]
                    );
                }
            }
        }
    }

    #[test]
    fn clamped_turn_has_no_gradient() {
        let mut p = HeadParams::zeros(HeadKind::Linear, 1, 0);
        let f = p.ffnn_width();
        // l1 - l0 = 100 -> s rounds to 1
        p.values[2 * f + 1] = 100.0;
        let e = [0.3];
        let g = conversation_gradient(
            &[TrainingTurn {
                embedding: &e,
                label: false,
            }],
            &p,
        )
        .unwrap();
        assert!(g.params.iter().all(|v| *v == 0.0));
        assert_eq!(g.loss, -(1.0 - (1.0 - 1e-12f64)).ln());
    }

    #[test]
    fn empty_conversation() {
        let p = HeadParams::init(HeadKind::BiLstm, 3, 2, 0).unwrap();
        let g = conversation_gradient(&[], &p).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.params.iter().all(|v| *v == 0.0));
    }
}
