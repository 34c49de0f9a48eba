//! Training data construction, optimisation and cross-validated model selection.

mod data;
mod optim;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{
    binarize_qrels, prepare_conversations, sample_conversations, PreparedConversation, QrelScale,
    QrelSet, SampledTurn, TrainingConversation,
};
pub use optim::{f1, loss, Adam, AdamConfig};

use crate::corpus::DocStore;
use crate::embed::EmbeddingProvider;
use crate::rerank::{
    conversation_gradient, conversation_loss, score_candidate, ConversationState, HeadKind,
    HeadParams, TrainingTurn,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Conversations per optimiser step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Epochs without validation F1 improvement before stopping.
    pub patience: usize,
    pub hidden: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Written after every epoch when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            adam: AdamConfig::default(),
            epochs: 20,
            patience: 3,
            hidden: 64,
            seed: 42,
            threshold: 0.5,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.adam.learning_rate >= 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(Error::Config(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in history {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn turns(c: &PreparedConversation) -> Vec<TrainingTurn<'_>> {
    c.embeddings
        .iter()
        .zip(&c.labels)
        .map(|(e, &l)| TrainingTurn {
            embedding: e,
            label: l,
        })
        .collect()
}

/// Relevant-class probability of every turn, state threaded through the
/// sampled passages.
pub fn conversation_probs(c: &PreparedConversation, params: &HeadParams) -> Result<Vec<f64>> {
    let mut state = ConversationState::new(params);
    let mut out = Vec::with_capacity(c.len());
    for e in &c.embeddings {
        out.push(score_candidate(e, &state, params)?.prob_relevant);
        state = crate::rerank::advance(&state, e, params)?;
    }
    Ok(out)
}

/// Summed loss and positive-class F1 over a set of conversations.
pub fn evaluate_conversations(
    data: &[PreparedConversation],
    params: &HeadParams,
    threshold: f64,
) -> Result<(f64, f64)> {
    let per: Vec<(f64, Vec<f64>)> = data
        .par_iter()
        .map(|c| {
            Ok((
                conversation_loss(&turns(c), params)?,
                conversation_probs(c, params)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (c, (l, probs)) in data.iter().zip(per) {
        total += l;
        preds.extend(probs.iter().map(|&p| p > threshold));
        labels.extend_from_slice(&c.labels);
    }
    Ok((total, f1(&preds, &labels)))
}

/// Optimises a fresh head on prepared conversations.
///
/// Conversation order is reshuffled every epoch from the seed. Each batch
/// is `batch_size` whole conversations; their summed loss gradient drives
/// one Adam step. With `valid` set, training stops after `patience`
/// epochs without a better validation F1 and the best parameters are kept.
pub fn fit(
    train: &[PreparedConversation],
    valid: Option<&[PreparedConversation]>,
    kind: HeadKind,
    input_dim: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = HeadParams::init(kind, input_dim, config.hidden, config.seed)?;
    fit_from(train, valid, params, config)
}

/// As [`fit`], starting from existing parameters.
pub fn fit_from(
    train: &[PreparedConversation],
    valid: Option<&[PreparedConversation]>,
    mut params: HeadParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    let mut adam = Adam::new(config.adam, params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f0e_5ba7_c4e5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let grads: Vec<_> = batch
                .par_iter()
                .map(|&i| conversation_gradient(&turns(&train[i]), &params))
                .collect::<Result<_>>()?;
            let mut sum = vec![0.0; params.values.len()];
            for (g, &i) in grads.iter().zip(batch) {
                epoch_loss += g.loss;
                for (s, v) in sum.iter_mut().zip(&g.params) {
                    *s += v;
                }
                preds.extend(g.probs.iter().map(|&p| p > config.threshold));
                labels.extend_from_slice(&train[i].labels);
            }
            adam.step(&mut params.values, &sum)?;
        }
        let mut rec = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            train_f1: f1(&preds, &labels),
            valid_loss: None,
            valid_f1: None,
        };
        if let Some(v) = valid {
            let (vl, vf) = evaluate_conversations(v, &params, config.threshold)?;
            rec.valid_loss = Some(vl);
            rec.valid_f1 = Some(vf);
        }
        info!(
            "epoch {epoch}: loss {:.4} f1 {:.4} valid f1 {:?}",
            rec.train_loss, rec.train_f1, rec.valid_f1
        );
        if let Some(path) = &config.checkpoint {
            let mut ck = params.clone();
            ck.metadata = serde_json::json!({ "epoch": epoch });
            ck.save(path)?;
        }
        let vf = rec.valid_f1;
        history.push(rec);
        if let Some(vf) = vf {
            if vf > best.0 {
                best = (vf, epoch, params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }

    let (best_epoch, mut params) = if valid.is_some() && best.1 > 0 {
        (best.1, best.2)
    } else {
        (history.len(), params)
    };
    params.metadata = serde_json::json!({
        "epochs_run": history.len(),
        "best_epoch": best_epoch,
        "batch_size": config.batch_size,
        "learning_rate": config.adam.learning_rate,
    });
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Resolves embeddings through `provider` and trains on all conversations.
pub fn train_head(
    conversations: &[TrainingConversation],
    docs: &DocStore,
    kind: HeadKind,
    config: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<TrainOutcome> {
    let data = prepare_conversations(conversations, docs, provider)?;
    fit(&data, None, kind, provider.dim(), config)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
}

/// Seeded topic-level split with a quarter (at least one topic) held out.
pub fn split_topics(topics: &[String], fold: usize, seed: u64) -> TopicSplit {
    let mut t: Vec<String> = topics
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(fold as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    t.shuffle(&mut rng);
    let n_valid = ((t.len() as f64) * 0.25).round().max(1.0) as usize;
    let mut valid = t.split_off(t.len() - n_valid);
    valid.sort();
    t.sort();
    TopicSplit { train: t, valid }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Batch sizes {1, 2, 4} by learning rates {0.001, 0.0001}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut g = Vec::new();
    for batch_size in [1, 2, 4] {
        for learning_rate in [0.001, 0.0001] {
            g.push(GridPoint {
                batch_size,
                learning_rate,
            });
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub selected: GridPoint,
    pub results: Vec<GridResult>,
    pub splits: Vec<TopicSplit>,
}

/// Picks the grid point with the highest mean validation F1 over `folds`
/// seeded 75/25 topic splits (first point wins ties).
pub fn cross_validate(
    data: &[PreparedConversation],
    kind: HeadKind,
    input_dim: usize,
    grid: &[GridPoint],
    base: &TrainConfig,
    folds: usize,
) -> Result<CvOutcome> {
    if grid.is_empty() || folds == 0 {
        return Err(Error::Config(
            "cross-validation needs a grid point and at least one fold".into(),
        ));
    }
    let topics: Vec<String> = data
        .iter()
        .map(|c| c.topic_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if topics.len() < 5 {
        return Err(Error::Invalid(format!(
            "cross-validation needs at least 5 topics, found {}",
            topics.len()
        )));
    }
    let splits: Vec<TopicSplit> = (0..folds)
        .map(|f| split_topics(&topics, f, base.seed))
        .collect();
    let mut results = Vec::new();
    for &point in grid {
        let mut cfg = base.clone();
        cfg.batch_size = point.batch_size;
        cfg.adam.learning_rate = point.learning_rate;
        cfg.checkpoint = None;
        let mut fold_f1 = Vec::new();
        for split in &splits {
            let valid_set: BTreeSet<&str> = split.valid.iter().map(String::as_str).collect();
            let (va, tr): (Vec<PreparedConversation>, Vec<PreparedConversation>) = data
                .iter()
                .cloned()
                .partition(|c| valid_set.contains(c.topic_id.as_str()));
            let out = fit(&tr, Some(&va), kind, input_dim, &cfg)?;
            let (_, vf) = evaluate_conversations(&va, &out.params, cfg.threshold)?;
            fold_f1.push(vf);
        }
        let mean_f1 = fold_f1.iter().sum::<f64>() / fold_f1.len() as f64;
        info!("grid {point:?}: mean validation f1 {mean_f1:.4}");
        results.push(GridResult {
            point,
            fold_f1,
            mean_f1,
        });
    }
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_f1 > results[best].mean_f1 {
            best = i;
        }
    }
    Ok(CvOutcome {
        selected: results[best].point,
        results,
        splits,
    })
}
