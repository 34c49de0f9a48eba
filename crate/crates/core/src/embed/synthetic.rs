use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{EmbeddingKey, EmbeddingProvider, EmbeddingVector};
use crate::{Error, Result};

fn unit_vector(seed_material: &[u8], dim: usize) -> Vec<f32> {
    let seed: [u8; 32] = Sha256::digest(seed_material).into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&raw)
}

fn normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn keyed(parts: &[&[u8]]) -> Vec<u8> {
    let mut material = Vec::new();
    for p in parts {
        material.extend_from_slice(&(p.len() as u64).to_le_bytes());
        material.extend_from_slice(p);
    }
    material
}

/// Unit-norm pseudo-random vector keyed by `(seed, H(query), H(passage))`.
/// ChaCha20 keeps the output identical across runs and platforms.
pub fn synthetic_embed(key: &EmbeddingKey, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "synthetic embeddings need dim >= 2");
    let q = Sha256::digest(key.query.as_bytes());
    let p = Sha256::digest(key.passage.as_bytes());
    let material = keyed(&[b"pair", &seed.to_le_bytes(), &q, &p]);
    EmbeddingVector::new(unit_vector(&material, dim)).expect("finite by construction")
}

fn topic_vector(term: &str, dim: usize, seed: u64) -> Vec<f32> {
    unit_vector(
        &keyed(&[b"topic", &seed.to_le_bytes(), term.as_bytes()]),
        dim,
    )
}

/// First word of the passage, lowercased.
fn topic_term(passage: &str) -> String {
    passage
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_lowercase()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticMode {
    /// Independent vector per pair.
    Plain,
    /// `normalize(v(topic) + epsilon * v(pair))`, where the topic is the
    /// passage's first word, so pairs about the same topic cluster.
    Topical { epsilon: f64 },
}

#[derive(Clone, Debug)]
pub struct SyntheticProvider {
    dim: usize,
    seed: u64,
    mode: SyntheticMode,
}

impl SyntheticProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_mode(dim, seed, SyntheticMode::Plain)
    }

    pub fn with_mode(dim: usize, seed: u64, mode: SyntheticMode) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "synthetic embeddings need dim >= 2, got {dim}"
            )));
        }
        Ok(SyntheticProvider { dim, seed, mode })
    }

    pub fn embed(&self, key: &EmbeddingKey) -> EmbeddingVector {
        let pair = synthetic_embed(key, self.dim, self.seed);
        match self.mode {
            SyntheticMode::Plain => pair,
            SyntheticMode::Topical { epsilon } => {
                let topic = topic_vector(&topic_term(&key.passage), self.dim, self.seed);
                let mixed: Vec<f64> = topic
                    .iter()
                    .zip(pair.values())
                    .map(|(&t, &p)| f64::from(t) + epsilon * f64::from(p))
                    .collect();
                EmbeddingVector::new(normalize(&mixed)).expect("finite by construction")
            }
        }
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        Ok(keys.iter().map(|k| self.embed(k)).collect())
    }
}
