//! (query, passage) pair embeddings: the re-rankers' only input.

mod cache;
mod synthetic;

pub use cache::{key_digest, CachedProvider, EmbeddingCache};
pub use synthetic::{synthetic_embed, SyntheticMode, SyntheticProvider};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default width of a BASE-size encoder's [CLS] vector.
pub const DEFAULT_DIM: usize = 768;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding has zero dimension".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("embedding value {i} is not finite")));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub query: String,
    pub passage: String,
}

impl EmbeddingKey {
    pub fn new(query: impl Into<String>, passage: impl Into<String>) -> Result<Self> {
        let key = EmbeddingKey {
            query: query.into(),
            passage: passage.into(),
        };
        if key.query.is_empty() || key.passage.is_empty() {
            return Err(Error::Invalid(
                "embedding key needs a non-empty query and passage".into(),
            ));
        }
        Ok(key)
    }
}

/// A source of pair embeddings with a fixed, declared width. Implementations
/// must return the same vector for the same key and tolerate concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(keys)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(keys)
    }
}

/// Embeds every key, checking the provider honoured its declared width.
pub fn embed_pairs(
    keys: &[EmbeddingKey],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>> {
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    let out = provider.embed_batch(keys)?;
    if out.len() != keys.len() {
        return Err(Error::Transport(format!(
            "provider returned {} embeddings for {} pairs",
            out.len(),
            keys.len()
        )));
    }
    let expected = provider.dim();
    if let Some(v) = out.iter().find(|v| v.dim() != expected) {
        return Err(Error::DimensionMismatch {
            expected,
            actual: v.dim(),
        });
    }
    Ok(out)
}

pub fn embed_pair(key: &EmbeddingKey, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector> {
    Ok(embed_pairs(std::slice::from_ref(key), provider)?
        .pop()
        .expect("one key in, one vector out"))
}
