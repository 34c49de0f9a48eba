use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stem;
use crate::{Error, Result};

const ENGLISH_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stemmer {
    None,
    #[default]
    Porter,
    KstemLike,
}

impl Stemmer {
    pub fn apply(self, token: &str) -> String {
        match self {
            Stemmer::None => token.to_string(),
            Stemmer::Porter => stem::porter(token),
            Stemmer::KstemLike => stem::kstem_like(token),
        }
    }
}

impl std::str::FromStr for Stemmer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Stemmer::None),
            "porter" => Ok(Stemmer::Porter),
            "kstem-like" | "kstem" => Ok(Stemmer::KstemLike),
            other => Err(Error::Config(format!("unknown stemmer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub stemmer: Stemmer,
    stopwords: BTreeSet<String>,
    pub lowercase: bool,
}

impl AnalysisConfig {
    pub fn new<I, S>(stemmer: Stemmer, stopwords: I, lowercase: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let stopwords: BTreeSet<String> = stopwords.into_iter().map(Into::into).collect();
        if stopwords.iter().any(|w| w.is_empty()) {
            return Err(Error::Config(
                "stopword list contains an empty entry".into(),
            ));
        }
        Ok(AnalysisConfig {
            stemmer,
            stopwords,
            lowercase,
        })
    }

    /// Porter stemming, lowercasing and the bundled English stopword list.
    pub fn english() -> Self {
        Self::with_stemmer(Stemmer::Porter)
    }

    pub fn with_stemmer(stemmer: Stemmer) -> Self {
        let words = parse_word_list(ENGLISH_STOPWORDS);
        AnalysisConfig {
            stemmer,
            stopwords: words,
            lowercase: true,
        }
    }

    /// Reads a stopword list: one word per line, `#` starts a comment.
    pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
        Ok(parse_word_list(&std::fs::read_to_string(path)?))
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self::english()
    }
}

pub(crate) fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits `text` on Unicode whitespace and punctuation, then lowercases,
/// drops stopwords and stems, preserving token order.
pub fn tokenize(text: &str, config: &AnalysisConfig) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter_map(|raw| {
            let token = if config.lowercase {
                raw.to_lowercase()
            } else {
                raw.to_string()
            };
            if config.is_stopword(&token) {
                None
            } else {
                Some(config.stemmer.apply(&token))
            }
        })
        .collect()
}
