//! Passage corpus ingestion, text analysis and the inverted index.

mod analysis;
mod index;
mod stem;
mod store;

pub(crate) use analysis::parse_word_list;
pub use analysis::{tokenize, AnalysisConfig, Stemmer};
pub use index::{build_index, InvertedIndex, Posting};
pub use stem::{kstem_like, porter};
pub use store::{read_corpus, DocStore};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One passage of the collection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageDoc {
    pub id: String,
    pub text: String,
}

impl PassageDoc {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc = PassageDoc {
            id: id.into(),
            text: text.into(),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Invalid("document id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::Invalid(format!(
                "document {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}
