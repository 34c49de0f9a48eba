use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::PassageDoc;
use crate::{Error, Result};

const STORE_FILE: &str = "docs.jsonl";

/// Reads a corpus file: one `{"id": ..., "text": ...}` object per line.
/// Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<PassageDoc>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: PassageDoc =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        doc.validate()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Passage text by document id, kept next to the index so the re-ranker
/// can embed (query, passage) pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocStore {
    texts: BTreeMap<String, String>,
}

impl DocStore {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a PassageDoc>) -> Self {
        DocStore {
            texts: docs
                .into_iter()
                .map(|d| (d.id.clone(), d.text.clone()))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.texts.get(id).map(String::as_str)
    }

    pub fn text(&self, id: &str) -> Result<&str> {
        self.get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(STORE_FILE))?);
        for (id, text) in &self.texts {
            let doc = PassageDoc {
                id: id.clone(),
                text: text.clone(),
            };
            serde_json::to_writer(&mut w, &doc)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let docs = read_corpus(&dir.join(STORE_FILE))?;
        Ok(Self::from_docs(&docs))
    }
}
