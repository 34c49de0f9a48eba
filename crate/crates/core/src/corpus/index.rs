use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::{tokenize, AnalysisConfig, PassageDoc};
use crate::binio::{read_header, read_str, write_header, write_str};
use crate::{Error, Result};

const MANIFEST_MAGIC: &[u8; 4] = b"CSIX";
const POSTINGS_MAGIC: &[u8; 4] = b"CSPL";
const FORMAT_VERSION: u8 = 1;
const MANIFEST_FILE: &str = "manifest.bin";
const POSTINGS_FILE: &str = "postings.bin";

/// Document ordinal plus term frequency. Ordinals follow ascending
/// external document id, so postings sorted by ordinal are sorted by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable term-level inverted index with the collection statistics
/// needed by BM25 and the query-likelihood models.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    analysis: AnalysisConfig,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    collection_freq: BTreeMap<String, u64>,
    total_tokens: u64,
}

/// Builds an index over `docs`. Documents are analysed in parallel; the
/// result does not depend on input order.
pub fn build_index<I>(docs: I, config: &AnalysisConfig) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = PassageDoc>,
{
    let mut docs: Vec<PassageDoc> = docs.into_iter().collect();
    for d in &docs {
        d.validate()?;
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::DuplicateDocument(w[0].id.clone()));
    }

    let token_streams: Vec<Vec<String>> =
        docs.par_iter().map(|d| tokenize(&d.text, config)).collect();

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut collection_freq: BTreeMap<String, u64> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    let mut total_tokens = 0u64;
    for (ord, tokens) in token_streams.iter().enumerate() {
        let mut tfs: BTreeMap<&str, u32> = BTreeMap::new();
        for t in tokens {
            *tfs.entry(t.as_str()).or_default() += 1;
        }
        for (term, tf) in tfs {
            postings.entry(term.to_string()).or_default().push(Posting {
                doc: ord as u32,
                tf,
            });
            *collection_freq.entry(term.to_string()).or_default() += u64::from(tf);
        }
        doc_lengths.push(tokens.len() as u32);
        total_tokens += tokens.len() as u64;
    }

    Ok(InvertedIndex {
        analysis: config.clone(),
        doc_ids: docs.into_iter().map(|d| d.id).collect(),
        doc_lengths,
        postings,
        collection_freq,
        total_tokens,
    })
}

impl InvertedIndex {
    pub fn analysis(&self) -> &AnalysisConfig {
        &self.analysis
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_ordinal(&self, id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn doc_id(&self, ord: u32) -> &str {
        &self.doc_ids[ord as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, ord: u32) -> u32 {
        self.doc_lengths[ord as usize]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn collection_freq(&self, term: &str) -> u64 {
        self.collection_freq.get(term).copied().unwrap_or(0)
    }

    /// p(t|C): the term's share of all collection tokens.
    pub fn collection_prob(&self, term: &str) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.collection_freq(term) as f64 / self.total_tokens as f64
        }
    }

    pub fn term_freq(&self, term: &str, ord: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&ord, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    /// Writes `manifest.bin` and `postings.bin` into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut m = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        write_header(&mut m, MANIFEST_MAGIC, FORMAT_VERSION)?;
        write_str(&mut m, &serde_json::to_string(&self.analysis)?)?;
        m.write_u32::<LittleEndian>(self.doc_ids.len() as u32)?;
        m.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        m.write_u64::<LittleEndian>(self.total_tokens)?;
        m.flush()?;

        let mut p = BufWriter::new(File::create(dir.join(POSTINGS_FILE))?);
        write_header(&mut p, POSTINGS_MAGIC, FORMAT_VERSION)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut p, id)?;
            p.write_u32::<LittleEndian>(*len)?;
        }
        for (term, list) in &self.postings {
            write_str(&mut p, term)?;
            p.write_u64::<LittleEndian>(self.collection_freq[term])?;
            p.write_u32::<LittleEndian>(list.len() as u32)?;
            for posting in list {
                p.write_u32::<LittleEndian>(posting.doc)?;
                p.write_u32::<LittleEndian>(posting.tf)?;
            }
        }
        p.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut m = BufReader::new(File::open(dir.join(MANIFEST_FILE))?);
        read_header(&mut m, MANIFEST_MAGIC, FORMAT_VERSION)?;
        let analysis: AnalysisConfig = serde_json::from_str(&read_str(&mut m)?)?;
        let doc_count = m.read_u32::<LittleEndian>()? as usize;
        let term_count = m.read_u32::<LittleEndian>()? as usize;
        let total_tokens = m.read_u64::<LittleEndian>()?;

        let mut p = BufReader::new(File::open(dir.join(POSTINGS_FILE))?);
        read_header(&mut p, POSTINGS_MAGIC, FORMAT_VERSION)?;
        let mut doc_ids = Vec::with_capacity(doc_count);
        let mut doc_lengths = Vec::with_capacity(doc_count);
        for _ in 0..doc_count {
            doc_ids.push(read_str(&mut p)?);
            doc_lengths.push(p.read_u32::<LittleEndian>()?);
        }
        let mut postings = BTreeMap::new();
        let mut collection_freq = BTreeMap::new();
        for _ in 0..term_count {
            let term = read_str(&mut p)?;
            let cf = p.read_u64::<LittleEndian>()?;
            let n = p.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let doc = p.read_u32::<LittleEndian>()?;
                let tf = p.read_u32::<LittleEndian>()?;
                list.push(Posting { doc, tf });
            }
            postings.insert(term.clone(), list);
            collection_freq.insert(term, cf);
        }

        let index = InvertedIndex {
            analysis,
            doc_ids,
            doc_lengths,
            postings,
            collection_freq,
            total_tokens,
        };
        index.check_invariants().map_err(Error::Format)?;
        Ok(index)
    }

    /// Verifies the structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err("document ids not strictly increasing".into());
        }
        if self.doc_ids.len() != self.doc_lengths.len() {
            return Err("document length table size mismatch".into());
        }
        let len_sum: u64 = self.doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if len_sum != self.total_tokens {
            return Err(format!(
                "sum of doc lengths {len_sum} != total tokens {}",
                self.total_tokens
            ));
        }
        for (term, list) in &self.postings {
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err(format!("postings for {term:?} not sorted"));
            }
            if list
                .iter()
                .any(|p| p.doc as usize >= self.doc_ids.len() || p.tf == 0)
            {
                return Err(format!("postings for {term:?} reference a bad document"));
            }
            let tf_sum: u64 = list.iter().map(|p| u64::from(p.tf)).sum();
            if self.collection_freq.get(term) != Some(&tf_sum) {
                return Err(format!(
                    "collection frequency of {term:?} disagrees with postings"
                ));
            }
        }
        Ok(())
    }
}
