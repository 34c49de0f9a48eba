use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Ranked passages for one turn: scores non-increasing, ties by ascending doc id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub turn_key: String,
    pub entries: Vec<ScoredDoc>,
}

/// Descending score, then ascending doc id.
pub(crate) fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub(crate) fn sort_entries(entries: &mut [ScoredDoc]) {
    entries.sort_by(rank_order);
}

impl RankedList {
    /// Sorts `entries` into rank order.
    pub fn from_entries(turn_key: impl Into<String>, mut entries: Vec<ScoredDoc>) -> Self {
        sort_entries(&mut entries);
        RankedList {
            turn_key: turn_key.into(),
            entries,
        }
    }

    pub fn with_key(mut self, turn_key: impl Into<String>) -> Self {
        self.turn_key = turn_key.into();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    pub fn top(&self) -> Option<&ScoredDoc> {
        self.entries.first()
    }

    /// Checks ordering and uniqueness.
    pub fn is_well_formed(&self) -> bool {
        let ordered = self
            .entries
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater);
        let mut ids: Vec<&str> = self.doc_ids();
        ids.sort_unstable();
        ordered && ids.windows(2).all(|w| w[0] != w[1])
    }
}
