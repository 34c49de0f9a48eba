use std::collections::BTreeSet;
use std::sync::OnceLock;

use super::{Conversation, CorefClusters, Mention};
use crate::{Error, Result};

const PRONOUNS: &str = include_str!("../../data/pronouns_en.txt");

/// The closed English pronoun list used to decide whether a mention needs
/// replacing.
pub fn pronouns() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| crate::corpus::parse_word_list(PRONOUNS))
}

/// True if any word of `text` is a pronoun.
pub fn is_pronoun(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .any(|w| pronouns().contains(&w.to_lowercase()))
}

fn byte_range(text: &str, m: &Mention) -> Option<(usize, usize)> {
    if m.start >= m.end {
        return None;
    }
    let mut offsets = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()));
    let start = offsets.nth(m.start)?;
    let end = offsets.nth(m.end - m.start - 1)?;
    Some((start, end))
}

fn validate(conv: &Conversation, clusters: &CorefClusters) -> Result<()> {
    let mut by_turn: Vec<Vec<(usize, usize)>> = vec![Vec::new(); conv.len() + 1];
    for (ci, cluster) in clusters.clusters.iter().enumerate() {
        if cluster.is_empty() {
            return Err(Error::Coref(format!("cluster {ci} is empty")));
        }
        for m in cluster {
            let turn = conv.turn(m.turn).map_err(|_| {
                Error::Coref(format!("cluster {ci}: mention in unknown turn {}", m.turn))
            })?;
            let (s, e) = byte_range(&turn.raw_query, m).ok_or_else(|| {
                Error::Coref(format!(
                    "cluster {ci}: span {}..{} invalid in turn {}",
                    m.start, m.end, m.turn
                ))
            })?;
            if turn.raw_query[s..e] != m.text {
                return Err(Error::Coref(format!(
                    "cluster {ci}: span {}..{} of turn {} is {:?}, not {:?}",
                    m.start,
                    m.end,
                    m.turn,
                    &turn.raw_query[s..e],
                    m.text
                )));
            }
            by_turn[m.turn].push((m.start, m.end));
        }
        if cluster
            .windows(2)
            .any(|w| (w[0].turn, w[0].start) > (w[1].turn, w[1].start))
        {
            return Err(Error::Coref(format!(
                "cluster {ci}: mentions not ordered by (turn, start)"
            )));
        }
    }
    for (turn, spans) in by_turn.iter_mut().enumerate() {
        spans.sort_unstable();
        spans.dedup();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::Coref(format!("overlapping mentions in turn {turn}")));
        }
    }
    Ok(())
}

/// Replaces, in turn `i`'s raw query, every mention containing a pronoun
/// with the surface text of its cluster's first mention. Other mentions
/// are left untouched.
pub fn coref_pronoun_rewrite(
    conv: &Conversation,
    i: usize,
    clusters: &CorefClusters,
) -> Result<String> {
    let query = &conv.turn(i)?.raw_query;
    validate(conv, clusters)?;

    let mut edits: Vec<((usize, usize), &str)> = Vec::new();
    for cluster in &clusters.clusters {
        let head = &cluster[0];
        for m in cluster
            .iter()
            .skip(1)
            .filter(|m| m.turn == i && is_pronoun(&m.text))
        {
            if m == head {
                continue;
            }
            let range = byte_range(query, m).expect("validated");
            edits.push((range, head.text.as_str()));
        }
    }
    // right to left so earlier offsets stay valid
    edits.sort_by(|a, b| b.0.cmp(&a.0));
    let mut out = query.clone();
    for ((s, e), replacement) in edits {
        out.replace_range(s..e, replacement);
    }
    Ok(out)
}
