//! Corpus data model and external file formats.
//!
//! Collections and query sets are TSV (`id<TAB>text`), relevance judgments
//! are TREC 4-column qrels, and ranked results travel as TREC 6-column run
//! files. All loaders are pure functions of file contents: a file either
//! parses fully or fails with a line-numbered error.

pub(crate) mod io;
mod synth;

pub use io::{load_collection, load_qrels, load_queries, load_run, write_run};
pub use synth::{generate_synthetic_dataset, SynthSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

/// A candidate passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// A search query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// An ordered set of passages with unique, non-empty ids.
#[derive(Debug, Clone)]
pub struct Collection {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Collection {
    /// Builds a collection, rejecting empty or duplicate ids.
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (ord, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::Integrity("empty passage id".into()));
            }
            if by_id.insert(p.id.clone(), ord).is_some() {
                return Err(Error::Integrity(format!("duplicate passage id {:?}", p.id)));
            }
        }
        Ok(Collection { passages, by_id })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Passages in insertion (file) order.
    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&ord| &self.passages[ord])
    }

    /// Position of a passage in insertion order.
    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_ordinal(&self, ord: usize) -> &Passage {
        &self.passages[ord]
    }
}

/// An ordered set of queries with unique, non-empty ids.
#[derive(Debug, Clone)]
pub struct QuerySet {
    queries: Vec<Query>,
    by_id: HashMap<String, usize>,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(queries.len());
        for (ord, q) in queries.iter().enumerate() {
            if q.id.is_empty() {
                return Err(Error::Integrity("empty query id".into()));
            }
            if by_id.insert(q.id.clone(), ord).is_some() {
                return Err(Error::Integrity(format!("duplicate query id {:?}", q.id)));
            }
        }
        Ok(QuerySet { queries, by_id })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.by_id.get(id).map(|&ord| &self.queries[ord])
    }
}

/// Binary relevance judgments: query id -> set of relevant passage ids.
///
/// Queries with no relevant passage simply have no entry. Ordered maps keep
/// iteration deterministic.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into());
    }

    /// Relevant passages for a query, if any are judged.
    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.judgments.get(query_id)
    }

    pub fn is_relevant(&self, query_id: &str, passage_id: &str) -> bool {
        self.judgments
            .get(query_id)
            .is_some_and(|set| set.contains(passage_id))
    }

    /// Number of queries with at least one relevant passage.
    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.judgments.iter()
    }
}

/// One entry of a ranked result list. Ranks start at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
    pub rank: u32,
}

/// A per-query ranked list of (passage, score) pairs.
///
/// Invariants: ranks are consecutive `1..=n`, scores are non-increasing with
/// rank, and passage ids are distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Assigns ranks `1..=n` to an already score-ordered sequence.
    pub fn from_scored(query_id: impl Into<String>, scored: Vec<(String, f64)>) -> Self {
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| RankedEntry {
                passage_id,
                score,
                rank: (i + 1) as u32,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Checks all list invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank as usize != i + 1 {
                return Err(Error::Integrity(format!(
                    "query {:?}: rank {} at position {} (expected {})",
                    self.query_id,
                    e.rank,
                    i,
                    i + 1
                )));
            }
            if !e.score.is_finite() {
                return Err(Error::Integrity(format!(
                    "query {:?}: non-finite score at rank {}",
                    self.query_id, e.rank
                )));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(Error::Integrity(format!(
                    "query {:?}: score inversion at rank {}",
                    self.query_id, e.rank
                )));
            }
            if !seen.insert(e.passage_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "query {:?}: duplicate passage id {:?}",
                    self.query_id, e.passage_id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.into(),
            text: text.into(),
        }
    }

    #[test]
    fn collection_rejects_duplicate_id() {
        let err = Collection::new(vec![passage("1", "a"), passage("1", "b")]).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("\"1\"")));
    }

    #[test]
    fn collection_rejects_empty_id() {
        assert!(Collection::new(vec![passage("", "a")]).is_err());
    }

    #[test]
    fn collection_lookup_by_id_and_ordinal() {
        let c = Collection::new(vec![passage("a", "x"), passage("b", "y")]).unwrap();
        assert_eq!(c.get("b").unwrap().text, "y");
        assert_eq!(c.ordinal("a"), Some(0));
        assert_eq!(c.by_ordinal(1).id, "b");
        assert!(c.get("missing").is_none());
    }

    #[test]
    fn qrels_collapse_to_binary_sets() {
        let mut q = Qrels::new();
        q.insert("q1", "d3");
        q.insert("q1", "d7");
        q.insert("q1", "d3");
        assert_eq!(q.relevant("q1").unwrap().len(), 2);
        assert!(q.is_relevant("q1", "d7"));
        assert!(!q.is_relevant("q2", "d3"));
    }

    #[test]
    fn ranked_list_validate_catches_rank_gap() {
        let mut list = RankedList::from_scored("q", vec![("a".into(), 2.0), ("b".into(), 1.0)]);
        list.entries[1].rank = 3;
        assert!(list.validate().is_err());
    }

    #[test]
    fn ranked_list_validate_catches_score_inversion() {
        let list = RankedList {
            query_id: "q".into(),
            entries: vec![
                RankedEntry {
                    passage_id: "a".into(),
                    score: 1.0,
                    rank: 1,
                },
                RankedEntry {
                    passage_id: "b".into(),
                    score: 2.0,
                    rank: 2,
                },
            ],
        };
        assert!(list.validate().is_err());
    }

    #[test]
    fn ranked_list_validate_catches_duplicate_passage() {
        let list = RankedList::from_scored("q", vec![("a".into(), 2.0), ("a".into(), 1.0)]);
        assert!(list.validate().is_err());
    }

    #[test]
    fn ranked_list_ties_are_legal() {
        let list = RankedList::from_scored("q", vec![("a".into(), 1.0), ("b".into(), 1.0)]);
        assert!(list.validate().is_ok());
    }
}
