//! First-stage retrieval: inverted index with BM25 scoring.
//!
//! The scoring function is the Lucene variant, idf(t) = ln(1 + (N - df +
//! 0.5)/(df + 0.5)) with term weight tf*(k1+1)/(tf + k1*(1 - b + b*dl/avgdl)),
//! defaults k1 = 0.9, b = 0.4. Distinct query terms are counted once, zero
//! scores are dropped, and ties are broken by ascending passage id so a run
//! is reproducible byte for byte. Top-k selection keeps a bounded min-heap
//! rather than sorting every matching document.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::{io::utf8_lines, Collection, Query, RankedList};
use crate::error::{Error, Result};

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<()> {
        if !self.k1.is_finite() || self.k1 < 0.0 {
            return Err(Error::Argument(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !self.b.is_finite() || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Argument(format!(
                "b must be in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// Immutable inverted index over a passage collection.
///
/// Postings are sorted by document ordinal, document frequency is the
/// postings-list length, and `avg_doc_length` is the mean analyzed length
/// (documents with empty text count with length 0).
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    doc_ids: Vec<String>,
    ordinals: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Number of documents containing `term`.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, ordinal: u32) -> u32 {
        self.doc_lengths[ordinal as usize]
    }

    pub fn passage_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn ordinal_of(&self, passage_id: &str) -> Option<u32> {
        self.ordinals.get(passage_id).copied()
    }

    fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by_key(&ordinal, |&(ord, _)| ord)
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0)
    }
}

/// Lowercases, splits on any non-alphanumeric character, drops empty terms.
pub fn analyze(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Builds an inverted index over a non-empty collection.
pub fn build_index(collection: &Collection, params: Bm25Params) -> Result<InvertedIndex> {
    params.validate()?;
    if collection.is_empty() {
        return Err(Error::Argument("cannot index an empty collection".into()));
    }
    if collection.len() > u32::MAX as usize {
        return Err(Error::Argument(
            "collection exceeds u32 ordinal space".into(),
        ));
    }

    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(collection.len());
    let mut doc_ids = Vec::with_capacity(collection.len());
    let mut ordinals = HashMap::with_capacity(collection.len());

    for (ord, passage) in collection.iter().enumerate() {
        let ord = ord as u32;
        let terms = analyze(&passage.text);
        doc_lengths.push(terms.len() as u32);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for term in terms {
            *counts.entry(term).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push((ord, tf));
        }
        doc_ids.push(passage.id.clone());
        ordinals.insert(passage.id.clone(), ord);
    }

    let avg_doc_length =
        doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;

    Ok(InvertedIndex {
        params,
        postings,
        doc_lengths,
        avg_doc_length,
        doc_ids,
        ordinals,
    })
}

pub(crate) fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub(crate) fn tf_weight(tf: f64, doc_len: f64, avg_doc_length: f64, params: &Bm25Params) -> f64 {
    let ratio = if avg_doc_length > 0.0 {
        doc_len / avg_doc_length
    } else {
        0.0
    };
    let norm = 1.0 - params.b + params.b * ratio;
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// BM25 score of one document against a bag of query terms.
///
/// Duplicate query terms are counted once; terms absent from the document
/// (or the whole index) contribute zero.
pub fn bm25_score(
    index: &InvertedIndex,
    query_terms: &[String],
    ordinal: u32,
    params: &Bm25Params,
) -> f64 {
    let distinct: BTreeSet<&str> = query_terms.iter().map(String::as_str).collect();
    let dl = index.doc_length(ordinal) as f64;
    let mut score = 0.0;
    for term in distinct {
        let tf = index.term_frequency(term, ordinal);
        if tf == 0 {
            continue;
        }
        score += idf(index.num_docs(), index.df(term))
            * tf_weight(tf as f64, dl, index.avg_doc_length, params);
    }
    score
}

struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Higher score is better; on equal scores the lexicographically
        // smaller id is better. Scores are finite by construction.
        match self.score.partial_cmp(&other.score).unwrap() {
            Ordering::Equal => other.id.cmp(self.id),
            ord => ord,
        }
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Top-k retrieval with the index's own parameters.
///
/// Returns the k highest-scoring passages with score > 0 (fewer if fewer
/// match), sorted by descending score with ties broken by ascending id.
pub fn search(index: &InvertedIndex, query: &Query, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Argument("search depth k must be at least 1".into()));
    }
    let distinct: BTreeSet<String> = analyze(&query.text).into_iter().collect();

    let mut accum: HashMap<u32, f64> = HashMap::new();
    for term in &distinct {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        let idf = idf(index.num_docs(), list.len());
        for &(ord, tf) in list {
            let w = tf_weight(
                tf as f64,
                index.doc_lengths[ord as usize] as f64,
                index.avg_doc_length,
                &index.params,
            );
            *accum.entry(ord).or_insert(0.0) += idf * w;
        }
    }

    // Bounded min-heap: the root is the worst kept candidate. The candidate
    // order is total (ids are distinct), so the selected set does not depend
    // on accumulator iteration order.
    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
    for (&ord, &score) in &accum {
        if score <= 0.0 {
            continue;
        }
        let cand = Candidate {
            score,
            id: index.passage_id(ord),
        };
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if heap.peek().is_some_and(|Reverse(worst)| cand > *worst) {
            heap.pop();
            heap.push(Reverse(cand));
        }
    }

    let mut top: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
    top.sort_unstable_by(|a, b| b.cmp(a));
    let list = RankedList::from_scored(
        query.id.clone(),
        top.into_iter()
            .map(|c| (c.id.to_string(), c.score))
            .collect(),
    );
    debug_assert!(list.validate().is_ok());
    Ok(list)
}

const SNAPSHOT_MAGIC: &str = "bm25-index\tv1";

/// Persists an index as a line-based snapshot.
///
/// Layout: magic line, `k1`/`b` lines, a `docs <N>` header followed by one
/// `length<TAB>id` line per document in ordinal order, then a `terms <T>`
/// header followed by one `term<TAB>ord:tf ord:tf ...` line per term in
/// sorted order. Floats print in shortest round-trip form, so save followed
/// by load reproduces the index exactly.
pub fn save_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "{SNAPSHOT_MAGIC}")?;
    writeln!(out, "k1\t{}", index.params.k1)?;
    writeln!(out, "b\t{}", index.params.b)?;
    writeln!(out, "docs\t{}", index.num_docs())?;
    for (len, id) in index.doc_lengths.iter().zip(&index.doc_ids) {
        writeln!(out, "{len}\t{id}")?;
    }
    writeln!(out, "terms\t{}", index.postings.len())?;
    let mut line = String::new();
    for (term, list) in &index.postings {
        line.clear();
        line.push_str(term);
        for &(ord, tf) in list {
            write!(line, "\t{ord}:{tf}").expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

type SnapshotLines = std::vec::IntoIter<(usize, String)>;

fn next_line(it: &mut SnapshotLines, what: &str) -> Result<(usize, String)> {
    it.next()
        .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))
}

fn header<T: std::str::FromStr>(it: &mut SnapshotLines, key: &str) -> Result<T> {
    let (no, line) = next_line(it, key)?;
    let val = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('\t'))
        .ok_or_else(|| Error::parse(no, format!("expected `{key}<TAB>value`")))?;
    val.parse::<T>()
        .map_err(|_| Error::parse(no, format!("invalid {key} value {val:?}")))
}

/// Loads a snapshot written by [`save_index`], re-checking every invariant.
pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    let lines = utf8_lines(path.as_ref())?;
    let mut it = lines.into_iter();

    let (no, magic) = next_line(&mut it, "magic header")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::parse(no, "not a bm25-index v1 snapshot"));
    }

    let k1 = header::<f64>(&mut it, "k1")?;
    let b = header::<f64>(&mut it, "b")?;
    let params = Bm25Params { k1, b };
    params.validate()?;

    let num_docs = header::<usize>(&mut it, "docs")?;
    if num_docs == 0 {
        return Err(Error::Integrity("snapshot contains no documents".into()));
    }
    let mut doc_lengths = Vec::with_capacity(num_docs);
    let mut doc_ids = Vec::with_capacity(num_docs);
    let mut ordinals = HashMap::with_capacity(num_docs);
    for ord in 0..num_docs {
        let (no, line) = next_line(&mut it, "document row")?;
        let (len, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(no, "expected `length<TAB>id`"))?;
        let len: u32 = len
            .parse()
            .map_err(|_| Error::parse(no, format!("invalid document length {len:?}")))?;
        if id.is_empty() {
            return Err(Error::parse(no, "empty passage id"));
        }
        if ordinals.insert(id.to_string(), ord as u32).is_some() {
            return Err(Error::Integrity(format!("duplicate passage id {id:?}")));
        }
        doc_lengths.push(len);
        doc_ids.push(id.to_string());
    }

    let num_terms = header::<usize>(&mut it, "terms")?;
    let mut postings = BTreeMap::new();
    for _ in 0..num_terms {
        let (no, line) = next_line(&mut it, "postings row")?;
        let mut fields = line.split('\t');
        let term = fields
            .next()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::parse(no, "empty term"))?;
        let mut list: Vec<(u32, u32)> = Vec::new();
        for pair in fields {
            let (ord, tf) = pair
                .split_once(':')
                .ok_or_else(|| Error::parse(no, format!("expected `ord:tf`, got {pair:?}")))?;
            let ord: u32 = ord
                .parse()
                .map_err(|_| Error::parse(no, format!("invalid ordinal {ord:?}")))?;
            let tf: u32 = tf
                .parse()
                .map_err(|_| Error::parse(no, format!("invalid term frequency {tf:?}")))?;
            if ord as usize >= num_docs {
                return Err(Error::Integrity(format!(
                    "term {term:?} references ordinal {ord} but snapshot has {num_docs} documents"
                )));
            }
            if tf == 0 {
                return Err(Error::Integrity(format!(
                    "term {term:?} has zero frequency"
                )));
            }
            if list.last().is_some_and(|&(prev, _)| prev >= ord) {
                return Err(Error::Integrity(format!(
                    "postings for term {term:?} not strictly increasing by ordinal"
                )));
            }
            list.push((ord, tf));
        }
        if list.is_empty() {
            return Err(Error::Integrity(format!(
                "term {term:?} has empty postings"
            )));
        }
        if postings.insert(term.to_string(), list).is_some() {
            return Err(Error::Integrity(format!("duplicate term {term:?}")));
        }
    }
    if let Some((no, _)) = it.next() {
        return Err(Error::parse(no, "trailing content after postings"));
    }

    let avg_doc_length =
        doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;

    Ok(InvertedIndex {
        params,
        postings,
        doc_lengths,
        avg_doc_length,
        doc_ids,
        ordinals,
    })
}
