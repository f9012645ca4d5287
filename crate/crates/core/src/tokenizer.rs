//! Subword tokenization and sentence-pair input packing.
//!
//! The vocabulary holds four reserved tokens, every ASCII alphanumeric
//! character as both a bare piece ("x") and a continuation piece ("##x"),
//! and the most frequent whole words of a corpus. Words are split by greedy
//! longest-match-first against that vocabulary; a word that cannot be
//! covered at some position collapses to [UNK] as a whole.
//!
//! `encode_pair` packs a query (sentence A) and passage (sentence B) as
//! `[CLS] A [SEP] B [SEP]`, truncating A to `max_query` pieces and B so the
//! total stays within `max_total`. Pre-tokenization reuses the index
//! analyzer, so the lexical ranker and the encoder see identical casing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bm25::analyze;
use crate::corpus::{io::utf8_lines, Collection, QuerySet};
use crate::error::{Error, Result};

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

const ASCII_ALNUM: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

/// Piece-string to token-id mapping with dense ids `0..V-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    by_id: Vec<String>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;

    /// Builds a vocabulary from an explicit piece list (line order = id).
    ///
    /// The reserved tokens must occupy ids 0 through 3 and every ASCII
    /// alphanumeric character must be present in bare and continuation form.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < RESERVED.len() {
            return Err(Error::Integrity(
                "vocabulary shorter than reserved prefix".into(),
            ));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if pieces[i] != *want {
                return Err(Error::Integrity(format!(
                    "reserved token {want} must have id {i}, found {:?}",
                    pieces[i]
                )));
            }
        }
        let mut ids = HashMap::with_capacity(pieces.len());
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() {
                return Err(Error::Integrity(format!("empty piece at id {id}")));
            }
            if ids.insert(piece.clone(), id as u32).is_some() {
                return Err(Error::Integrity(format!("duplicate piece {piece:?}")));
            }
        }
        for c in ASCII_ALNUM.chars() {
            if !ids.contains_key(c.to_string().as_str()) {
                return Err(Error::Integrity(format!("missing character piece {c:?}")));
            }
            if !ids.contains_key(format!("##{c}").as_str()) {
                return Err(Error::Integrity(format!(
                    "missing continuation piece ##{c}"
                )));
            }
        }
        Ok(Vocab { ids, by_id: pieces })
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.by_id.get(id as usize).map(String::as_str)
    }

    /// Total number of pieces, reserved tokens included.
    pub fn size(&self) -> usize {
        self.by_id.len()
    }
}

/// Smallest legal vocabulary size: reserved tokens plus both piece forms of
/// every ASCII alphanumeric character.
pub const MIN_VOCAB_SIZE: usize = RESERVED.len().saturating_add(2 * 62);

/// Builds a vocabulary: reserved tokens, character pieces, then the most
/// frequent whole words of the collection and query texts (ties broken
/// lexicographically) until `max_size` is reached.
pub fn build_vocab(collection: &Collection, queries: &QuerySet, max_size: usize) -> Result<Vocab> {
    if max_size < MIN_VOCAB_SIZE {
        return Err(Error::Argument(format!(
            "max_size {max_size} is below the {MIN_VOCAB_SIZE} reserved and character pieces"
        )));
    }

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    for c in ASCII_ALNUM.chars() {
        pieces.push(c.to_string());
    }
    for c in ASCII_ALNUM.chars() {
        pieces.push(format!("##{c}"));
    }

    let mut freq: HashMap<String, u64> = HashMap::new();
    let texts = collection
        .iter()
        .map(|p| p.text.as_str())
        .chain(queries.iter().map(|q| q.text.as_str()));
    for text in texts {
        for word in analyze(text) {
            *freq.entry(word).or_insert(0) += 1;
        }
    }

    let taken: std::collections::HashSet<&str> = pieces.iter().map(String::as_str).collect();
    let mut candidates: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(w, _)| !taken.contains(w.as_str()))
        .collect();
    candidates.sort_unstable_by(|(wa, fa), (wb, fb)| fb.cmp(fa).then_with(|| wa.cmp(wb)));

    for (word, _) in candidates {
        if pieces.len() >= max_size {
            break;
        }
        pieces.push(word);
    }

    Vocab::from_pieces(pieces)
}

/// Splits one word by greedy longest-match-first against the vocabulary.
///
/// Non-initial pieces carry the "##" prefix. If some position admits no
/// match at all, the entire word becomes a single [UNK].
pub fn wordpiece(word: &str, vocab: &Vocab) -> Vec<u32> {
    let mut ids = Vec::new();
    let mut start = 0;
    while start < word.len() {
        let prefix = if start == 0 { "" } else { "##" };
        let mut found = None;
        let mut end = word.len();
        while end > start {
            if !word.is_char_boundary(end) {
                end -= 1;
                continue;
            }
            if let Some(id) = vocab.id(&format!("{prefix}{}", &word[start..end])) {
                found = Some((id, end));
                break;
            }
            end -= 1;
        }
        match found {
            Some((id, next)) => {
                ids.push(id);
                start = next;
            }
            None => return vec![Vocab::UNK],
        }
    }
    ids
}

/// Reassembles words from piece ids, dropping special tokens. An [UNK]
/// becomes the literal word "[UNK]".
pub fn decode_pieces(ids: &[u32], vocab: &Vocab) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        if id == Vocab::PAD || id == Vocab::CLS || id == Vocab::SEP {
            continue;
        }
        let piece = vocab.piece(id).unwrap_or(RESERVED[Vocab::UNK as usize]);
        if let Some(cont) = piece.strip_prefix("##") {
            match words.last_mut() {
                Some(last) => last.push_str(cont),
                None => words.push(cont.to_string()),
            }
        } else {
            words.push(piece.to_string());
        }
    }
    words
}

/// One packed query/passage input.
///
/// `token_ids[0]` is [CLS] and exactly two [SEP] tokens are present. Segment
/// ids are 0 through the first [SEP] inclusive and 1 after it; `mask` is 1
/// for real tokens and 0 for padding appended later; `length` counts the
/// real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub mask: Vec<u8>,
    pub length: usize,
}

impl EncodedPair {
    /// Appends padding ([PAD], segment 0, mask 0) up to `target` positions.
    pub fn pad_to(&mut self, target: usize) -> Result<()> {
        if target < self.token_ids.len() {
            return Err(Error::Argument(format!(
                "cannot pad a sequence of {} tokens down to {target}",
                self.token_ids.len()
            )));
        }
        self.token_ids.resize(target, Vocab::PAD);
        self.segment_ids.resize(target, 0);
        self.mask.resize(target, 0);
        Ok(())
    }
}

/// Pads every pair in the batch to the longest sequence present.
pub fn pad_batch(batch: &mut [EncodedPair]) {
    let target = batch.iter().map(|p| p.token_ids.len()).max().unwrap_or(0);
    for pair in batch.iter_mut() {
        pair.pad_to(target).expect("target is the batch maximum");
    }
}

/// Packs a query and passage as `[CLS] A [SEP] B [SEP]`.
///
/// The query keeps at most `max_query` pieces; the passage is truncated so
/// the total length stays within `max_total`. No padding is added here.
pub fn encode_pair(
    query_text: &str,
    passage_text: &str,
    vocab: &Vocab,
    max_query: usize,
    max_total: usize,
) -> Result<EncodedPair> {
    if max_query + 3 > max_total {
        return Err(Error::Argument(format!(
            "max_query {max_query} + 3 special tokens exceeds max_total {max_total}"
        )));
    }

    let mut a: Vec<u32> = Vec::new();
    for word in analyze(query_text) {
        a.extend(wordpiece(&word, vocab));
    }
    a.truncate(max_query);

    let budget = max_total - 3 - a.len();
    let mut b: Vec<u32> = Vec::new();
    for word in analyze(passage_text) {
        b.extend(wordpiece(&word, vocab));
        if b.len() >= budget {
            break;
        }
    }
    b.truncate(budget);

    let mut token_ids = Vec::with_capacity(a.len() + b.len() + 3);
    token_ids.push(Vocab::CLS);
    token_ids.extend_from_slice(&a);
    token_ids.push(Vocab::SEP);
    let first_sep = token_ids.len() - 1;
    token_ids.extend_from_slice(&b);
    token_ids.push(Vocab::SEP);

    let length = token_ids.len();
    let segment_ids = (0..length).map(|i| u8::from(i > first_sep)).collect();
    Ok(EncodedPair {
        token_ids,
        segment_ids,
        mask: vec![1; length],
        length,
    })
}

/// Writes one piece per line; the line number is the token id.
pub fn save_vocab(vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for id in 0..vocab.size() {
        writeln!(out, "{}", vocab.piece(id as u32).expect("dense ids"))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a vocabulary saved by [`save_vocab`], re-checking all invariants.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    let pieces = utf8_lines(path.as_ref())?
        .into_iter()
        .map(|(_, line)| line)
        .collect();
    Vocab::from_pieces(pieces)
}
