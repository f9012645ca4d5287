//! Second-stage ranking and its metrics.
//!
//! Candidates are scored independently, ranked by relevance probability
//! (descending, ties by ascending passage id), and judged with MRR@10 and
//! MAP. Queries that have no judged relevant passage are skipped, not
//! counted as zero.

use std::collections::{BTreeSet, HashSet};

use crate::corpus::{Collection, Query, QuerySet, RankedList};
use crate::error::{Error, Result};
use crate::model::{forward, Mode, Parameters};
use crate::tokenizer::{encode_pair, pad_batch, Vocab};

/// One metric over one run, with the query accounting that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub num_queries_evaluated: usize,
    pub num_queries_skipped: usize,
}

/// Scores every candidate against the query and returns the same passages
/// reordered by probability descending, ties by ascending passage id.
pub fn rerank(
    params: &Parameters,
    vocab: &Vocab,
    collection: &Collection,
    query: &Query,
    candidates: &RankedList,
    max_query_pieces: usize,
    max_total_pieces: usize,
) -> Result<RankedList> {
    if candidates.entries.is_empty() {
        return Err(Error::Argument(format!(
            "no candidates to rerank for query {:?}",
            candidates.query_id
        )));
    }
    let mut batch = Vec::with_capacity(candidates.entries.len());
    for entry in &candidates.entries {
        let passage = collection.get(&entry.passage_id).ok_or_else(|| {
            Error::Integrity(format!(
                "candidate list for query {:?} references unknown passage {:?}",
                candidates.query_id, entry.passage_id
            ))
        })?;
        batch.push(encode_pair(
            &query.text,
            &passage.text,
            vocab,
            max_query_pieces,
            max_total_pieces,
        )?);
    }
    pad_batch(&mut batch);
    let output = forward(params, &batch, Mode::Infer)?;

    let mut scored: Vec<(String, f64)> = candidates
        .entries
        .iter()
        .zip(&output.probabilities)
        .map(|(entry, &p)| (entry.passage_id.clone(), p))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList::from_scored(candidates.query_id.clone(), scored))
}

/// Reranks every list in a first-stage run. The output is sorted by query
/// id so it round-trips through files byte-identically regardless of input
/// order.
pub fn rerank_run(
    params: &Parameters,
    vocab: &Vocab,
    collection: &Collection,
    queries: &QuerySet,
    first_stage_run: &[RankedList],
    max_query_pieces: usize,
    max_total_pieces: usize,
) -> Result<Vec<RankedList>> {
    let mut out = Vec::with_capacity(first_stage_run.len());
    for list in first_stage_run {
        let query = queries.get(&list.query_id).ok_or_else(|| {
            Error::Integrity(format!("run references unknown query {:?}", list.query_id))
        })?;
        out.push(rerank(
            params,
            vocab,
            collection,
            query,
            list,
            max_query_pieces,
            max_total_pieces,
        )?);
    }
    out.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(out)
}

/// 1/r for the first relevant passage at position r, or 0 when no relevant
/// passage appears within the first `k` positions. `k` must be at least 1.
pub fn reciprocal_rank_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    for (i, entry) in ranked.entries.iter().take(k).enumerate() {
        if relevant.contains(&entry.passage_id) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

/// Mean precision at the positions of relevant passages, divided by the
/// total number of relevant passages (found or not), over the full list.
pub fn average_precision(ranked: &RankedList, relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Argument(format!(
            "average precision of query {:?} is undefined without relevant passages",
            ranked.query_id
        )));
    }
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (i, entry) in ranked.entries.iter().enumerate() {
        if relevant.contains(&entry.passage_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

fn mean_over_run(
    name: &str,
    run: &[RankedList],
    qrels: &crate::corpus::Qrels,
    per_query: impl Fn(&RankedList, &BTreeSet<String>) -> Result<f64>,
) -> Result<MetricReport> {
    let mut seen = HashSet::with_capacity(run.len());
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for list in run {
        if !seen.insert(list.query_id.as_str()) {
            return Err(Error::Integrity(format!(
                "query {:?} appears more than once in the run",
                list.query_id
            )));
        }
        match qrels.relevant(&list.query_id) {
            Some(relevant) if !relevant.is_empty() => {
                sum += per_query(list, relevant)?;
                evaluated += 1;
            }
            _ => skipped += 1,
        }
    }
    let value = if evaluated == 0 {
        0.0
    } else {
        sum / evaluated as f64
    };
    Ok(MetricReport {
        name: name.to_string(),
        value,
        num_queries_evaluated: evaluated,
        num_queries_skipped: skipped,
    })
}

/// Mean reciprocal rank at cutoff 10 over the judged queries of a run.
pub fn mrr_at_10(run: &[RankedList], qrels: &crate::corpus::Qrels) -> Result<MetricReport> {
    mean_over_run("MRR@10", run, qrels, |list, relevant| {
        Ok(reciprocal_rank_at_k(list, relevant, 10))
    })
}

/// Mean average precision over the judged queries of a run.
pub fn map_metric(run: &[RankedList], qrels: &crate::corpus::Qrels) -> Result<MetricReport> {
    mean_over_run("MAP", run, qrels, average_precision)
}
