//! Deterministic synthetic dataset generator for desk-scale experiments.
//!
//! Each query is a set of three keywords drawn from a shared keyword pool;
//! its relevant passages contain all three (once each) plus filler words from
//! a disjoint filler pool. Distractor passages carry at most two keyword-pool
//! words, so no passage outside the qrels can ever cover a full query: a
//! passage is relevant to a query if and only if it contains every keyword
//! of that query, which a plain text scan can verify.
//!
//! Distractors come in three kinds to give the first-stage ranker something
//! to get wrong: "hard" ones repeat two of a target query's keywords with
//! inflated term frequency in a short passage, "soft" ones mention two
//! keywords once, and the rest are pure filler.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Collection, Passage, Qrels, Query, QuerySet};
use crate::error::{Error, Result};

const KEYWORDS_PER_QUERY: usize = 3;

/// Shape of a synthetic dataset. Generation is byte-deterministic in `seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub num_passages: usize,
    pub num_queries: usize,
    pub vocab_words: usize,
    pub passage_len_range: (usize, usize),
    pub relevant_per_query: usize,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_passages == 0 || self.num_queries == 0 || self.relevant_per_query == 0 {
            return Err(Error::Argument("all counts must be positive".into()));
        }
        if self.relevant_per_query > self.num_passages {
            return Err(Error::Argument(format!(
                "relevant_per_query ({}) exceeds num_passages ({})",
                self.relevant_per_query, self.num_passages
            )));
        }
        if self.num_queries * self.relevant_per_query > self.num_passages {
            return Err(Error::Argument(format!(
                "need {} relevant passages for {} queries but num_passages is {}",
                self.num_queries * self.relevant_per_query,
                self.num_queries,
                self.num_passages
            )));
        }
        let (lo, hi) = self.passage_len_range;
        if lo < KEYWORDS_PER_QUERY || hi < lo {
            return Err(Error::Argument(format!(
                "passage_len_range must satisfy {} <= lo <= hi, got ({lo}, {hi})",
                KEYWORDS_PER_QUERY
            )));
        }
        if self.vocab_words < 8 {
            return Err(Error::Argument("vocab_words must be at least 8".into()));
        }
        let pool = self.keyword_pool_size();
        // Query keyword sets must be distinct; demand slack so rejection
        // sampling terminates quickly.
        let combinations = (pool as u128) * (pool as u128 - 1) * (pool as u128 - 2) / 6;
        if combinations < 2 * self.num_queries as u128 {
            return Err(Error::Argument(format!(
                "keyword pool of {pool} words yields only {combinations} distinct \
                 keyword triples; too few for {} queries",
                self.num_queries
            )));
        }
        Ok(())
    }

    fn keyword_pool_size(&self) -> usize {
        (self.vocab_words / 4).max(KEYWORDS_PER_QUERY + 1)
    }
}

enum PassagePlan {
    /// Relevant for query `q`: all keywords once, filler elsewhere.
    Relevant { query: usize },
    /// Two keywords of query `q`, each repeated `tf` times, short passage.
    Hard { query: usize },
    /// Two keywords of query `q`, once each, normal length.
    Soft { query: usize },
    /// Filler words only.
    Noise,
}

/// Generates a labeled (collection, queries, qrels) triple.
///
/// Every query receives exactly `relevant_per_query` relevant passages, and
/// relevance coincides exactly with "the passage contains all of the query's
/// keywords". Calling twice with the same spec yields identical output.
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<(Collection, QuerySet, Qrels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let pool = spec.keyword_pool_size();
    let keywords: Vec<String> = (0..pool).map(|i| format!("k{i}")).collect();
    let fillers: Vec<String> = (0..spec.vocab_words - pool)
        .map(|i| format!("f{i}"))
        .collect();
    let (len_lo, len_hi) = spec.passage_len_range;

    // Distinct keyword triples, one per query.
    let mut seen = std::collections::HashSet::new();
    let mut query_keywords: Vec<Vec<usize>> = Vec::with_capacity(spec.num_queries);
    for _ in 0..spec.num_queries {
        let mut attempts = 0;
        loop {
            let pick = rand::seq::index::sample(&mut rng, pool, KEYWORDS_PER_QUERY).into_vec();
            let mut key = pick.clone();
            key.sort_unstable();
            if seen.insert(key) {
                query_keywords.push(pick);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Argument(
                    "could not sample distinct keyword sets; enlarge vocab_words".into(),
                ));
            }
        }
    }

    // Plan passages, then shuffle so ids carry no relevance signal.
    let num_relevant = spec.num_queries * spec.relevant_per_query;
    let mut plans: Vec<PassagePlan> = Vec::with_capacity(spec.num_passages);
    for q in 0..spec.num_queries {
        for _ in 0..spec.relevant_per_query {
            plans.push(PassagePlan::Relevant { query: q });
        }
    }
    for j in 0..spec.num_passages - num_relevant {
        let query = j % spec.num_queries;
        plans.push(match rng.gen_range(0..10) {
            0..=5 => PassagePlan::Hard { query },
            6..=8 => PassagePlan::Soft { query },
            _ => PassagePlan::Noise,
        });
    }
    plans.shuffle(&mut rng);

    let id_width = digits(spec.num_passages);
    let mut passages = Vec::with_capacity(spec.num_passages);
    let mut qrels = Qrels::new();
    let query_id = |q: usize| format!("q{:0width$}", q, width = digits(spec.num_queries));

    for (ord, plan) in plans.iter().enumerate() {
        let pid = format!("p{:0id_width$}", ord);
        let mut tokens: Vec<&str> = Vec::new();
        match *plan {
            PassagePlan::Relevant { query } => {
                let len = rng.gen_range(len_lo..=len_hi);
                for &kw in &query_keywords[query] {
                    tokens.push(&keywords[kw]);
                }
                for _ in 0..len - KEYWORDS_PER_QUERY {
                    tokens.push(&fillers[rng.gen_range(0..fillers.len())]);
                }
                qrels.insert(query_id(query), pid.clone());
            }
            PassagePlan::Hard { query } => {
                // Short and keyword-dense: rewards term frequency over
                // coverage, which is exactly where lexical ranking overrates.
                let len = rng.gen_range(len_lo..=(len_lo + len_hi) / 2);
                let drop = rng.gen_range(0..KEYWORDS_PER_QUERY);
                let mut budget = len;
                for (i, &kw) in query_keywords[query].iter().enumerate() {
                    if i == drop {
                        continue;
                    }
                    let tf = rng.gen_range(2..=5).min(budget.saturating_sub(1)).max(1);
                    for _ in 0..tf {
                        tokens.push(&keywords[kw]);
                    }
                    budget -= tf;
                }
                for _ in 0..budget {
                    tokens.push(&fillers[rng.gen_range(0..fillers.len())]);
                }
            }
            PassagePlan::Soft { query } => {
                let len = rng.gen_range(len_lo..=len_hi);
                let drop = rng.gen_range(0..KEYWORDS_PER_QUERY);
                for (i, &kw) in query_keywords[query].iter().enumerate() {
                    if i != drop {
                        tokens.push(&keywords[kw]);
                    }
                }
                for _ in 0..len - (KEYWORDS_PER_QUERY - 1) {
                    tokens.push(&fillers[rng.gen_range(0..fillers.len())]);
                }
            }
            PassagePlan::Noise => {
                let len = rng.gen_range(len_lo..=len_hi);
                for _ in 0..len {
                    tokens.push(&fillers[rng.gen_range(0..fillers.len())]);
                }
            }
        }
        tokens.shuffle(&mut rng);
        passages.push(Passage {
            id: pid,
            text: tokens.join(" "),
        });
    }

    let queries = query_keywords
        .iter()
        .enumerate()
        .map(|(q, kws)| Query {
            id: query_id(q),
            text: kws
                .iter()
                .map(|&kw| keywords[kw].as_str())
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect();

    Ok((Collection::new(passages)?, QuerySet::new(queries)?, qrels))
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            num_passages: 120,
            num_queries: 15,
            vocab_words: 60,
            passage_len_range: (6, 18),
            relevant_per_query: 2,
            seed,
        }
    }

    fn contains_all_keywords(passage_text: &str, query_text: &str) -> bool {
        let words: std::collections::HashSet<&str> = passage_text.split(' ').collect();
        query_text.split(' ').all(|kw| words.contains(kw))
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let a = generate_synthetic_dataset(&small_spec(7)).unwrap();
        let b = generate_synthetic_dataset(&small_spec(7)).unwrap();
        let texts = |c: &Collection| {
            c.iter()
                .map(|p| (p.id.clone(), p.text.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(&a.0), texts(&b.0));
        assert_eq!(
            a.1.iter().map(|q| q.text.clone()).collect::<Vec<_>>(),
            b.1.iter().map(|q| q.text.clone()).collect::<Vec<_>>()
        );
        let flat = |q: &Qrels| {
            q.iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect::<Vec<_>>()))
                .collect::<Vec<_>>()
        };
        assert_eq!(flat(&a.2), flat(&b.2));
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic_dataset(&small_spec(1)).unwrap();
        let b = generate_synthetic_dataset(&small_spec(2)).unwrap();
        let texts = |c: &Collection| c.iter().map(|p| p.text.clone()).collect::<Vec<_>>();
        assert_ne!(texts(&a.0), texts(&b.0));
    }

    #[test]
    fn soundness_relevance_iff_all_keywords_present() {
        let (collection, queries, qrels) = generate_synthetic_dataset(&small_spec(42)).unwrap();
        for q in queries.iter() {
            for p in collection.iter() {
                let covered = contains_all_keywords(&p.text, &q.text);
                assert_eq!(
                    covered,
                    qrels.is_relevant(&q.id, &p.id),
                    "query {} vs passage {}: coverage {} but qrels disagree",
                    q.id,
                    p.id,
                    covered
                );
            }
        }
    }

    #[test]
    fn exact_relevant_count_per_query() {
        let spec = small_spec(9);
        let (_, queries, qrels) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(qrels.num_queries(), spec.num_queries);
        for q in queries.iter() {
            assert_eq!(
                qrels.relevant(&q.id).unwrap().len(),
                spec.relevant_per_query
            );
        }
    }

    #[test]
    fn passage_lengths_within_range() {
        let spec = small_spec(3);
        let (collection, _, _) = generate_synthetic_dataset(&spec).unwrap();
        for p in collection.iter() {
            let n = p.text.split(' ').count();
            assert!(n >= spec.passage_len_range.0 && n <= spec.passage_len_range.1);
        }
    }

    #[test]
    fn infeasible_relevant_count_is_an_argument_error() {
        let spec = SynthSpec {
            num_passages: 3,
            num_queries: 1,
            vocab_words: 60,
            passage_len_range: (6, 10),
            relevant_per_query: 5,
            seed: 0,
        };
        assert!(matches!(
            generate_synthetic_dataset(&spec).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn tiny_vocab_is_an_argument_error() {
        let mut spec = small_spec(0);
        spec.vocab_words = 4;
        assert!(generate_synthetic_dataset(&spec).is_err());
    }
}
