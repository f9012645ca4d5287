//! Fine-tuning loop: summed binary cross-entropy over relevant and
//! non-relevant candidates, Adam with linear warmup and linear decay to
//! zero, and training-pair sampling from a first-stage run.
//!
//! The loss is a sum, not a mean, so a batch's loss equals the sum of its
//! per-example losses. Weight decay is decoupled (applied directly to the
//! parameter, not through the moments) and skipped for bias and layer-norm
//! tensors.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Collection, Qrels, QuerySet, RankedList};
use crate::error::{Error, Result};
use crate::model::{
    backward, forward, splitmix, Gradients, Mode, Parameters, TensorKind, PROB_CLAMP,
};
use crate::tokenizer::{encode_pair, pad_batch, EncodedPair, Vocab};

/// One labeled query/passage pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub query_id: String,
    pub passage_id: String,
    pub label: u8,
}

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerHyper {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl OptimizerHyper {
    /// Paper-style defaults around an explicit schedule.
    pub fn with_schedule(warmup_steps: u64, total_steps: u64) -> Self {
        OptimizerHyper {
            base_lr: 3e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps > 0 && self.warmup_steps < self.total_steps) {
            return Err(Error::Argument(format!(
                "schedule requires 0 < warmup ({}) < total ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !b.is_finite() || !(0.0..1.0).contains(&b) || b == 0.0 {
                return Err(Error::Argument(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::Argument(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::Argument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Argument(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Adam moments plus the step counter. Shapes mirror the parameters.
pub struct OptimizerState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Summed binary cross-entropy: `-sum(pos) ln s - sum(neg) ln(1 - s)`, with
/// probabilities clamped away from 0 and 1 before the logs.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} probabilities against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut loss = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y > 1 {
            return Err(Error::Argument(format!("label {y} is not binary")));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(loss)
}

/// Learning rate at step `t`: linear warmup to `base_lr`, then linear decay
/// reaching exactly zero at `total_steps`.
pub fn lr_schedule(t: u64, hyper: &OptimizerHyper) -> Result<f64> {
    hyper.validate()?;
    if t > hyper.total_steps {
        return Err(Error::Argument(format!(
            "step {t} is past the end of the schedule ({})",
            hyper.total_steps
        )));
    }
    let lr = if t <= hyper.warmup_steps {
        hyper.base_lr * t as f64 / hyper.warmup_steps as f64
    } else {
        hyper.base_lr * (hyper.total_steps - t) as f64
            / (hyper.total_steps - hyper.warmup_steps) as f64
    };
    Ok(lr)
}

/// One decoupled-weight-decay Adam update, in place.
///
/// Increments the step counter first, so the initial call runs at t = 1.
/// The learning rate comes from [`lr_schedule`]; decay touches only weight
/// tensors, never biases or layer norms.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let lr = lr_schedule(t, hyper)?;
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);

    let g_t = grads.tensors();
    let mut m_t = state.m.tensors_mut();
    let mut v_t = state.v.tensors_mut();
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = &g_t[i];
        if p.name != g.name || p.data.len() != g.data.len() {
            return Err(Error::Integrity(format!(
                "gradient tensor {:?} does not match parameter {:?}",
                g.name, p.name
            )));
        }
        if let Some(bad) = g.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {bad} in tensor {:?}",
                g.name
            )));
        }
        let decay = if matches!(p.kind, TensorKind::Weight) {
            hyper.weight_decay
        } else {
            0.0
        };
        let m = &mut *m_t[i].data;
        let v = &mut *v_t[i].data;
        for j in 0..p.data.len() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g.data[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g.data[j] * g.data[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + decay * p.data[j]);
        }
    }
    Ok(())
}

/// Builds labeled pairs from judgments and a first-stage run.
///
/// Every query in the run that has at least one relevant passage yields all
/// its relevant passages as positives plus up to `negatives_per_query`
/// negatives sampled without replacement (seeded) from its top-`depth`
/// non-relevant candidates. Queries without judgments contribute nothing.
pub fn sample_training_pairs(
    qrels: &Qrels,
    first_stage_run: &[RankedList],
    depth: usize,
    negatives_per_query: usize,
    seed: u64,
) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for list in first_stage_run {
        let Some(relevant) = qrels.relevant(&list.query_id) else {
            continue;
        };
        for pid in relevant {
            out.push(TrainingExample {
                query_id: list.query_id.clone(),
                passage_id: pid.clone(),
                label: 1,
            });
        }
        let candidates: Vec<&str> = list
            .entries
            .iter()
            .filter(|e| (e.rank as usize) <= depth && !relevant.contains(&e.passage_id))
            .map(|e| e.passage_id.as_str())
            .collect();
        let take = negatives_per_query.min(candidates.len());
        for idx in rand::seq::index::sample(&mut rng, candidates.len(), take) {
            out.push(TrainingExample {
                query_id: list.query_id.clone(),
                passage_id: candidates[idx].to_string(),
                label: 0,
            });
        }
    }
    out
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Knobs of the training loop that are not optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_query_pieces: usize,
    pub max_total_pieces: usize,
    /// Global-norm gradient clipping; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            max_query_pieces: 64,
            max_total_pieces: 512,
            grad_clip: None,
        }
    }
}

fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    let norm = grads
        .tensors()
        .iter()
        .map(|t| t.data.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Runs `hyper.total_steps` optimization steps over shuffled batches.
///
/// Batches cycle through the examples in a seeded shuffle that reshuffles
/// every epoch; the shuffle, dropout, and therefore the final parameters are
/// fully determined by the model seed. Returns one log row per step.
pub fn train(
    params: &mut Parameters,
    examples: &[TrainingExample],
    collection: &Collection,
    queries: &QuerySet,
    vocab: &Vocab,
    hyper: &OptimizerHyper,
    options: &TrainOptions,
) -> Result<Vec<TrainLogRow>> {
    hyper.validate()?;
    if examples.is_empty() {
        return Err(Error::Argument(
            "training requires at least one example".into(),
        ));
    }
    if options.batch_size == 0 {
        return Err(Error::Argument("batch_size must be at least 1".into()));
    }
    if vocab.size() > params.config().vocab_size {
        return Err(Error::Argument(format!(
            "vocabulary of {} pieces exceeds the model's vocab_size {}",
            vocab.size(),
            params.config().vocab_size
        )));
    }
    if options.max_total_pieces > params.config().max_positions {
        return Err(Error::Argument(format!(
            "max_total_pieces {} exceeds the model's max_positions {}",
            options.max_total_pieces,
            params.config().max_positions
        )));
    }

    // Encoding is deterministic, so encode each distinct example once.
    let mut encoded: Vec<(EncodedPair, u8)> = Vec::with_capacity(examples.len());
    for ex in examples {
        let query = queries.get(&ex.query_id).ok_or_else(|| {
            Error::Integrity(format!(
                "training example references unknown query {:?}",
                ex.query_id
            ))
        })?;
        let passage = collection.get(&ex.passage_id).ok_or_else(|| {
            Error::Integrity(format!(
                "training example references unknown passage {:?}",
                ex.passage_id
            ))
        })?;
        if ex.label > 1 {
            return Err(Error::Argument(format!("label {} is not binary", ex.label)));
        }
        let pair = encode_pair(
            &query.text,
            &passage.text,
            vocab,
            options.max_query_pieces,
            options.max_total_pieces,
        )?;
        encoded.push((pair, ex.label));
    }

    let seed = params.config().seed;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix(seed, 0xBA7C4));
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut cursor = order.len();

    let mut state = OptimizerState::new(params);
    let mut log = Vec::with_capacity(hyper.total_steps as usize);
    let at_step = |step: u64, e: Error| match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
        other => other,
    };

    for step in 1..=hyper.total_steps {
        let mut batch = Vec::with_capacity(options.batch_size);
        let mut labels = Vec::with_capacity(options.batch_size);
        for _ in 0..options.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let (pair, label) = &encoded[order[cursor]];
            batch.push(pair.clone());
            labels.push(*label);
            cursor += 1;
        }
        pad_batch(&mut batch);

        let dropout_seed = splitmix(seed, step);
        let out =
            forward(params, &batch, Mode::Train { dropout_seed }).map_err(|e| at_step(step, e))?;
        let loss = bce_loss(&out.probabilities, &labels)?;
        let mut grads =
            backward(params, out.require_cache()?, &labels).map_err(|e| at_step(step, e))?;
        if let Some(max_norm) = options.grad_clip {
            clip_gradients(&mut grads, max_norm);
        }
        adam_step(params, &grads, &mut state, hyper).map_err(|e| at_step(step, e))?;
        log.push(TrainLogRow {
            step,
            lr: lr_schedule(step, hyper)?,
            loss,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, Query, RankedList};
    use crate::model::{init_params, ModelConfig};
    use crate::tokenizer::build_vocab;

    #[test]
    fn perfect_prediction_costs_almost_nothing() {
        let loss = bce_loss(&[1.0], &[1]).unwrap();
        assert!(loss > 0.0 && loss < 1.1e-7);
    }

    #[test]
    fn uncertain_batch_costs_two_ln_two() {
        let loss = bce_loss(&[0.5, 0.5], &[1, 0]).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_mistake_costs_ln_ten() {
        let loss = bce_loss(&[0.9], &[0]).unwrap();
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn loss_rejects_mismatched_lengths_and_labels() {
        assert!(bce_loss(&[0.5], &[1, 0]).is_err());
        assert!(bce_loss(&[0.5], &[2]).is_err());
    }

    #[test]
    fn batch_loss_is_the_sum_of_singleton_losses() {
        let probs = [0.3, 0.8, 0.51, 0.02];
        let labels = [1, 0, 1, 0];
        let whole = bce_loss(&probs, &labels).unwrap();
        let parts: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| bce_loss(&[p], &[y]).unwrap())
            .sum();
        assert_eq!(whole, parts);
        assert!(whole >= 0.0);
    }

    fn hyper(base: f64, warmup: u64, total: u64) -> OptimizerHyper {
        OptimizerHyper {
            base_lr: base,
            ..OptimizerHyper::with_schedule(warmup, total)
        }
    }

    #[test]
    fn schedule_hits_its_landmarks() {
        let h = hyper(3e-6, 10_000, 100_000);
        assert_eq!(lr_schedule(0, &h).unwrap(), 0.0);
        assert_eq!(lr_schedule(10_000, &h).unwrap(), 3e-6);
        assert_eq!(lr_schedule(55_000, &h).unwrap(), 1.5e-6);
        assert_eq!(lr_schedule(100_000, &h).unwrap(), 0.0);
        assert!(lr_schedule(100_001, &h).is_err());
    }

    #[test]
    fn schedule_is_continuous_at_the_warmup_peak() {
        let h = hyper(1e-3, 100, 1_100);
        let peak = lr_schedule(100, &h).unwrap();
        let before = lr_schedule(99, &h).unwrap();
        let after = lr_schedule(101, &h).unwrap();
        assert!((peak - before) <= 1e-3 / 100.0 + 1e-15);
        assert!((peak - after) <= 1e-3 / 1_000.0 + 1e-15);
    }

    #[test]
    fn degenerate_schedules_are_rejected() {
        assert!(OptimizerHyper::with_schedule(0, 10).validate().is_err());
        assert!(OptimizerHyper::with_schedule(10, 10).validate().is_err());
        assert!(OptimizerHyper::with_schedule(11, 10).validate().is_err());
    }

    fn scalar_setup() -> (Parameters, OptimizerState) {
        let cfg = ModelConfig {
            num_layers: 1,
            num_heads: 1,
            hidden_dim: 2,
            ffn_dim: 2,
            vocab_size: 5,
            max_positions: 4,
            dropout: 0.0,
            seed: 0,
        };
        let params = Parameters::zeros(&cfg).unwrap();
        let state = OptimizerState::new(&params);
        (params, state)
    }

    #[test]
    fn first_adam_step_moves_by_the_learning_rate() {
        let (mut params, mut state) = scalar_setup();
        let mut grads = params.zeros_like();
        grads.head_bias[0] = 1.0;
        let mut h = hyper(1e-2, 1, 1_000_000_000);
        h.weight_decay = 0.0;
        adam_step(&mut params, &grads, &mut state, &h).unwrap();
        assert_eq!(state.t, 1);
        assert!((params.head_bias[0] + 1e-2).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_with_zero_decay_is_a_fixpoint() {
        let (mut params, mut state) = scalar_setup();
        params.head_bias[0] = 0.75;
        params.token_embedding[[1, 1]] = -0.5;
        let grads = params.zeros_like();
        let mut h = hyper(1e-2, 1, 100);
        h.weight_decay = 0.0;
        let before = params.clone();
        adam_step(&mut params, &grads, &mut state, &h).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn decay_shrinks_weights_but_not_biases_or_norms() {
        let (mut params, mut state) = scalar_setup();
        params.token_embedding[[1, 1]] = 2.0;
        params.head_bias[0] = 2.0;
        params.layers[0].ln1_scale[0] = 2.0;
        let grads = params.zeros_like();
        let mut h = hyper(1e-2, 1, 1_000_000_000);
        h.weight_decay = 0.5;
        adam_step(&mut params, &grads, &mut state, &h).unwrap();
        let lr = 1e-2;
        assert!((params.token_embedding[[1, 1]] - 2.0 * (1.0 - lr * 0.5)).abs() < 1e-15);
        assert_eq!(params.head_bias[0], 2.0);
        assert_eq!(params.layers[0].ln1_scale[0], 2.0);
    }

    #[test]
    fn non_finite_gradients_are_a_numeric_error() {
        let (mut params, mut state) = scalar_setup();
        let mut grads = params.zeros_like();
        grads.head_bias[0] = f64::NAN;
        let h = hyper(1e-2, 1, 100);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, &h).unwrap_err(),
            Error::Numeric(_)
        ));
    }

    #[test]
    fn adam_minimizes_a_scalar_quadratic() {
        let (mut params, mut state) = scalar_setup();
        params.head_bias[0] = 1.0;
        let mut h = hyper(1e-2, 1, 1_000_000_000);
        h.weight_decay = 0.0;
        for _ in 0..5_000 {
            let mut grads = params.zeros_like();
            grads.head_bias[0] = 2.0 * params.head_bias[0];
            adam_step(&mut params, &grads, &mut state, &h).unwrap();
        }
        assert!(
            params.head_bias[0].abs() < 1e-3,
            "theta = {}",
            params.head_bias[0]
        );
    }

    fn toy_run(query_id: &str, ids: &[&str]) -> RankedList {
        RankedList::from_scored(
            query_id,
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.1))
                .collect(),
        )
    }

    #[test]
    fn sampling_counts_positives_and_negatives() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1");
        let run = vec![toy_run("q1", &["d1", "d2", "d3", "d4"])];
        let got = sample_training_pairs(&qrels, &run, 1000, 1, 7);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].label, 1);
        assert_eq!(got[0].passage_id, "d1");
        assert_eq!(got[1].label, 0);
        assert_ne!(got[1].passage_id, "d1");
    }

    #[test]
    fn unjudged_queries_contribute_nothing() {
        let qrels = Qrels::new();
        let run = vec![toy_run("q1", &["d1", "d2"])];
        assert!(sample_training_pairs(&qrels, &run, 1000, 2, 7).is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_depth_limited() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1");
        let run = vec![toy_run("q1", &["d1", "d2", "d3", "d4", "d5"])];
        let a = sample_training_pairs(&qrels, &run, 3, 2, 42);
        let b = sample_training_pairs(&qrels, &run, 3, 2, 42);
        assert_eq!(a, b);
        for ex in a.iter().filter(|e| e.label == 0) {
            assert!(["d2", "d3"].contains(&ex.passage_id.as_str()));
        }
    }

    #[test]
    fn scarce_negatives_yield_all_available() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1");
        let run = vec![toy_run("q1", &["d1", "d2"])];
        let got = sample_training_pairs(&qrels, &run, 1000, 10, 7);
        assert_eq!(got.len(), 2);
    }

    fn overfit_fixture() -> (Collection, QuerySet, Vocab, Vec<TrainingExample>) {
        let passages = vec![
            Passage {
                id: "p1".into(),
                text: "apple banana cherry".into(),
            },
            Passage {
                id: "p2".into(),
                text: "dog elephant fox".into(),
            },
            Passage {
                id: "p3".into(),
                text: "gold iron lead".into(),
            },
            Passage {
                id: "p4".into(),
                text: "moon nova orbit".into(),
            },
        ];
        let queries = vec![
            Query {
                id: "q1".into(),
                text: "apple cherry".into(),
            },
            Query {
                id: "q2".into(),
                text: "gold lead".into(),
            },
        ];
        let collection = Collection::new(passages).unwrap();
        let queries = QuerySet::new(queries).unwrap();
        let vocab = build_vocab(&collection, &queries, 200).unwrap();
        let examples = vec![
            TrainingExample {
                query_id: "q1".into(),
                passage_id: "p1".into(),
                label: 1,
            },
            TrainingExample {
                query_id: "q1".into(),
                passage_id: "p2".into(),
                label: 0,
            },
            TrainingExample {
                query_id: "q2".into(),
                passage_id: "p3".into(),
                label: 1,
            },
            TrainingExample {
                query_id: "q2".into(),
                passage_id: "p4".into(),
                label: 0,
            },
        ];
        (collection, queries, vocab, examples)
    }

    fn overfit_config(vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            vocab_size: vocab.size(),
            max_positions: 16,
            dropout: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn training_overfits_a_tiny_task() {
        let (collection, queries, vocab, examples) = overfit_fixture();
        let mut params = init_params(&overfit_config(&vocab)).unwrap();
        let mut hyper = OptimizerHyper::with_schedule(30, 300);
        hyper.base_lr = 5e-3;
        let options = TrainOptions {
            batch_size: 4,
            max_query_pieces: 8,
            max_total_pieces: 16,
            grad_clip: None,
        };
        let log = train(
            &mut params,
            &examples,
            &collection,
            &queries,
            &vocab,
            &hyper,
            &options,
        )
        .unwrap();
        assert_eq!(log.len(), 300);
        let initial = log[0].loss;
        let final_mean: f64 = log[290..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(
            final_mean < 0.1 * initial,
            "loss {initial} only reached {final_mean} after 300 steps"
        );
    }

    #[test]
    fn first_step_loss_is_batch_size_times_ln_two() {
        let (collection, queries, vocab, examples) = overfit_fixture();
        let mut params = init_params(&overfit_config(&vocab)).unwrap();
        let hyper = OptimizerHyper::with_schedule(1, 2);
        let options = TrainOptions {
            batch_size: 4,
            max_query_pieces: 8,
            max_total_pieces: 16,
            grad_clip: None,
        };
        let log = train(
            &mut params,
            &examples,
            &collection,
            &queries,
            &vocab,
            &hyper,
            &options,
        )
        .unwrap();
        let per_example = log[0].loss / 4.0;
        assert!((per_example - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn identical_seeds_reproduce_identical_parameters() {
        let (collection, queries, vocab, examples) = overfit_fixture();
        let cfg = overfit_config(&vocab);
        let hyper = OptimizerHyper {
            base_lr: 1e-3,
            ..OptimizerHyper::with_schedule(5, 50)
        };
        let options = TrainOptions {
            batch_size: 3,
            max_query_pieces: 8,
            max_total_pieces: 16,
            grad_clip: Some(5.0),
        };
        let run = || {
            let mut params = init_params(&cfg).unwrap();
            train(
                &mut params,
                &examples,
                &collection,
                &queries,
                &vocab,
                &hyper,
                &options,
            )
            .unwrap();
            params
        };
        let a = run();
        let b = run();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            for (u, w) in x.data.iter().zip(y.data) {
                assert_eq!(u.to_bits(), w.to_bits());
            }
        }
    }

    #[test]
    fn unknown_ids_are_integrity_errors() {
        let (collection, queries, vocab, _) = overfit_fixture();
        let mut params = init_params(&overfit_config(&vocab)).unwrap();
        let hyper = OptimizerHyper::with_schedule(1, 2);
        let options = TrainOptions {
            batch_size: 1,
            max_query_pieces: 8,
            max_total_pieces: 16,
            grad_clip: None,
        };
        let examples = vec![TrainingExample {
            query_id: "missing".into(),
            passage_id: "p1".into(),
            label: 1,
        }];
        let err = train(
            &mut params,
            &examples,
            &collection,
            &queries,
            &vocab,
            &hyper,
            &options,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }
}
