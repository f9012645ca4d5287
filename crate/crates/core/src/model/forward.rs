//! Forward pass: embeddings, encoder stack, [CLS] head.
//!
//! Sequences are processed one example at a time in f64. In training mode
//! every example gets its own dropout stream derived from the step seed and
//! the example's position in the batch, so runs replay exactly. Inference
//! applies no dropout and produces no cache.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::math::{gelu, layer_norm_into, softmax, softmax_inplace, LAYER_NORM_EPS};
use crate::model::{LayerParams, Parameters};
use crate::tokenizer::EncodedPair;

/// Execution mode of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Dropout active; `dropout_seed` fixes all dropout decisions.
    Train {
        dropout_seed: u64,
    },
}

/// Activations of one encoder layer kept for the backward pass.
#[derive(Debug)]
pub(crate) struct LayerCache {
    pub x_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub attn_probs: Vec<Array2<f64>>,
    pub context: Array2<f64>,
    pub attn_drop: Array2<f64>,
    pub x_hat1: Array2<f64>,
    pub inv_std1: Array1<f64>,
    pub x_mid: Array2<f64>,
    pub h1: Array2<f64>,
    pub g: Array2<f64>,
    pub ffn_drop: Array2<f64>,
    pub x_hat2: Array2<f64>,
    pub inv_std2: Array1<f64>,
}

/// Per-example activations from a training-mode forward pass.
#[derive(Debug)]
pub(crate) struct ExampleCache {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub emb_drop: Array2<f64>,
    pub layers: Vec<LayerCache>,
    pub cls_hidden: Array1<f64>,
    pub probs: [f64; 2],
}

/// Everything the backward pass needs, present only after a training-mode
/// forward.
#[derive(Debug)]
pub struct ForwardCache {
    pub(crate) examples: Vec<ExampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }
}

/// Result of a forward pass: one relevance probability per example, plus the
/// backward cache in training mode.
#[derive(Debug)]
pub struct ForwardOutput {
    pub probabilities: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

impl ForwardOutput {
    /// The training cache, or a state error if the pass ran in inference
    /// mode.
    pub fn require_cache(&self) -> Result<&ForwardCache> {
        self.cache
            .as_ref()
            .ok_or_else(|| Error::State("backward requires a training-mode forward pass".into()))
    }
}

pub(crate) fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverted-dropout multiplier matrix: 0 with probability p, otherwise
/// 1/(1-p). With p = 0 (or in inference) this is all ones.
fn dropout_mask(rng: Option<&mut ChaCha8Rng>, rows: usize, cols: usize, p: f64) -> Array2<f64> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Array2::from_shape_fn(
                (rows, cols),
                |_| if rng.gen::<f64>() < p { 0.0 } else { keep },
            )
        }
        _ => Array2::ones((rows, cols)),
    }
}

fn check_finite(x: &Array2<f64>, place: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {place}")))
    }
}

struct AttnPieces {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

/// Multi-head scaled dot-product self-attention. Masked positions get
/// negative-infinity logits, hence exactly zero weight.
fn multi_head_attention(
    x: &Array2<f64>,
    layer: &LayerParams,
    num_heads: usize,
    mask: &[u8],
) -> AttnPieces {
    let (n, d) = x.dim();
    let head_dim = d / num_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q = x.dot(&layer.wq) + &layer.bq;
    let k = x.dot(&layer.wk) + &layer.bk;
    let v = x.dot(&layer.wv) + &layer.bv;

    let mut context = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * head_dim..(h + 1) * head_dim];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|s| s * scale);
        for (j, &m) in mask.iter().enumerate() {
            if m == 0 {
                scores.column_mut(j).fill(f64::NEG_INFINITY);
            }
        }
        for mut row in scores.rows_mut() {
            softmax_inplace(row.as_slice_mut().expect("contiguous row"));
        }
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    AttnPieces {
        q,
        k,
        v,
        probs,
        context,
    }
}

/// One full post-norm attention sublayer without dropout: multi-head
/// attention, output projection, residual sum, then layer norm. Exposed for
/// direct inspection; [`forward`] runs the same computation internally.
pub fn attention_layer(
    x: &Array2<f64>,
    layer: &LayerParams,
    num_heads: usize,
    mask: &[u8],
) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::Argument(format!(
            "hidden dim {d} is not divisible by {num_heads} heads"
        )));
    }
    if mask.len() != n {
        return Err(Error::Argument(format!(
            "mask length {} does not match sequence length {n}",
            mask.len()
        )));
    }
    if mask.iter().all(|&m| m == 0) {
        return Err(Error::Argument(
            "attention requires at least one unmasked position".into(),
        ));
    }
    let pieces = multi_head_attention(x, layer, num_heads, mask);
    let res = x + &(pieces.context.dot(&layer.wo) + &layer.bo);
    let mut out = Array2::zeros((n, d));
    let mut x_hat = vec![0.0; d];
    for i in 0..n {
        layer_norm_into(
            res.row(i).as_slice().expect("contiguous row"),
            layer.ln1_scale.as_slice().expect("contiguous"),
            layer.ln1_shift.as_slice().expect("contiguous"),
            LAYER_NORM_EPS,
            &mut x_hat,
            out.row_mut(i).as_slice_mut().expect("contiguous row"),
        );
    }
    Ok(out)
}

fn layer_norm_rows(
    x: &Array2<f64>,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d));
    let mut x_hat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    for i in 0..n {
        inv_std[i] = layer_norm_into(
            x.row(i).as_slice().expect("contiguous row"),
            scale.as_slice().expect("contiguous"),
            shift.as_slice().expect("contiguous"),
            LAYER_NORM_EPS,
            x_hat.row_mut(i).as_slice_mut().expect("contiguous row"),
            out.row_mut(i).as_slice_mut().expect("contiguous row"),
        );
    }
    (out, x_hat, inv_std)
}

fn validate_batch(params: &Parameters, batch: &[EncodedPair]) -> Result<usize> {
    let cfg = params.config();
    if batch.is_empty() {
        return Err(Error::Argument("forward requires a non-empty batch".into()));
    }
    let n = batch[0].token_ids.len();
    for (i, pair) in batch.iter().enumerate() {
        if pair.token_ids.len() != n || pair.segment_ids.len() != n || pair.mask.len() != n {
            return Err(Error::Argument(format!(
                "example {i}: sequences not padded to the common batch length {n}"
            )));
        }
        if n == 0 || n > cfg.max_positions {
            return Err(Error::Argument(format!(
                "sequence length {n} outside 1..={}",
                cfg.max_positions
            )));
        }
        if pair.mask[0] == 0 {
            return Err(Error::Argument(format!(
                "example {i}: leading [CLS] position must be unmasked"
            )));
        }
        for (&t, &s) in pair.token_ids.iter().zip(&pair.segment_ids) {
            if t as usize >= cfg.vocab_size {
                return Err(Error::Argument(format!(
                    "example {i}: token id {t} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
            if s > 1 {
                return Err(Error::Argument(format!(
                    "example {i}: segment id {s} not in {{0,1}}"
                )));
            }
        }
    }
    Ok(n)
}

fn forward_example(
    params: &Parameters,
    pair: &EncodedPair,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleCache> {
    let cfg = params.config();
    let n = pair.token_ids.len();
    let d = cfg.hidden_dim;
    let p = cfg.dropout;
    let mut rng = rng;
    let next_drop = move |rng: &mut Option<&mut ChaCha8Rng>, rows: usize, cols: usize| {
        dropout_mask(rng.as_mut().map(|r| &mut **r), rows, cols, p)
    };

    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let tok = params.token_embedding.row(pair.token_ids[i] as usize);
        let seg = params.segment_embedding.row(pair.segment_ids[i] as usize);
        let pos = params.position_embedding.row(i);
        let mut row = x.row_mut(i);
        row.assign(&tok);
        row += &seg;
        row += &pos;
    }
    let emb_drop = next_drop(&mut rng, n, d);
    x = x * &emb_drop;
    check_finite(&x, "embeddings")?;

    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let x_in = x;
        let pieces = multi_head_attention(&x_in, layer, cfg.num_heads, &pair.mask);
        let attn_out = pieces.context.dot(&layer.wo) + &layer.bo;
        let attn_drop = next_drop(&mut rng, n, d);
        let res1 = &x_in + &(attn_out * &attn_drop);
        let (x_mid, x_hat1, inv_std1) = layer_norm_rows(&res1, &layer.ln1_scale, &layer.ln1_shift);

        let h1 = x_mid.dot(&layer.w1) + &layer.b1;
        let g = h1.mapv(gelu);
        let h2 = g.dot(&layer.w2) + &layer.b2;
        let ffn_drop = next_drop(&mut rng, n, d);
        let res2 = &x_mid + &(h2 * &ffn_drop);
        let (x_out, x_hat2, inv_std2) = layer_norm_rows(&res2, &layer.ln2_scale, &layer.ln2_shift);
        check_finite(&x_out, &format!("layer {li} output"))?;

        layers.push(LayerCache {
            x_in,
            q: pieces.q,
            k: pieces.k,
            v: pieces.v,
            attn_probs: pieces.probs,
            context: pieces.context,
            attn_drop,
            x_hat1,
            inv_std1,
            x_mid,
            h1,
            g,
            ffn_drop,
            x_hat2,
            inv_std2,
        });
        x = x_out;
    }

    let cls_hidden = x.row(0).to_owned();
    let logits = params.head_weight.t().dot(&cls_hidden) + &params.head_bias;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite activation in head logits".into(),
        ));
    }
    let probs = softmax(logits.as_slice().expect("contiguous"));

    Ok(ExampleCache {
        token_ids: pair.token_ids.clone(),
        segment_ids: pair.segment_ids.clone(),
        emb_drop,
        layers,
        cls_hidden,
        probs: [probs[0], probs[1]],
    })
}

/// Scores a padded batch, returning the relevance probability of every
/// example (second softmax component over the two head logits).
pub fn forward(params: &Parameters, batch: &[EncodedPair], mode: Mode) -> Result<ForwardOutput> {
    validate_batch(params, batch)?;
    let mut probabilities = Vec::with_capacity(batch.len());
    let mut examples = Vec::new();
    for (idx, pair) in batch.iter().enumerate() {
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(splitmix(
                dropout_seed,
                idx as u64,
            ))),
            Mode::Infer => None,
        };
        let example = forward_example(params, pair, rng.as_mut())?;
        probabilities.push(example.probs[1]);
        if matches!(mode, Mode::Train { .. }) {
            examples.push(example);
        }
    }
    let cache = match mode {
        Mode::Train { .. } => Some(ForwardCache { examples }),
        Mode::Infer => None,
    };
    Ok(ForwardOutput {
        probabilities,
        cache,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, tiny_config, ModelConfig};
    use crate::tokenizer::{encode_pair, pad_batch, Vocab};

    fn test_vocab() -> Vocab {
        let mut pieces: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".chars() {
            pieces.push(c.to_string());
        }
        for c in "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".chars() {
            pieces.push(format!("##{c}"));
        }
        Vocab::from_pieces(pieces).unwrap()
    }

    fn batch_of(texts: &[(&str, &str)]) -> Vec<EncodedPair> {
        let vocab = test_vocab();
        let mut batch: Vec<EncodedPair> = texts
            .iter()
            .map(|(q, p)| encode_pair(q, p, &vocab, 8, 24).unwrap())
            .collect();
        pad_batch(&mut batch);
        batch
    }

    #[test]
    fn fresh_model_scores_everything_at_half() {
        let params = init_params(&tiny_config()).unwrap();
        let batch = batch_of(&[("cat", "dog mouse"), ("a b", "c d e f")]);
        let out = forward(&params, &batch, Mode::Infer).unwrap();
        assert_eq!(out.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn inference_is_deterministic_and_in_bounds() {
        let mut params = init_params(&tiny_config()).unwrap();
        params.head_weight.column_mut(1).fill(0.3);
        let batch = batch_of(&[("cat", "dog"), ("fish", "bird cat"), ("x", "y z")]);
        let a = forward(&params, &batch, Mode::Infer).unwrap();
        let b = forward(&params, &batch, Mode::Infer).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        assert_eq!(a.probabilities.len(), 3);
        assert!(a.probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn padding_does_not_change_probabilities() {
        let mut params = init_params(&tiny_config()).unwrap();
        params.head_weight.column_mut(1).fill(0.25);
        let batch = batch_of(&[("cat dog", "bird fish cow")]);
        let base = forward(&params, &batch, Mode::Infer).unwrap().probabilities[0];
        let mut padded = batch.clone();
        padded[0].pad_to(batch[0].token_ids.len() + 5).unwrap();
        let got = forward(&params, &padded, Mode::Infer)
            .unwrap()
            .probabilities[0];
        assert!((base - got).abs() < 1e-10, "{base} vs {got}");
    }

    #[test]
    fn permuting_a_batch_permutes_outputs() {
        let mut params = init_params(&tiny_config()).unwrap();
        params.head_weight.column_mut(1).fill(-0.4);
        let batch = batch_of(&[("cat", "dog"), ("bird", "fish wolf")]);
        let fwd = forward(&params, &batch, Mode::Infer).unwrap().probabilities;
        let swapped: Vec<EncodedPair> = vec![batch[1].clone(), batch[0].clone()];
        let rev = forward(&params, &swapped, Mode::Infer)
            .unwrap()
            .probabilities;
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
    }

    #[test]
    fn dropout_replays_under_the_same_seed() {
        let mut params = init_params(&tiny_config()).unwrap();
        params.head_weight.column_mut(1).fill(0.5);
        let batch = batch_of(&[("cat dog bird", "fish cow owl hen")]);
        let a = forward(&params, &batch, Mode::Train { dropout_seed: 9 }).unwrap();
        let b = forward(&params, &batch, Mode::Train { dropout_seed: 9 }).unwrap();
        let c = forward(&params, &batch, Mode::Train { dropout_seed: 10 }).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        assert_ne!(a.probabilities, c.probabilities);
    }

    #[test]
    fn zero_dropout_training_matches_inference() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..tiny_config()
        };
        let mut params = init_params(&cfg).unwrap();
        params.head_weight.column_mut(1).fill(0.2);
        let batch = batch_of(&[("cat", "dog mouse owl")]);
        let train = forward(&params, &batch, Mode::Train { dropout_seed: 1 }).unwrap();
        let infer = forward(&params, &batch, Mode::Infer).unwrap();
        assert_eq!(train.probabilities, infer.probabilities);
    }

    #[test]
    fn cache_exists_only_in_training_mode() {
        let params = init_params(&tiny_config()).unwrap();
        let batch = batch_of(&[("cat", "dog")]);
        let train = forward(&params, &batch, Mode::Train { dropout_seed: 0 }).unwrap();
        assert!(train.require_cache().is_ok());
        let infer = forward(&params, &batch, Mode::Infer).unwrap();
        assert!(matches!(
            infer.require_cache().unwrap_err(),
            Error::State(_)
        ));
    }

    #[test]
    fn equal_attention_logits_spread_weight_uniformly() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg).unwrap();
        params.layers[0].wq.fill(0.0);
        params.layers[0].wk.fill(0.0);
        let x = Array2::from_shape_fn((5, cfg.hidden_dim), |(i, j)| (i + j) as f64 * 0.1);
        let mask = vec![1, 1, 1, 1, 0];
        let pieces = multi_head_attention(&x, &params.layers[0], cfg.num_heads, &mask);
        for head in &pieces.probs {
            for row in head.rows() {
                for (j, &w) in row.iter().enumerate() {
                    let want = if j < 4 { 0.25 } else { 0.0 };
                    assert!((w - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_unmasked_key_forces_attention_to_it() {
        let cfg = tiny_config();
        let params = init_params(&cfg).unwrap();
        let x = Array2::from_shape_fn((4, cfg.hidden_dim), |(i, j)| ((i * 7 + j) as f64).sin());
        let mask = vec![1, 0, 0, 0];
        let pieces = multi_head_attention(&x, &params.layers[0], cfg.num_heads, &mask);
        let head_dim = cfg.head_dim();
        for (h, probs) in pieces.probs.iter().enumerate() {
            for i in 0..4 {
                assert!((probs[[i, 0]] - 1.0).abs() < 1e-12);
            }
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let vh = pieces.v.slice(cols);
            let ch = pieces.context.slice(cols);
            for i in 0..4 {
                for j in 0..head_dim {
                    assert!((ch[[i, j]] - vh[[0, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_layer_preserves_shape() {
        let cfg = tiny_config();
        let params = init_params(&cfg).unwrap();
        let x = Array2::from_shape_fn((6, cfg.hidden_dim), |(i, j)| ((i + 2 * j) as f64).cos());
        let mask = vec![1; 6];
        let out = attention_layer(&x, &params.layers[0], cfg.num_heads, &mask).unwrap();
        assert_eq!(out.dim(), x.dim());
    }

    #[test]
    fn non_finite_weights_surface_as_numeric_errors() {
        let mut params = init_params(&tiny_config()).unwrap();
        // Row 2 is [CLS], present in every encoded pair.
        params.token_embedding[[2, 0]] = f64::NAN;
        let batch = batch_of(&[("cat", "dog")]);
        let err = forward(&params, &batch, Mode::Infer).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("embeddings")));
    }

    #[test]
    fn token_id_out_of_range_is_rejected() {
        let cfg = ModelConfig {
            vocab_size: 5,
            ..tiny_config()
        };
        let params = init_params(&cfg).unwrap();
        let batch = batch_of(&[("cat", "dog")]);
        assert!(matches!(
            forward(&params, &batch, Mode::Infer).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn ragged_batches_are_rejected() {
        let params = init_params(&tiny_config()).unwrap();
        let vocab = test_vocab();
        let batch = vec![
            encode_pair("a", "b", &vocab, 8, 24).unwrap(),
            encode_pair("a b c", "d e f g", &vocab, 8, 24).unwrap(),
        ];
        assert!(matches!(
            forward(&params, &batch, Mode::Infer).unwrap_err(),
            Error::Argument(_)
        ));
    }
}
