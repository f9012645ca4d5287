//! Backpropagation through the cross-encoder.
//!
//! Consumes the cache of a training-mode forward pass and produces the
//! gradient of the summed binary cross-entropy loss (with the probability
//! clamp applied, so a clamped example contributes zero gradient). Gradients
//! accumulate over the batch in a fixed order, which keeps runs bit-stable.

use ndarray::{arr1, s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::forward::{ExampleCache, ForwardCache};
use crate::model::math::{gelu_prime, layer_norm_backward};
use crate::model::{Gradients, Parameters, PROB_CLAMP};

/// Gradient of the batch loss for every parameter tensor.
///
/// `labels[i]` is the binary relevance of the i-th cached example. The head
/// gradient follows the softmax cross-entropy convention: for an unclamped
/// example, the per-logit gradient is `p - y`.
pub fn backward(params: &Parameters, cache: &ForwardCache, labels: &[u8]) -> Result<Gradients> {
    if labels.len() != cache.examples.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} cached examples",
            labels.len(),
            cache.examples.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Argument(format!("label {l} is not binary")));
    }
    let mut grads = params.zeros_like();
    for (example, &label) in cache.examples.iter().zip(labels) {
        backward_example(params, example, label, &mut grads);
    }
    Ok(grads)
}

fn backward_example(params: &Parameters, ex: &ExampleCache, label: u8, g: &mut Gradients) {
    let cfg = params.config();
    let n = ex.token_ids.len();
    let d = cfg.hidden_dim;

    let [p0, p1] = ex.probs;
    let dlogits: Array1<f64> = if p1 < PROB_CLAMP || p1 > 1.0 - PROB_CLAMP {
        // The loss clamp flattens the surface here.
        Array1::zeros(2)
    } else {
        let y = label as f64;
        arr1(&[p0 - (1.0 - y), p1 - y])
    };

    for j in 0..2 {
        for i in 0..d {
            g.head_weight[[i, j]] += ex.cls_hidden[i] * dlogits[j];
        }
        g.head_bias[j] += dlogits[j];
    }

    let mut dx: Array2<f64> = Array2::zeros((n, d));
    dx.row_mut(0).assign(&params.head_weight.dot(&dlogits));

    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let lc = &ex.layers[li];
        let gl = &mut g.layers[li];

        let mut dres2 = Array2::zeros((n, d));
        for i in 0..n {
            layer_norm_backward(
                dx.row(i).as_slice().expect("contiguous row"),
                lc.x_hat2.row(i).as_slice().expect("contiguous row"),
                lc.inv_std2[i],
                layer.ln2_scale.as_slice().expect("contiguous"),
                dres2.row_mut(i).as_slice_mut().expect("contiguous row"),
                gl.ln2_scale.as_slice_mut().expect("contiguous"),
                gl.ln2_shift.as_slice_mut().expect("contiguous"),
            );
        }

        let dh2 = &dres2 * &lc.ffn_drop;
        gl.w2 += &lc.g.t().dot(&dh2);
        gl.b2 += &dh2.sum_axis(Axis(0));
        let dg = dh2.dot(&layer.w2.t());
        let dh1 = dg * lc.h1.mapv(gelu_prime);
        gl.w1 += &lc.x_mid.t().dot(&dh1);
        gl.b1 += &dh1.sum_axis(Axis(0));
        let dx_mid = dres2 + dh1.dot(&layer.w1.t());

        let mut dres1 = Array2::zeros((n, d));
        for i in 0..n {
            layer_norm_backward(
                dx_mid.row(i).as_slice().expect("contiguous row"),
                lc.x_hat1.row(i).as_slice().expect("contiguous row"),
                lc.inv_std1[i],
                layer.ln1_scale.as_slice().expect("contiguous"),
                dres1.row_mut(i).as_slice_mut().expect("contiguous row"),
                gl.ln1_scale.as_slice_mut().expect("contiguous"),
                gl.ln1_shift.as_slice_mut().expect("contiguous"),
            );
        }

        let dattn = &dres1 * &lc.attn_drop;
        gl.wo += &lc.context.t().dot(&dattn);
        gl.bo += &dattn.sum_axis(Axis(0));
        let dcontext = dattn.dot(&layer.wo.t());

        let head_dim = cfg.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for h in 0..cfg.num_heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let a = &lc.attn_probs[h];
            let dctx = dcontext.slice(cols);
            let da = dctx.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx));

            // Softmax backward per row; masked columns have zero weight and
            // therefore zero gradient.
            let mut ds = Array2::zeros((n, n));
            for i in 0..n {
                let arow = a.row(i);
                let darow = da.row(i);
                let dot: f64 = arow.iter().zip(darow.iter()).map(|(&x, &y)| x * y).sum();
                for j in 0..n {
                    ds[[i, j]] = arow[j] * (darow[j] - dot);
                }
            }

            let mut dqh = ds.dot(&lc.k.slice(cols));
            dqh.mapv_inplace(|v| v * scale);
            dq.slice_mut(cols).assign(&dqh);
            let mut dkh = ds.t().dot(&lc.q.slice(cols));
            dkh.mapv_inplace(|v| v * scale);
            dk.slice_mut(cols).assign(&dkh);
        }

        gl.wq += &lc.x_in.t().dot(&dq);
        gl.bq += &dq.sum_axis(Axis(0));
        gl.wk += &lc.x_in.t().dot(&dk);
        gl.bk += &dk.sum_axis(Axis(0));
        gl.wv += &lc.x_in.t().dot(&dv);
        gl.bv += &dv.sum_axis(Axis(0));

        dx = dres1 + dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    }

    let demb = dx * &ex.emb_drop;
    for i in 0..n {
        let row = demb.row(i);
        let mut tok = g.token_embedding.row_mut(ex.token_ids[i] as usize);
        tok += &row;
        let mut seg = g.segment_embedding.row_mut(ex.segment_ids[i] as usize);
        seg += &row;
        let mut pos = g.position_embedding.row_mut(i);
        pos += &row;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, tiny_config, Mode, ModelConfig};
    use crate::tokenizer::{encode_pair, pad_batch, EncodedPair, Vocab};
    use crate::train::bce_loss;

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

    fn small_batch() -> Vec<EncodedPair> {
        let vocab = test_vocab();
        let mut batch = vec![
            encode_pair("cat dog", "bird fish cow", &vocab, 8, 16).unwrap(),
            encode_pair("owl", "hen fox", &vocab, 8, 16).unwrap(),
        ];
        pad_batch(&mut batch);
        batch
    }

    #[test]
    fn head_bias_gradient_is_probability_minus_label() {
        let params = init_params(&tiny_config()).unwrap();
        let batch = small_batch();
        let out = forward(&params, &batch, Mode::Train { dropout_seed: 3 }).unwrap();
        let g = backward(&params, out.require_cache().unwrap(), &[1, 0]).unwrap();
        // Zero-init head puts both examples at probability exactly 0.5, so
        // the per-example contributions are (0.5, -0.5) and (-0.5, 0.5).
        assert_eq!(g.head_bias[0], 0.0);
        assert_eq!(g.head_bias[1], 0.0);

        let g1 = backward(&params, out.require_cache().unwrap(), &[1, 1]).unwrap();
        assert_eq!(g1.head_bias[0], 1.0);
        assert_eq!(g1.head_bias[1], -1.0);
    }

    #[test]
    fn unused_embedding_rows_get_exactly_zero_gradient() {
        let mut params = init_params(&tiny_config()).unwrap();
        // A zero head would block all gradient flow into the encoder.
        params.head_weight.column_mut(1).fill(0.3);
        let batch = small_batch();
        let used: std::collections::HashSet<u32> = batch
            .iter()
            .flat_map(|p| p.token_ids.iter().copied())
            .collect();
        let out = forward(&params, &batch, Mode::Train { dropout_seed: 3 }).unwrap();
        let g = backward(&params, out.require_cache().unwrap(), &[1, 0]).unwrap();
        let unused = (0..params.config().vocab_size as u32)
            .find(|t| !used.contains(t))
            .unwrap();
        assert!(g
            .token_embedding
            .row(unused as usize)
            .iter()
            .all(|&v| v == 0.0));
        assert!(g.token_embedding.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn label_count_mismatch_is_an_argument_error() {
        let params = init_params(&tiny_config()).unwrap();
        let batch = small_batch();
        let out = forward(&params, &batch, Mode::Train { dropout_seed: 0 }).unwrap();
        assert!(backward(&params, out.require_cache().unwrap(), &[1]).is_err());
        assert!(backward(&params, out.require_cache().unwrap(), &[1, 7]).is_err());
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let cfg = ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 6,
            ffn_dim: 10,
            vocab_size: 140,
            max_positions: 20,
            dropout: 0.1,
            seed: 5,
        };
        // Symmetry breaking: a zero head would zero most of the gradient.
        let mut params = init_params(&cfg).unwrap();
        params.head_weight.column_mut(0).fill(-0.03);
        params.head_weight.column_mut(1).fill(0.05);
        params.head_bias[0] = 0.01;

        let batch = small_batch();
        let labels = [1u8, 0u8];
        let seed = 77;

        let out = forward(&params, &batch, Mode::Train { dropout_seed: seed }).unwrap();
        let analytic = backward(&params, out.require_cache().unwrap(), &labels).unwrap();

        let loss_at = |p: &Parameters| -> f64 {
            let out = forward(p, &batch, Mode::Train { dropout_seed: seed }).unwrap();
            bce_loss(&out.probabilities, &labels).unwrap()
        };

        let h = 1e-5;
        let flat_analytic: Vec<Vec<f64>> =
            analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
        let mut worst = 0.0f64;
        let num_tensors = params.tensors().len();
        for ti in 0..num_tensors {
            let len = params.tensors()[ti].data.len();
            let stride = (len / 4).max(1);
            for ci in (0..len).step_by(stride) {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data[ci] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data[ci] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = flat_analytic[ti][ci];
                worst = worst.max(relative_error(fd, an));
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }
}
