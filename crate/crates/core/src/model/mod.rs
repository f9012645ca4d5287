//! Toy-scale transformer cross-encoder.
//!
//! A stack of post-norm self-attention encoder layers over token + segment +
//! position embeddings, pooled at the leading [CLS] position into a two-logit
//! softmax head whose second component is the relevance probability. All
//! arithmetic is f64 so gradients can be validated against central finite
//! differences.

mod backward;
mod checkpoint;
mod forward;
pub mod math;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub(crate) use forward::splitmix;
pub use forward::{attention_layer, forward, ForwardCache, ForwardOutput, Mode};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the
/// loss; the gradient treats clamped examples as flat.
pub const PROB_CLAMP: f64 = 1e-7;

/// Architecture and initialization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Argument(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_scale: Array1<f64>,
    pub ln1_shift: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_scale: Array1<f64>,
    pub ln2_shift: Array1<f64>,
}

/// All trainable tensors plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

/// Gradients share the exact tensor layout of the parameters they derive
/// from.
pub type Gradients = Parameters;

/// Weight-decay class of a tensor: only `Weight` tensors are decayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    LayerNorm,
}

/// A named view of one flattened parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable counterpart of [`TensorRef`].
pub struct TensorRefMut<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are standard layout")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are standard layout")
}

fn push2<'a>(
    out: &mut Vec<TensorRef<'a>>,
    name: impl Into<String>,
    kind: TensorKind,
    a: &'a Array2<f64>,
) {
    out.push(TensorRef {
        name: name.into(),
        kind,
        shape: a.shape().to_vec(),
        data: slice2(a),
    });
}

fn push1<'a>(
    out: &mut Vec<TensorRef<'a>>,
    name: impl Into<String>,
    kind: TensorKind,
    a: &'a Array1<f64>,
) {
    out.push(TensorRef {
        name: name.into(),
        kind,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("contiguous"),
    });
}

fn push2_mut<'a>(
    out: &mut Vec<TensorRefMut<'a>>,
    name: impl Into<String>,
    kind: TensorKind,
    a: &'a mut Array2<f64>,
) {
    let shape = a.shape().to_vec();
    out.push(TensorRefMut {
        name: name.into(),
        kind,
        shape,
        data: slice2_mut(a),
    });
}

fn push1_mut<'a>(
    out: &mut Vec<TensorRefMut<'a>>,
    name: impl Into<String>,
    kind: TensorKind,
    a: &'a mut Array1<f64>,
) {
    let shape = a.shape().to_vec();
    out.push(TensorRefMut {
        name: name.into(),
        kind,
        shape,
        data: a.as_slice_mut().expect("contiguous"),
    });
}

impl Parameters {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All-zero tensors shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Parameters> {
        config.validate()?;
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                wq: Array2::zeros((d, d)),
                bq: Array1::zeros(d),
                wk: Array2::zeros((d, d)),
                bk: Array1::zeros(d),
                wv: Array2::zeros((d, d)),
                bv: Array1::zeros(d),
                wo: Array2::zeros((d, d)),
                bo: Array1::zeros(d),
                ln1_scale: Array1::zeros(d),
                ln1_shift: Array1::zeros(d),
                w1: Array2::zeros((d, f)),
                b1: Array1::zeros(f),
                w2: Array2::zeros((f, d)),
                b2: Array1::zeros(d),
                ln2_scale: Array1::zeros(d),
                ln2_shift: Array1::zeros(d),
            })
            .collect();
        Ok(Parameters {
            config: config.clone(),
            token_embedding: Array2::zeros((config.vocab_size, d)),
            segment_embedding: Array2::zeros((2, d)),
            position_embedding: Array2::zeros((config.max_positions, d)),
            layers,
            head_weight: Array2::zeros((d, 2)),
            head_bias: Array1::zeros(2),
        })
    }

    /// Same shapes and config, every value zero.
    pub fn zeros_like(&self) -> Parameters {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data.fill(0.0);
        }
        out
    }

    /// All tensors in a fixed, documented order: the three embedding tables,
    /// then each layer's tensors, then the head.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(5 + 16 * self.layers.len());
        push2(
            &mut out,
            "token_embedding",
            TensorKind::Weight,
            &self.token_embedding,
        );
        push2(
            &mut out,
            "segment_embedding",
            TensorKind::Weight,
            &self.segment_embedding,
        );
        push2(
            &mut out,
            "position_embedding",
            TensorKind::Weight,
            &self.position_embedding,
        );
        for (i, l) in self.layers.iter().enumerate() {
            push2(&mut out, format!("layer{i}.wq"), TensorKind::Weight, &l.wq);
            push1(&mut out, format!("layer{i}.bq"), TensorKind::Bias, &l.bq);
            push2(&mut out, format!("layer{i}.wk"), TensorKind::Weight, &l.wk);
            push1(&mut out, format!("layer{i}.bk"), TensorKind::Bias, &l.bk);
            push2(&mut out, format!("layer{i}.wv"), TensorKind::Weight, &l.wv);
            push1(&mut out, format!("layer{i}.bv"), TensorKind::Bias, &l.bv);
            push2(&mut out, format!("layer{i}.wo"), TensorKind::Weight, &l.wo);
            push1(&mut out, format!("layer{i}.bo"), TensorKind::Bias, &l.bo);
            push1(
                &mut out,
                format!("layer{i}.ln1_scale"),
                TensorKind::LayerNorm,
                &l.ln1_scale,
            );
            push1(
                &mut out,
                format!("layer{i}.ln1_shift"),
                TensorKind::LayerNorm,
                &l.ln1_shift,
            );
            push2(&mut out, format!("layer{i}.w1"), TensorKind::Weight, &l.w1);
            push1(&mut out, format!("layer{i}.b1"), TensorKind::Bias, &l.b1);
            push2(&mut out, format!("layer{i}.w2"), TensorKind::Weight, &l.w2);
            push1(&mut out, format!("layer{i}.b2"), TensorKind::Bias, &l.b2);
            push1(
                &mut out,
                format!("layer{i}.ln2_scale"),
                TensorKind::LayerNorm,
                &l.ln2_scale,
            );
            push1(
                &mut out,
                format!("layer{i}.ln2_shift"),
                TensorKind::LayerNorm,
                &l.ln2_shift,
            );
        }
        push2(
            &mut out,
            "head_weight",
            TensorKind::Weight,
            &self.head_weight,
        );
        push1(&mut out, "head_bias", TensorKind::Bias, &self.head_bias);
        out
    }

    /// Mutable tensor views in the same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorRefMut<'_>> {
        let mut out = Vec::with_capacity(5 + 16 * self.layers.len());
        push2_mut(
            &mut out,
            "token_embedding",
            TensorKind::Weight,
            &mut self.token_embedding,
        );
        push2_mut(
            &mut out,
            "segment_embedding",
            TensorKind::Weight,
            &mut self.segment_embedding,
        );
        push2_mut(
            &mut out,
            "position_embedding",
            TensorKind::Weight,
            &mut self.position_embedding,
        );
        for (i, l) in self.layers.iter_mut().enumerate() {
            push2_mut(
                &mut out,
                format!("layer{i}.wq"),
                TensorKind::Weight,
                &mut l.wq,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.bq"),
                TensorKind::Bias,
                &mut l.bq,
            );
            push2_mut(
                &mut out,
                format!("layer{i}.wk"),
                TensorKind::Weight,
                &mut l.wk,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.bk"),
                TensorKind::Bias,
                &mut l.bk,
            );
            push2_mut(
                &mut out,
                format!("layer{i}.wv"),
                TensorKind::Weight,
                &mut l.wv,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.bv"),
                TensorKind::Bias,
                &mut l.bv,
            );
            push2_mut(
                &mut out,
                format!("layer{i}.wo"),
                TensorKind::Weight,
                &mut l.wo,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.bo"),
                TensorKind::Bias,
                &mut l.bo,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.ln1_scale"),
                TensorKind::LayerNorm,
                &mut l.ln1_scale,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.ln1_shift"),
                TensorKind::LayerNorm,
                &mut l.ln1_shift,
            );
            push2_mut(
                &mut out,
                format!("layer{i}.w1"),
                TensorKind::Weight,
                &mut l.w1,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.b1"),
                TensorKind::Bias,
                &mut l.b1,
            );
            push2_mut(
                &mut out,
                format!("layer{i}.w2"),
                TensorKind::Weight,
                &mut l.w2,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.b2"),
                TensorKind::Bias,
                &mut l.b2,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.ln2_scale"),
                TensorKind::LayerNorm,
                &mut l.ln2_scale,
            );
            push1_mut(
                &mut out,
                format!("layer{i}.ln2_shift"),
                TensorKind::LayerNorm,
                &mut l.ln2_shift,
            );
        }
        push2_mut(
            &mut out,
            "head_weight",
            TensorKind::Weight,
            &mut self.head_weight,
        );
        push1_mut(&mut out, "head_bias", TensorKind::Bias, &mut self.head_bias);
        out
    }

    /// Element-wise accumulation; shapes must agree.
    pub fn add_assign(&mut self, other: &Parameters) {
        let theirs = other.tensors();
        for (mine, other) in self.tensors_mut().into_iter().zip(theirs) {
            debug_assert_eq!(mine.name, other.name);
            for (a, b) in mine.data.iter_mut().zip(other.data) {
                *a += b;
            }
        }
    }

    /// True when every value in every tensor is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Samples a normal value, resampling until it lies within two standard
/// deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let x = sigma * r * (std::f64::consts::TAU * u2).cos();
        if x.abs() <= 2.0 * sigma {
            return x;
        }
    }
}

const INIT_SIGMA: f64 = 0.02;

/// Deterministic random initialization.
///
/// Embeddings and projection weights are truncated normal (sigma 0.02),
/// biases are zero, layer-norm scales are one with zero shifts, and the head
/// is zero so every input starts at probability exactly 0.5.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.hidden_dim;
    let f = config.ffn_dim;

    let normal2 = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((rows, cols), |_| truncated_normal(rng, INIT_SIGMA))
    };

    let token_embedding = normal2(config.vocab_size, d, &mut rng);
    let segment_embedding = normal2(2, d, &mut rng);
    let position_embedding = normal2(config.max_positions, d, &mut rng);

    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerParams {
            wq: normal2(d, d, &mut rng),
            bq: Array1::zeros(d),
            wk: normal2(d, d, &mut rng),
            bk: Array1::zeros(d),
            wv: normal2(d, d, &mut rng),
            bv: Array1::zeros(d),
            wo: normal2(d, d, &mut rng),
            bo: Array1::zeros(d),
            ln1_scale: Array1::ones(d),
            ln1_shift: Array1::zeros(d),
            w1: normal2(d, f, &mut rng),
            b1: Array1::zeros(f),
            w2: normal2(f, d, &mut rng),
            b2: Array1::zeros(d),
            ln2_scale: Array1::ones(d),
            ln2_shift: Array1::zeros(d),
        });
    }

    Ok(Parameters {
        config: config.clone(),
        token_embedding,
        segment_embedding,
        position_embedding,
        layers,
        head_weight: Array2::zeros((d, 2)),
        head_bias: Array1::zeros(2),
    })
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 8,
        ffn_dim: 16,
        vocab_size: 160,
        max_positions: 32,
        dropout: 0.1,
        seed: 11,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_under_seed() {
        let cfg = tiny_config();
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
    }

    #[test]
    fn different_seeds_give_different_weights() {
        let mut cfg = tiny_config();
        let a = init_params(&cfg).unwrap();
        cfg.seed = 12;
        let b = init_params(&cfg).unwrap();
        assert_ne!(a.token_embedding, b.token_embedding);
    }

    #[test]
    fn indivisible_head_count_is_rejected() {
        let cfg = ModelConfig {
            hidden_dim: 33,
            num_heads: 4,
            ..tiny_config()
        };
        assert!(matches!(init_params(&cfg).unwrap_err(), Error::Argument(_)));
    }

    #[test]
    fn dropout_of_one_is_rejected() {
        let cfg = ModelConfig {
            dropout: 1.0,
            ..tiny_config()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_weights_are_truncated_at_two_sigma() {
        let params = init_params(&tiny_config()).unwrap();
        for t in params.tensors() {
            if t.kind == TensorKind::Weight && t.name != "head_weight" {
                assert!(t.data.iter().all(|v| v.abs() <= 2.0 * INIT_SIGMA));
                assert!(t.data.iter().any(|v| *v != 0.0));
            }
        }
    }

    #[test]
    fn head_and_biases_start_at_zero_and_norms_at_one() {
        let params = init_params(&tiny_config()).unwrap();
        assert!(params.head_weight.iter().all(|&v| v == 0.0));
        assert!(params.head_bias.iter().all(|&v| v == 0.0));
        assert!(params.layers[0].bq.iter().all(|&v| v == 0.0));
        assert!(params.layers[0].ln1_scale.iter().all(|&v| v == 1.0));
        assert!(params.layers[0].ln1_shift.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_walk_is_stable_and_complete() {
        let params = init_params(&tiny_config()).unwrap();
        let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 5 + 16);
        assert_eq!(names[0], "token_embedding");
        assert_eq!(names[3], "layer0.wq");
        assert_eq!(names.last().unwrap(), "head_bias");
        let mut params = params;
        let mut_names: Vec<String> = params.tensors_mut().into_iter().map(|t| t.name).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn zeros_like_matches_shapes() {
        let params = init_params(&tiny_config()).unwrap();
        let zeros = params.zeros_like();
        for (a, b) in params.tensors().iter().zip(zeros.tensors()) {
            assert_eq!(a.shape, b.shape);
            assert!(b.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn add_assign_accumulates() {
        let params = init_params(&tiny_config()).unwrap();
        let mut acc = params.zeros_like();
        acc.add_assign(&params);
        acc.add_assign(&params);
        let doubled: Vec<f64> = params.tensors()[0].data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(acc.tensors()[0].data, &doubled[..]);
    }
}
