//! Scalar and vector primitives shared by the forward and backward passes.

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted). Entries of negative
/// infinity receive exactly zero weight; at least one finite entry is
/// required.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_inplace(&mut out);
    out
}

pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "softmax needs at least one finite entry");
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Layer normalization with population variance:
/// `(x - mean) / sqrt(var + eps) * scale + shift`.
pub fn layer_norm(x: &[f64], scale: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut x_hat = vec![0.0; x.len()];
    layer_norm_into(x, scale, shift, eps, &mut x_hat, &mut out);
    out
}

/// Worker behind [`layer_norm`] that also exposes the normalized vector,
/// which the backward pass needs. Returns `1/sqrt(var + eps)`.
pub(crate) fn layer_norm_into(
    x: &[f64],
    scale: &[f64],
    shift: &[f64],
    eps: f64,
    x_hat: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        x_hat[i] = (x[i] - mean) * inv_std;
        out[i] = x_hat[i] * scale[i] + shift[i];
    }
    inv_std
}

/// Gradient of layer normalization for one row.
///
/// Given upstream `dy`, the cached normalized row and `1/sqrt(var+eps)`,
/// writes `dx` and accumulates into `dscale`/`dshift`.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    x_hat: &[f64],
    inv_std: f64,
    scale: &[f64],
    dx: &mut [f64],
    dscale: &mut [f64],
    dshift: &mut [f64],
) {
    let n = dy.len() as f64;
    let mut sum_dxhat = 0.0;
    let mut sum_dxhat_xhat = 0.0;
    for i in 0..dy.len() {
        dscale[i] += dy[i] * x_hat[i];
        dshift[i] += dy[i];
        let dxhat = dy[i] * scale[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * x_hat[i];
    }
    for i in 0..dy.len() {
        let dxhat = dy[i] * scale[i];
        dx[i] = inv_std * (dxhat - sum_dxhat / n - x_hat[i] * sum_dxhat_xhat / n);
    }
}

const GELU_COEFF: f64 = 0.044715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// GELU activation, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let u = sqrt_2_over_pi() * (x + GELU_COEFF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_prime(x: f64) -> f64 {
    let c = sqrt_2_over_pi();
    let u = c * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
