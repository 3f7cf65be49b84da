//! Forward kernels shared by the tape and by tape-free callers.

use super::Tensor;
use crate::error::{Error, Result};

/// `a [m x k] * b [k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", &[m, k], &[k2, n]));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a [m x k] * b^T` where `b` is `[n x k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul_nt", &[m, k], &[n, k2]));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out[i * n + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a^T * b` where `a` is `[k x m]` and `b` is `[k x n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul_tn", &[k, m], &[k2, n]));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let ar = a.row(p);
        let br = b.row(p);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-row statistics kept for the backward pass.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (m, d) = (x.rows(), x.cols());
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape("layer_norm", &[m, d], &[gain.len(), bias.len()]));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let mut xhat = vec![0.0; m * d];
    let mut inv_std = vec![0.0; m];
    let mut out = vec![0.0; m * d];
    for r in 0..m {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gain.data()[c] + bias.data()[c];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache { xhat, inv_std },
    ))
}

/// Standardizes each row (population variance) then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(t, _)| t)
}

pub(crate) fn max_pool_with_argmax(x: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    let (r, d) = (x.rows(), x.cols());
    if r == 0 || x.is_empty() {
        return Err(Error::EmptyPooling);
    }
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for i in 1..r {
        for (c, &v) in x.row(i).iter().enumerate() {
            // strict comparison: the first row wins ties
            if v > best[c] {
                best[c] = v;
                arg[c] = i;
            }
        }
    }
    Ok((best, arg))
}

/// Column-wise maximum over rows, returned as a vector of length `d`.
pub fn max_pool_rows(x: &Tensor) -> Result<Tensor> {
    max_pool_with_argmax(x).map(|(v, _)| Tensor::vector(v))
}

pub fn sigmoid_value(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable `-[y log s(z) + (1-y) log(1-s(z))]`.
pub(crate) fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
