//! Non-convolution layers and losses, forward and backward.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Element, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Batch-norm output plus what backward needs.
pub struct BnForward<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel batch normalisation of `[N, C, H, W]`.
///
/// In [`Mode::Train`] the batch statistics are used and the running
/// statistics are updated with momentum [`BN_MOMENTUM`] (running variance is
/// the unbiased estimate). In [`Mode::Eval`] the running statistics are used
/// and left untouched.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
) -> Result<BnForward<T>> {
    let (n, c, h, w) = x.dims4()?;
    for t in [scale, shift, &*running_mean, &*running_var] {
        if t.shape() != [c] {
            return Err(Error::shape_mismatch(&[c], t.shape()));
        }
    }
    let area = h * w;
    let count = n * area;
    let xd = x.data();
    let eps = T::of(BN_EPS);
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * area..][..area] {
                        sum += v;
                    }
                }
                let mean = sum / T::of(count as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * area..][..area] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / T::of(count as f64);
                let unbiased = if count > 1 {
                    sq / T::of((count - 1) as f64)
                } else {
                    var
                };
                let m = T::of(BN_MOMENTUM);
                let rm = &mut running_mean.data_mut()[ch];
                *rm = (T::one() - m) * *rm + m * mean;
                let rv = &mut running_var.data_mut()[ch];
                *rv = (T::one() - m) * *rv + m * unbiased;
                (mean, var)
            }
            Mode::Eval => (running_mean.data()[ch], running_var.data()[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        let (g, bta) = (scale.data()[ch], shift.data()[ch]);
        for b in 0..n {
            let off = (b * c + ch) * area;
            for k in off..off + area {
                let xh = (xd[k] - mean) * is;
                xhat[k] = xh;
                y[k] = g * xh + bta;
            }
        }
    }
    Ok(BnForward {
        y: Tensor::from_parts(x.shape().to_vec(), y),
        xhat: Tensor::from_parts(x.shape().to_vec(), xhat),
        inv_std,
    })
}

pub(crate) struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dscale: Tensor<T>,
    pub dshift: Tensor<T>,
}

pub(crate) fn batch_norm_backward<T: Element>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    scale: &Tensor<T>,
    mode: Mode,
    dy: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let (n, c, h, w) = xhat.dims4()?;
    let area = h * w;
    let m = T::of((n * area) as f64);
    let (xh, g) = (xhat.data(), dy.data());
    let mut dx = vec![T::zero(); g.len()];
    let mut dscale = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * area;
            for k in off..off + area {
                sum_dy += g[k];
                sum_dy_xh += g[k] * xh[k];
            }
        }
        dscale[ch] = sum_dy_xh;
        dshift[ch] = sum_dy;
        let k_scale = scale.data()[ch] * inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * area;
            for k in off..off + area {
                dx[k] = match mode {
                    Mode::Train => k_scale / m * (m * g[k] - sum_dy - xh[k] * sum_dy_xh),
                    Mode::Eval => k_scale * g[k],
                };
            }
        }
    }
    Ok(BnGrads {
        dx: Tensor::from_parts(dy.shape().to_vec(), dx),
        dscale: Tensor::from_parts(vec![c], dscale),
        dshift: Tensor::from_parts(vec![c], dshift),
    })
}

/// `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let area = h * w;
    let inv = T::one() / T::of(area as f64);
    let data = x
        .data()
        .chunks(area)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

pub(crate) fn global_avg_pool_backward<T: Element>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let area: usize = x_shape[2] * x_shape[3];
    let inv = T::one() / T::of(area as f64);
    let mut data = Vec::with_capacity(dy.len() * area);
    for &g in dy.data() {
        data.extend(std::iter::repeat_n(g * inv, area));
    }
    Tensor::from_parts(x_shape.to_vec(), data)
}

fn as_matrix<T: Element>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape() {
        [n, d] => Ok((*n, *d)),
        [n, d, 1, 1] => Ok((*n, *d)),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected [N, D] features".into(),
        }),
    }
}

/// `y = x · wᵀ + b` with `x: [N, d_in]`, `w: [d_out, d_in]`, `b: [d_out]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d_in) = as_matrix(x)?;
    let [d_out, wi] = w.shape() else {
        return Err(Error::InvalidShape {
            shape: w.shape().to_vec(),
            reason: "linear weight must be [d_out, d_in]".into(),
        });
    };
    let d_out = *d_out;
    if *wi != d_in {
        return Err(Error::shape_mismatch(&[d_out, d_in], w.shape()));
    }
    if b.shape() != [d_out] {
        return Err(Error::shape_mismatch(&[d_out], b.shape()));
    }
    let mut y = vec![T::zero(); n * d_out];
    matmul(n, d_in, d_out, x.data(), false, w.data(), true, &mut y, false);
    for row in y.chunks_mut(d_out) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Ok(Tensor::from_parts(vec![n, d_out], y))
}

pub(crate) fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d_in) = as_matrix(x)?;
    let d_out = w.shape()[0];
    let mut dx = vec![T::zero(); n * d_in];
    matmul(n, d_out, d_in, dy.data(), false, w.data(), false, &mut dx, false);
    let mut dw = vec![T::zero(); d_out * d_in];
    matmul(d_out, n, d_in, dy.data(), true, x.data(), false, &mut dw, false);
    let mut db = vec![T::zero(); d_out];
    for row in dy.data().chunks(d_out) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![d_out], db),
    ))
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = as_matrix(logits)?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean softmax cross-entropy over the batch; also returns the probabilities.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = as_matrix(logits)?;
    if labels.len() != n {
        return Err(Error::shape_mismatch(&[n], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let probs = softmax(logits)?;
    let mut loss = T::zero();
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        loss += lse - row[l];
    }
    Ok((loss / T::of(n as f64), probs))
}

pub(crate) fn softmax_cross_entropy_backward<T: Element>(probs: &Tensor<T>, labels: &[usize], dloss: T) -> Tensor<T> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let s = dloss / T::of(n as f64);
    let mut d = probs.data().to_vec();
    for (row, &l) in d.chunks_mut(k).zip(labels) {
        row[l] = row[l] - T::one();
        row.iter_mut().for_each(|v| *v = *v * s);
    }
    Tensor::from_parts(probs.shape().to_vec(), d)
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape_mismatch(pred.shape(), target.shape()));
    }
    let sum = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t));
    Ok(sum / T::of(pred.len() as f64))
}

pub(crate) fn mse_backward<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, dloss: T) -> Tensor<T> {
    let s = T::of(2.0) * dloss / T::of(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * s)
        .collect();
    Tensor::from_parts(pred.shape().to_vec(), data)
}
