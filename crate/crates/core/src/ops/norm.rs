use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Fraction of the previous running statistic kept at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    /// Number of train-mode updates folded in so far.
    pub tracked: u64,
}

impl<T: Real> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            tracked: 0,
        }
    }

    pub fn cast<U: Real>(&self) -> BnStats<U> {
        BnStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
            tracked: self.tracked,
        }
    }
}

/// Values kept from a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    beta: Vec<T>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl<T: Real> BnCache<T> {
    /// Per-channel mean and unbiased variance of this batch.
    pub fn batch_moments(&self) -> (&[f64], &[f64]) {
        (&self.batch_mean, &self.batch_var)
    }

    /// Recomputes the forward output `gamma * xhat + beta` bit-exactly.
    pub fn output(&self) -> Result<Tensor<T>> {
        let (c, hw) = (self.shape[1], self.shape[2] * self.shape[3]);
        let data = self
            .xhat
            .iter()
            .enumerate()
            .map(|(k, &xh)| {
                let ch = (k / hw) % c;
                self.gamma[ch] * xh + self.beta[ch]
            })
            .collect();
        Tensor::new(&self.shape, data)
    }
}

/// Normalized output, updated running statistics, and the train-mode cache.
pub type BnOutput<T> = (Tensor<T>, BnStats<T>, Option<BnCache<T>>);

/// Batch normalization over `N, H, W` of an `[N, C, H, W]` tensor.
///
/// Returns the output, the (possibly) updated running statistics, and a
/// backward cache in train mode.
pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BnStats<T>,
    mode: BnMode,
) -> Result<BnOutput<T>> {
    x.expect_rank("batchnorm2d", 4)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    gamma.expect_shape("batchnorm2d gamma", &[c])?;
    beta.expect_shape("batchnorm2d beta", &[c])?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(shape_err("batchnorm2d stats", stats.mean.shape(), &[c]));
    }
    let hw = h * w;
    let m = n * hw;
    let xd = x.data();
    let eps = T::of(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    match mode {
        BnMode::Infer => {
            if stats.tracked == 0 {
                return Err(Error::UninitializedStats);
            }
            for ch in 0..c {
                let inv = T::one() / (stats.var.data()[ch] + eps).sqrt();
                let scale = gamma.data()[ch] * inv;
                let shift = beta.data()[ch] - stats.mean.data()[ch] * scale;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    for (yv, &xv) in y[off..off + hw].iter_mut().zip(&xd[off..off + hw]) {
                        *yv = xv * scale + shift;
                    }
                }
            }
            Ok((Tensor::new(x.shape(), y)?, stats.clone(), None))
        }
        BnMode::Train => {
            if m < 2 {
                return Err(Error::Argument(alloc::format!(
                    "batchnorm2d: train mode needs at least 2 values per channel, got {m} for shape {:?}",
                    x.shape()
                )));
            }
            let mut xhat = vec![T::zero(); x.len()];
            let mut inv_std = Vec::with_capacity(c);
            let (mut batch_mean, mut batch_var) = (Vec::with_capacity(c), Vec::with_capacity(c));
            let mut new_stats = stats.clone();
            let mom = BN_MOMENTUM;
            for ch in 0..c {
                // accumulate moments in f64 regardless of workspace precision
                let mut sum = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    sum += xd[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    sq += xd[off..off + hw]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let inv = T::of(1.0 / libm::sqrt(var + BN_EPS));
                let mean_t = T::of(mean);
                let (g, b) = (gamma.data()[ch], beta.data()[ch]);
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    for k in off..off + hw {
                        let xh = (xd[k] - mean_t) * inv;
                        xhat[k] = xh;
                        y[k] = g * xh + b;
                    }
                }
                inv_std.push(inv);
                let unbiased = sq / (m - 1) as f64;
                batch_mean.push(mean);
                batch_var.push(unbiased);
                let rm = &mut new_stats.mean.data_mut()[ch];
                *rm = T::of(mom * rm.as_f64() + (1.0 - mom) * mean);
                let rv = &mut new_stats.var.data_mut()[ch];
                *rv = T::of(mom * rv.as_f64() + (1.0 - mom) * unbiased);
            }
            new_stats.tracked += 1;
            let cache = BnCache {
                shape: x.shape().to_vec(),
                xhat,
                inv_std,
                gamma: gamma.data().to_vec(),
                beta: beta.data().to_vec(),
                batch_mean,
                batch_var,
            };
            Ok((Tensor::new(x.shape(), y)?, new_stats, Some(cache)))
        }
    }
}

/// Exact gradients of the train-mode mapping, batch statistics included.
pub fn batchnorm2d_grad<T: Real>(cache: &BnCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    dy.expect_shape("batchnorm2d_grad", &cache.shape)?;
    let (n, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
    let hw = h * w;
    let m = T::of_usize(n * hw);
    let dyd = dy.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for (&g, &xh) in dyd[off..off + hw].iter().zip(&cache.xhat[off..off + hw]) {
                sum_dy = sum_dy + g;
                sum_dy_xhat = sum_dy_xhat + g * xh;
            }
        }
        dbeta[ch] = sum_dy;
        dgamma[ch] = sum_dy_xhat;
        let scale = cache.gamma[ch] * cache.inv_std[ch] / m;
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for k in off..off + hw {
                dx[k] = scale * (m * dyd[k] - sum_dy - cache.xhat[k] * sum_dy_xhat);
            }
        }
    }
    Ok((
        Tensor::new(&cache.shape, dx)?,
        Tensor::new(&[c], dgamma)?,
        Tensor::new(&[c], dbeta)?,
    ))
}
