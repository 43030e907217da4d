use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::config::ModelConfig;
use crate::error::Result;
use crate::ops::{BnStats, KERNEL};
use crate::real::Real;
use crate::tensor::Tensor;

/// Learnable parameters and normalization statistics of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams<T> {
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BnStats<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub levels: Vec<LevelParams<T>>,
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
}

/// One gradient tensor per learnable parameter, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub levels: Vec<LevelGrads<T>>,
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
    /// Gradient with respect to the network input `[N, C, H, W]`.
    pub input: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrads<T> {
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Shape of every stored tensor, in checkpoint order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (k, (&cin, &c)) in config.level_in_channels().iter().zip(&config.channels).enumerate() {
        let l = k + 1;
        out.push((format!("conv{l}.weight"), alloc::vec![c, cin, KERNEL, KERNEL]));
        out.push((format!("conv{l}.bias"), alloc::vec![c]));
        out.push((format!("bn{l}.gamma"), alloc::vec![c]));
        out.push((format!("bn{l}.beta"), alloc::vec![c]));
        out.push((format!("bn{l}.running_mean"), alloc::vec![c]));
        out.push((format!("bn{l}.running_var"), alloc::vec![c]));
    }
    out.push((
        "dense.weight".into(),
        alloc::vec![config.n_tags, config.feature_width()],
    ));
    out.push(("dense.bias".into(), alloc::vec![config.n_tags]));
    out
}

/// Exact learnable scalar count (running statistics excluded).
pub fn count_params(config: &ModelConfig) -> usize {
    tensor_layout(config)
        .iter()
        .filter(|(name, _)| !name.contains("running_"))
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// He-uniform conv/dense weights, zero biases, unit gamma, zero beta.
///
/// Values are drawn in f64 from a seeded xoshiro256++ stream so both
/// precisions start from the same point.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelState<T>> {
    config.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut he = |shape: &[usize], fan_in: usize| {
        let bound = libm::sqrt(6.0 / fan_in as f64);
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
    };
    let mut levels = Vec::with_capacity(config.n_levels());
    for (&cin, &c) in config.level_in_channels().iter().zip(&config.channels) {
        levels.push(LevelParams {
            conv_w: he(&[c, cin, KERNEL, KERNEL], cin * KERNEL * KERNEL),
            conv_b: Tensor::zeros(&[c]),
            gamma: Tensor::full(&[c], T::one()),
            beta: Tensor::zeros(&[c]),
            stats: BnStats::new(c),
        });
    }
    let d = config.feature_width();
    Ok(ModelState {
        levels,
        dense_w: he(&[config.n_tags, d], d),
        dense_b: Tensor::zeros(&[config.n_tags]),
    })
}

impl<T: Real> ModelState<T> {
    /// Learnable tensors in fixed update order.
    pub fn trainable(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, l) in self.levels.iter().enumerate() {
            let i = k + 1;
            out.push((format!("conv{i}.weight"), &l.conv_w));
            out.push((format!("conv{i}.bias"), &l.conv_b));
            out.push((format!("bn{i}.gamma"), &l.gamma));
            out.push((format!("bn{i}.beta"), &l.beta));
        }
        out.push(("dense.weight".into(), &self.dense_w));
        out.push(("dense.bias".into(), &self.dense_b));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.levels.iter_mut() {
            out.push(&mut l.conv_w);
            out.push(&mut l.conv_b);
            out.push(&mut l.gamma);
            out.push(&mut l.beta);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    /// Every stored tensor in [`tensor_layout`] order.
    pub fn stored(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.levels {
            out.extend([&l.conv_w, &l.conv_b, &l.gamma, &l.beta, &l.stats.mean, &l.stats.var]);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            levels: self
                .levels
                .iter()
                .map(|l| LevelParams {
                    conv_w: l.conv_w.cast(),
                    conv_b: l.conv_b.cast(),
                    gamma: l.gamma.cast(),
                    beta: l.beta.cast(),
                    stats: l.stats.cast(),
                })
                .collect(),
            dense_w: self.dense_w.cast(),
            dense_b: self.dense_b.cast(),
        }
    }

    /// Bitwise equality (distinguishes -0.0 and NaN payloads).
    pub fn bit_eq(&self, other: &Self) -> bool {
        let a = self.stored();
        let b = other.stored();
        a.len() == b.len()
            && self
                .levels
                .iter()
                .zip(&other.levels)
                .all(|(x, y)| x.stats.tracked == y.stats.tracked)
            && a.iter().zip(&b).all(|(x, y)| {
                x.shape() == y.shape()
                    && x.data()
                        .iter()
                        .zip(y.data())
                        .all(|(p, q)| p.as_f64().to_bits() == q.as_f64().to_bits())
            })
    }
}

impl<T: Real> Gradients<T> {
    /// Gradient tensors aligned with [`ModelState::trainable`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.levels {
            out.extend([&l.conv_w, &l.conv_b, &l.gamma, &l.beta]);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.levels.iter_mut() {
            out.push(&mut l.conv_w);
            out.push(&mut l.conv_b);
            out.push(&mut l.gamma);
            out.push(&mut l.beta);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }
}
