//! Forward and backward passes over a batch `[N, C, H, W]`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::config::{ModelConfig, Variant};
use super::state::{Gradients, LevelGrads, ModelState};
use crate::error::{shape_err, Error, Result};
use crate::ops::{
    self, batchnorm2d, batchnorm2d_grad, concat_channels, concat_grad, conv2d, conv2d_grad, maxpool2d, maxpool2d_grad,
    sigmoid, BnCache, BnMode, BnStats, PoolIndices,
};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Debug, Clone)]
struct LevelCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    main_idx: Vec<PoolIndices>,
    skip_idx: Vec<PoolIndices>,
}

/// Everything the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    levels: Vec<LevelCache<T>>,
    /// Post-dropout features `[N, D]`.
    features: Tensor<T>,
    dropout_mask: Option<Vec<T>>,
    scores: Tensor<T>,
    /// Running statistics after this batch, one per level.
    pub updated_stats: Vec<BnStats<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn scores(&self) -> &Tensor<T> {
        &self.scores
    }

    /// Batch mean and unbiased variance for each level.
    pub fn batch_moments(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.levels.iter().map(|l| l.bn.batch_moments())
    }
}

impl<T: Real> ModelState<T> {
    /// Adopts the running statistics produced by a train-mode forward.
    pub fn apply_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (l, s) in self.levels.iter_mut().zip(&cache.updated_stats) {
            l.stats = s.clone();
        }
    }
}

fn check_input<T: Real>(config: &ModelConfig, x: &Tensor<T>) -> Result<usize> {
    let (c, h, w) = config.input_shape;
    if x.ndim() != 4 || x.shape()[1..] != [c, h, w] {
        return Err(shape_err("forward input", x.shape(), &[0, c, h, w]));
    }
    Ok(x.shape()[0])
}

fn check_state<T: Real>(state: &ModelState<T>, config: &ModelConfig) -> Result<()> {
    let layout = super::state::tensor_layout(config);
    let stored = state.stored();
    if layout.len() != stored.len() {
        return Err(Error::Internal(alloc::format!(
            "state holds {} tensors, config implies {}",
            stored.len(),
            layout.len()
        )));
    }
    for ((name, shape), t) in layout.iter().zip(stored) {
        if t.shape() != shape.as_slice() {
            return Err(Error::Internal(alloc::format!(
                "{name}: state shape {:?} but config implies {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Runs the network: per level `conv -> BN -> ReLU -> pool`; the msecnn
/// variant additionally pools the level input with the same window and
/// stacks it ahead of the conv path. Ends with dense + sigmoid.
///
/// Returns scores `[N, n_tags]` in `(0, 1)`. The cache is `None` in
/// inference mode.
pub fn forward<T: Real>(
    state: &ModelState<T>,
    config: &ModelConfig,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
    config.validate()?;
    check_state(state, config)?;
    let n = check_input(config, x)?;
    let train = matches!(mode, Mode::Train { .. });
    let bn_mode = if train { BnMode::Train } else { BnMode::Infer };

    let mut act = x.clone();
    let mut caches = Vec::with_capacity(config.n_levels());
    let mut new_stats = Vec::with_capacity(config.n_levels());
    for (params, &(ph, pw)) in state.levels.iter().zip(&config.pooling) {
        let samples: Vec<Tensor<T>> = (0..n).map(|s| act.slice_outer(s)).collect();
        let conv: Vec<Tensor<T>> = samples
            .iter()
            .map(|xs| conv2d(xs, &params.conv_w, &params.conv_b))
            .collect::<Result<_>>()?;
        let z = Tensor::stack(&conv)?;
        let (y, stats, bn_cache) = batchnorm2d(&z, &params.gamma, &params.beta, &params.stats, bn_mode)?;
        let r = ops::activation(&y, ops::Activation::Relu);
        let mut main_idx = Vec::with_capacity(n);
        let mut skip_idx = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        for (s, xs) in samples.iter().enumerate() {
            let (pooled, idx) = maxpool2d(&r.slice_outer(s), ph, pw)?;
            main_idx.push(idx);
            let out = match config.variant {
                Variant::Fcn5 => pooled,
                Variant::MsECnn => {
                    let (skip, sidx) = maxpool2d(xs, ph, pw)?;
                    skip_idx.push(sidx);
                    concat_channels(&[&skip, &pooled])?
                }
            };
            next.push(out);
        }
        act = Tensor::stack(&next)?;
        new_stats.push(stats);
        if let Some(bn) = bn_cache {
            caches.push(LevelCache {
                input: Tensor::stack(&samples)?,
                bn,
                main_idx,
                skip_idx,
            });
        }
    }

    let d = config.feature_width();
    let mut features = act.reshape(&[n, d])?;
    let mut mask = None;
    if let Mode::Train { dropout_seed } = mode {
        if config.dropout_rate > 0.0 {
            let p = config.dropout_rate;
            let keep = T::of(1.0 / (1.0 - p));
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(dropout_seed);
            let m: Vec<T> = (0..features.len())
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect();
            for (f, &k) in features.data_mut().iter_mut().zip(&m) {
                *f = *f * k;
            }
            mask = Some(m);
        }
    }

    let mut scores = Vec::with_capacity(n * config.n_tags);
    for s in 0..n {
        let logits = ops::dense(&features.slice_outer(s), &state.dense_w, &state.dense_b)?;
        scores.extend(logits.data().iter().map(|&v| sigmoid(v)));
    }
    let scores = Tensor::new(&[n, config.n_tags], scores)?;
    let cache = train.then(|| ForwardCache {
        levels: caches,
        features,
        dropout_mask: mask,
        scores: scores.clone(),
        updated_stats: new_stats,
    });
    Ok((scores, cache))
}

/// Exact gradients of `sum(dscores * scores)` for every learnable tensor
/// and for the input. The msecnn skip split sends the first `n_{k-1}`
/// channels back through the skip pool and the rest through the conv path.
pub fn backward<T: Real>(
    state: &ModelState<T>,
    config: &ModelConfig,
    cache: &ForwardCache<T>,
    dscores: &Tensor<T>,
) -> Result<Gradients<T>> {
    check_state(state, config)?;
    if cache.levels.len() != config.n_levels() {
        return Err(Error::Internal(alloc::format!(
            "cache holds {} levels, config has {}",
            cache.levels.len(),
            config.n_levels()
        )));
    }
    dscores.expect_shape("backward dscores", cache.scores.shape())?;
    let n = dscores.shape()[0];
    let t = config.n_tags;
    let d = config.feature_width();
    if cache.features.shape() != [n, d] {
        return Err(Error::Internal("cache feature width does not match config".into()));
    }

    let mut dense_w = Tensor::zeros(state.dense_w.shape());
    let mut dense_b = Tensor::zeros(state.dense_b.shape());
    let mut dfeat = Vec::with_capacity(n * d);
    for s in 0..n {
        let sc = &cache.scores.data()[s * t..(s + 1) * t];
        let ds = &dscores.data()[s * t..(s + 1) * t];
        let dlogit = Tensor::new(&[t], sc.iter().zip(ds).map(|(&p, &g)| g * p * (T::one() - p)).collect())?;
        let (dx, dw, db) = ops::dense_grad(&cache.features.slice_outer(s), &state.dense_w, &dlogit)?;
        add_into(&mut dense_w, &dw);
        add_into(&mut dense_b, &db);
        dfeat.extend_from_slice(dx.data());
    }
    if let Some(mask) = &cache.dropout_mask {
        for (g, &m) in dfeat.iter_mut().zip(mask) {
            *g = *g * m;
        }
    }

    let chain = config.spatial_chain();
    let in_spatial = config.level_input_spatial();
    let in_ch = config.level_in_channels();
    let out_ch = config.level_out_channels();
    let mut dact = Tensor::new(&[n, d, 1, 1], dfeat)?;
    let mut levels = Vec::with_capacity(config.n_levels());
    for k in (0..config.n_levels()).rev() {
        let lc = &cache.levels[k];
        let params = &state.levels[k];
        let c = config.channels[k];
        let (h, w) = in_spatial[k];
        let (oh, ow) = chain[k];
        dact.expect_shape("backward level", &[n, out_ch[k], oh, ow])?;

        let y = lc.bn.output()?;
        let mut dmain = Vec::with_capacity(n);
        let mut dskip = Vec::with_capacity(n);
        for s in 0..n {
            let g = dact.slice_outer(s);
            let gm = match config.variant {
                Variant::Fcn5 => g,
                Variant::MsECnn => {
                    let mut parts = concat_grad(&g, &[in_ch[k], c])?;
                    let gm = parts.pop().expect("two parts");
                    let gs = parts.pop().expect("two parts");
                    dskip.push(maxpool2d_grad(&lc.skip_idx[s], &gs, &[in_ch[k], h, w])?);
                    gm
                }
            };
            dmain.push(maxpool2d_grad(&lc.main_idx[s], &gm, &[c, h, w])?);
        }
        let dr = Tensor::stack(&dmain)?;
        let dy = ops::activation_grad(&y, &dr, ops::Activation::Relu)?;
        let (dz, dgamma, dbeta) = batchnorm2d_grad(&lc.bn, &dy)?;

        let mut conv_w = Tensor::zeros(params.conv_w.shape());
        let mut conv_b = Tensor::zeros(params.conv_b.shape());
        let mut dins = Vec::with_capacity(n);
        for s in 0..n {
            let (mut dx, dw, db) = conv2d_grad(&lc.input.slice_outer(s), &params.conv_w, &dz.slice_outer(s))?;
            add_into(&mut conv_w, &dw);
            add_into(&mut conv_b, &db);
            if let Some(ds) = dskip.get(s) {
                add_into(&mut dx, ds);
            }
            dins.push(dx);
        }
        dact = Tensor::stack(&dins)?;
        levels.push(LevelGrads {
            conv_w,
            conv_b,
            gamma: dgamma,
            beta: dbeta,
        });
    }
    levels.reverse();
    Ok(Gradients {
        levels,
        dense_w,
        dense_b,
        input: dact,
    })
}

fn add_into<T: Real>(acc: &mut Tensor<T>, x: &Tensor<T>) {
    for (a, &v) in acc.data_mut().iter_mut().zip(x.data()) {
        *a = *a + v;
    }
}
