//! Multi-label loss, Adam, the epoch driver and the gradient-check harness.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{shape_err, Error, Result};
use crate::model::{backward, build_model, forward, Gradients, Mode, ModelConfig, ModelState};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without validation ROC-AUC improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_epochs: 100,
            seed: 0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.batch_size >= 1
            && self.learning_rate >= 0.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(alloc::format!("invalid training config {self:?}")))
        }
    }
}

/// One training example: a `[C, H, W]` input and a binary label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: Tensor<T>,
    pub labels: Vec<T>,
}

/// Mean binary cross-entropy over all `N * T` cells and its gradient with
/// respect to the scores.
pub fn bce_loss<T: Real>(scores: &Tensor<T>, labels: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if scores.shape() != labels.shape() {
        return Err(shape_err("bce_loss", scores.shape(), labels.shape()));
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::Argument(alloc::format!("labels must be 0 or 1, found {bad}")));
    }
    let count = scores.len() as f64;
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.data().iter().zip(labels.data()) {
        // saturated sigmoids would give ln(0); clamp to the representable interior
        let s = s.max(lo).min(hi);
        let (sf, yf) = (s.as_f64(), y.as_f64());
        loss -= yf * libm::log(sf) + (1.0 - yf) * libm::log(1.0 - sf);
        grad.push((s - y) / (s * (T::one() - s) * T::of(count)));
    }
    Ok((loss / count, Tensor::new(scores.shape(), grad)?))
}

/// Adam moments, mirroring [`ModelState::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(state: &ModelState<T>) -> Self {
        let zeros: Vec<Tensor<T>> = state
            .trainable()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Bias-corrected Adam update, applied in parameter order.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    adam: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != adam.m.len() {
        return Err(Error::Internal(alloc::format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            adam.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&adam.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(shape_err("adam_step", p.shape(), g.shape()));
        }
    }
    adam.t += 1;
    let t = adam.t as i32;
    let c1 = T::of(1.0 - libm::pow(cfg.beta1, t as f64));
    let c2 = T::of(1.0 - libm::pow(cfg.beta2, t as f64));
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.eps));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(adam.m.iter_mut())
        .zip(adam.v.iter_mut())
    {
        let pd = p.data_mut();
        for (((pv, &gv), mv), vv) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Shuffled example order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ (epoch.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

pub fn stack_batch<T: Real>(data: &[Example<T>], idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let inputs: Vec<Tensor<T>> = idx.iter().map(|&i| data[i].input.clone()).collect();
    let t = data[idx[0]].labels.len();
    let mut labels = Vec::with_capacity(idx.len() * t);
    for &i in idx {
        if data[i].labels.len() != t {
            return Err(shape_err("labels", &[t], &[data[i].labels.len()]));
        }
        labels.extend_from_slice(&data[i].labels);
    }
    Ok((Tensor::stack(&inputs)?, Tensor::new(&[idx.len(), t], labels)?))
}

/// One pass over `data`: per batch forward(train) -> BCE -> backward ->
/// Adam, then adopt the batch-norm running statistics. Returns the
/// example-weighted mean training loss.
pub fn train_epoch<T: Real>(
    state: &mut ModelState<T>,
    adam: &mut AdamState<T>,
    config: &ModelConfig,
    data: &[Example<T>],
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("train_epoch on an empty dataset".into()));
    }
    cfg.validate()?;
    let order = epoch_order(data.len(), cfg.seed, epoch);
    let mut total = 0.0;
    for (b, chunk) in batches(&order, cfg.batch_size).enumerate() {
        let (x, y) = stack_batch(data, chunk)?;
        let dropout_seed = cfg.seed.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ (epoch << 32) ^ b as u64;
        let (scores, cache) = forward(state, config, &x, Mode::Train { dropout_seed })?;
        let cache = cache.ok_or_else(|| Error::Internal("train forward returned no cache".into()))?;
        let (loss, dscores) = bce_loss(&scores, &y)?;
        let grads = backward(state, config, &cache, &dscores)?;
        {
            let mut params = state.trainable_mut();
            adam_step(&mut params, &grads.tensors(), adam, cfg)?;
        }
        state.apply_running_stats(&cache);
        total += loss * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Forward in `Mode::Infer` over `data` in chunks; returns scores `[N, T]`.
pub fn predict<T: Real>(
    state: &ModelState<T>,
    config: &ModelConfig,
    data: &[Example<T>],
    batch_size: usize,
) -> Result<Tensor<T>> {
    let mut out = Vec::with_capacity(data.len() * config.n_tags);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let inputs: Vec<Tensor<T>> = chunk.iter().map(|&i| data[i].input.clone()).collect();
        let (s, _) = forward(state, config, &Tensor::stack(&inputs)?, Mode::Infer)?;
        out.extend_from_slice(s.data());
    }
    Tensor::new(&[data.len(), config.n_tags], out)
}

/// Splits `order` into batches of `size`, folding a trailing single example
/// into the previous batch (train-mode batch norm needs two values per
/// channel, and the last level can be 1x1).
fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    let size = size.max(1);
    let mut n = order.len().div_ceil(size);
    if n > 1 && order.len() % size == 1 {
        n -= 1;
    }
    (0..n).map(move |b| {
        let end = if b + 1 == n { order.len() } else { (b + 1) * size };
        &order[b * size..end]
    })
}

/// Replaces the batch-norm running statistics with the sample-weighted
/// average of batch moments over `data`, computed with the current weights.
///
/// Running averages trail the weights by roughly ten updates; evaluating
/// right after training with them can score well below the training fit.
pub fn calibrate_stats<T: Real>(
    state: &mut ModelState<T>,
    config: &ModelConfig,
    data: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Argument("calibrate_stats: no examples".into()));
    }
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = state
        .levels
        .iter()
        .map(|l| {
            (
                alloc::vec![0.0; l.stats.mean.len()],
                alloc::vec![0.0; l.stats.var.len()],
            )
        })
        .collect();
    let order = epoch_order(data.len(), cfg.seed, 0);
    for chunk in batches(&order, cfg.batch_size) {
        let (x, _) = stack_batch(data, chunk)?;
        let (_, cache) = forward(state, config, &x, Mode::Train { dropout_seed: 0 })?;
        let cache = cache.ok_or_else(|| Error::Internal("train-mode forward returned no cache".into()))?;
        let w = chunk.len() as f64;
        for ((sm, sv), (bm, bv)) in sums.iter_mut().zip(cache.batch_moments()) {
            sm.iter_mut().zip(bm).for_each(|(s, v)| *s += w * v);
            sv.iter_mut().zip(bv).for_each(|(s, v)| *s += w * v);
        }
    }
    let total = data.len() as f64;
    for (level, (sm, sv)) in state.levels.iter_mut().zip(sums) {
        let stats = &mut level.stats;
        stats
            .mean
            .data_mut()
            .iter_mut()
            .zip(sm)
            .for_each(|(d, s)| *d = T::of(s / total));
        stats
            .var
            .data_mut()
            .iter_mut()
            .zip(sv)
            .for_each(|(d, s)| *d = T::of(s / total));
        stats.tracked += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub n_checked: usize,
}

/// Relative error with a 1e-6 magnitude floor, so structurally zero
/// gradients (conv biases ahead of batch norm) compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares [`backward`] with central finite differences over every
/// learnable scalar of `config` (64-bit, batch of 4, BCE objective, train-mode
/// batch norm, dropout off).
pub fn gradient_check(config: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    gradient_check_with(config, seed, eps, |_| {})
}

/// [`gradient_check`] with a hook that may alter the analytic gradients
/// before comparison (fault injection).
pub fn gradient_check_with(
    config: &ModelConfig,
    seed: u64,
    eps: f64,
    tamper: impl FnOnce(&mut Gradients<f64>),
) -> Result<GradCheckReport> {
    let mut config = config.clone();
    config.dropout_rate = 0.0;
    let mut state: ModelState<f64> = build_model(&config, seed)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0xA5A5_5A5A);
    // move biases and affine terms off their initial constants
    for l in state.levels.iter_mut() {
        for v in l.conv_b.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        for v in l.gamma.data_mut() {
            *v = rng.random_range(0.7..1.3);
        }
        for v in l.beta.data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    for v in state.dense_b.data_mut() {
        *v = rng.random_range(-0.1..0.1);
    }
    let n = 4;
    let (c, h, w) = config.input_shape;
    let x = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn(&[n, config.n_tags], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let mode = Mode::Train { dropout_seed: 0 };
    let loss_of = |s: &ModelState<f64>| -> Result<f64> {
        let (scores, _) = forward(s, &config, &x, mode)?;
        Ok(bce_loss(&scores, &y)?.0)
    };

    let (scores, cache) = forward(&state, &config, &x, mode)?;
    let cache = cache.ok_or_else(|| Error::Internal("train forward returned no cache".into()))?;
    let (_, dscores) = bce_loss(&scores, &y)?;
    let mut grads = backward(&state, &config, &cache, &dscores)?;
    tamper(&mut grads);

    let names: Vec<String> = state.trainable().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        n_checked: 0,
    };
    let mut probe = state.clone();
    for (i, name) in names.iter().enumerate() {
        let len = state.trainable()[i].1.len();
        for j in 0..len {
            let orig = state.trainable()[i].1.data()[j];
            probe.trainable_mut()[i].data_mut()[j] = orig + eps;
            let plus = loss_of(&probe)?;
            probe.trainable_mut()[i].data_mut()[j] = orig - eps;
            let minus = loss_of(&probe)?;
            probe.trainable_mut()[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads.tensors()[i].data()[j], numeric);
            report.n_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = alloc::format!("{name}[{j}]");
            }
        }
    }
    Ok(report)
}
