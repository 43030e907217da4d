//! Training loop with validation, early stopping and best-state tracking.

use std::io::Write;

use msecnn_core::metrics::{macro_metrics, EvalMatrix, MacroReport};
use msecnn_core::model::{ModelConfig, ModelState};
use msecnn_core::train::{calibrate_stats, predict, train_epoch, AdamState, Example, TrainConfig};
use msecnn_core::Tensor;

use crate::cache::FeatureCache;
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 32;

/// Loads every clip of `split` from the cache as `[1, n_mels, n_frames]` examples.
pub fn load_split(cache: &FeatureCache, manifest: &DatasetManifest, split: Split) -> Result<Vec<Example<f32>>> {
    manifest
        .split(split)
        .map(|c| {
            let spec = cache.read(&c.clip_id)?;
            let shape = spec.values.shape().to_vec();
            Ok(Example {
                input: spec.values.reshape(&[1, shape[0], shape[1]])?,
                labels: c.labels.iter().map(|&v| v as f32).collect(),
            })
        })
        .collect()
}

/// Scores `data` in inference mode and computes per-tag and macro metrics.
pub fn evaluate(
    state: &ModelState<f32>,
    config: &ModelConfig,
    data: &[Example<f32>],
    tags: &[String],
) -> Result<MacroReport> {
    if data.is_empty() {
        return Err(Error::Data("no clips to evaluate".into()));
    }
    let scores = predict(state, config, data, EVAL_BATCH)?.cast::<f64>();
    let labels = Tensor::new(
        &[data.len(), config.n_tags],
        data.iter().flat_map(|e| e.labels.iter().map(|&v| v as f64)).collect(),
    )?;
    let names = if tags.len() == config.n_tags {
        tags.to_vec()
    } else {
        (0..config.n_tags).map(|i| format!("tag{i}")).collect()
    };
    let m = EvalMatrix::new(scores, &labels, names)?;
    Ok(macro_metrics(&m)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `(macro ROC-AUC, macro PR-AUC)`; `None` when no validation tag is scorable.
    pub val: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState<f32>,
    /// Epoch whose state was kept (1-based); `None` for zero epochs.
    pub kept_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.train_loss)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Trains from `state`, logging one line per epoch:
/// `epoch <k> train_loss <v> val_roc_auc <v> val_pr_auc <v>`.
///
/// The state with the best validation macro ROC-AUC is kept, the latest one
/// on ties. Without a
/// scorable validation set the last state is kept and early stopping is off.
/// Batch-norm statistics are recalibrated on `train` after every epoch, so
/// validation and the returned state use moments that match the weights.
/// Zero epochs only calibrates.
pub fn fit(
    mut state: ModelState<f32>,
    config: &ModelConfig,
    cfg: &TrainConfig,
    train: &[Example<f32>],
    val: &[Example<f32>],
    tags: &[String],
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.max_epochs == 0 {
        calibrate_stats(&mut state, config, train, cfg)?;
        writeln!(
            log,
            "epoch 0 (no training; batch-norm statistics calibrated on the train split)"
        )
        .ok();
        return Ok(TrainOutcome {
            state,
            kept_epoch: None,
            history: Vec::new(),
            stopped_early: false,
        });
    }
    let mut adam = AdamState::new(&state);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, ModelState<f32>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let loss = train_epoch(&mut state, &mut adam, config, train, cfg, epoch as u64 - 1)?;
        if !loss.is_finite() {
            return Err(Error::Data(format!("training diverged at epoch {epoch} (loss {loss})")));
        }
        calibrate_stats(&mut state, config, train, cfg)?;
        let val_metrics = if val.is_empty() {
            None
        } else {
            match evaluate(&state, config, val, tags) {
                Ok(r) => Some((r.macro_roc_auc, r.macro_pr_auc)),
                Err(Error::Core(msecnn_core::Error::Argument(_))) => None,
                Err(e) => return Err(e),
            }
        };
        writeln!(
            log,
            "epoch {epoch} train_loss {loss:.6} val_roc_auc {} val_pr_auc {}",
            fmt_opt(val_metrics.map(|v| v.0)),
            fmt_opt(val_metrics.map(|v| v.1))
        )
        .ok();
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val: val_metrics,
        });
        if let Some((roc, _)) = val_metrics {
            let prev = best.as_ref().map(|b| b.0);
            if prev.is_none_or(|p| roc >= p) {
                best = Some((roc, epoch, state.clone()));
            }
            // a tie keeps the later state but does not count as progress
            if prev.is_none_or(|p| roc > p) {
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                    writeln!(log, "early stop: no val_roc_auc improvement for {since_best} epochs").ok();
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let (state, kept_epoch) = match best {
        Some((roc, epoch, s)) => {
            writeln!(log, "kept epoch {epoch} (val_roc_auc {roc:.6})").ok();
            (s, Some(epoch))
        }
        None => (state, history.last().map(|r| r.epoch)),
    };
    Ok(TrainOutcome {
        state,
        kept_epoch,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use msecnn_core::model::{build_model, Variant};

    fn toy(n: usize, seed: usize) -> Vec<Example<f32>> {
        // tag 0 lights the upper half, tag 1 the lower half
        (0..n)
            .map(|i| {
                let (a, b) = ((i + seed) % 2, ((i + seed) / 2) % 2);
                Example {
                    input: Tensor::from_fn(&[1, 6, 8], |k| {
                        let row = k / 8;
                        let on = if row < 3 { a } else { b };
                        on as f32 + ((k * 31 + i * 7) % 11) as f32 * 0.05
                    }),
                    labels: vec![a as f32, b as f32, 1.0 - a as f32],
                }
            })
            .collect()
    }

    #[test]
    fn learns_toy_task_and_logs_every_epoch() {
        let config = ModelConfig::tiny(Variant::MsECnn);
        let state = build_model(&config, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 4,
            learning_rate: 0.02,
            early_stop_patience: 0,
            ..Default::default()
        };
        let mut log = Vec::new();
        let out = fit(state, &config, &cfg, &toy(16, 0), &toy(8, 1), &[], &mut log).unwrap();
        let text = String::from_utf8(log).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("epoch ")).count(), 30);
        assert!(out.history[29].train_loss < out.history[0].train_loss);
        let best = out
            .history
            .iter()
            .filter_map(|r| r.val.map(|v| v.0))
            .fold(0.0, f64::max);
        assert!(best > 0.9, "{text}");
        assert_eq!(out.history[out.kept_epoch.unwrap() - 1].val.unwrap().0, best);
    }

    #[test]
    fn patience_stops_training() {
        let config = ModelConfig::tiny(Variant::Fcn5);
        let cfg = TrainConfig {
            max_epochs: 50,
            learning_rate: 0.0,
            early_stop_patience: 3,
            ..Default::default()
        };
        let mut log = Vec::new();
        let out = fit(
            build_model(&config, 2).unwrap(),
            &config,
            &cfg,
            &toy(8, 0),
            &toy(8, 1),
            &[],
            &mut log,
        )
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.kept_epoch, Some(4));
    }

    #[test]
    fn zero_epochs_calibrates() {
        let config = ModelConfig::tiny(Variant::Fcn5);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let out = fit(
            build_model(&config, 2).unwrap(),
            &config,
            &cfg,
            &toy(8, 0),
            &[],
            &[],
            &mut Vec::new(),
        )
        .unwrap();
        assert!(out.state.levels.iter().all(|l| l.stats.tracked > 0));
        assert!(evaluate(&out.state, &config, &toy(8, 1), &[]).is_ok());
    }
}
