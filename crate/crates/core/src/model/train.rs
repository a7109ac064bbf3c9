//! Mini-batch training with deterministic shuffling and best-epoch
//! selection on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::DecisionSample;
use crate::error::{OscaError, Result};
use crate::eval::{macro_f1, topk_mean_accuracy};
use crate::labels::StateChangeClass;
use crate::mix_seed;

use super::network::{backward_sample, forward_sample, ModelParams, OovPolicy, ParamTree};
use super::{loss, ModelConfig, PredictionDistribution, TrainConfig, PROB_CLAMP};

const SHUFFLE_SALT: u64 = 0x9e6c_2a54_0b1d_83f7;

/// One row of the training history. Epoch 0 measures the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub val_f1: f64,
}

/// Renders the history table.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_top1,val_top5,val_f1\n");
    for row in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.4},{:.4},{:.4}\n",
            row.epoch, row.train_loss, row.val_loss, row.val_top1, row.val_top5, row.val_f1
        ));
    }
    out
}

/// Adaptive-moment optimizer with bias correction.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: ParamTree,
    v: ParamTree,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: ParamTree::zeros_like(params.tree()),
            v: ParamTree::zeros_like(params.tree()),
        }
    }

    pub(crate) fn step(&mut self, params: &mut ModelParams, grads: &ParamTree) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let gts = grads.tensors();
        let mut mts = self.m.tensors_mut();
        let mut vts = self.v.tensors_mut();
        let mut pts = params.tree_mut().tensors_mut();
        for (((g, m), v), p) in gts.iter().zip(mts.iter_mut()).zip(vts.iter_mut()).zip(pts.iter_mut())
        {
            debug_assert_eq!(g.0, p.0, "optimizer state misaligned with parameters");
            for j in 0..g.2.len() {
                let grad = g.2[j];
                m.2[j] = self.beta1 * m.2[j] + (1.0 - self.beta1) * grad;
                v.2[j] = self.beta2 * v.2[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m.2[j] / bc1;
                let v_hat = v.2[j] / bc2;
                p.2[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Forward pass over a sample set; rejects non-finite probabilities so a
/// diverged model aborts instead of training on garbage (the loss clamp
/// would otherwise mask NaN).
fn forward_set(
    params: &ModelParams,
    samples: &[DecisionSample],
    context: &str,
) -> Result<(Vec<PredictionDistribution>, Vec<StateChangeClass>)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for sample in samples {
        let (probs, _) = forward_sample(
            params,
            Some(&sample.visual_window),
            &sample.action_history,
            &sample.state_history,
            OovPolicy::Strict,
        )?;
        if probs.probs().iter().any(|p| !p.is_finite()) {
            return Err(OscaError::Train(format!(
                "non-finite prediction during {context} (video '{}', decision {}); training diverged",
                sample.video_id, sample.decision_index
            )));
        }
        preds.push(probs);
        targets.push(sample.target);
    }
    Ok((preds, targets))
}

fn val_row(
    params: &ModelParams,
    val_samples: &[DecisionSample],
    epoch: usize,
) -> Result<(f64, f64, f64, f64)> {
    let (preds, targets) = forward_set(params, val_samples, "validation")?;
    let val_loss = loss(&preds, &targets)?;
    if !val_loss.is_finite() {
        return Err(OscaError::Train(format!(
            "validation loss became {val_loss} at epoch {epoch}; training diverged"
        )));
    }
    Ok((
        val_loss,
        topk_mean_accuracy(&preds, &targets, 1)?,
        topk_mean_accuracy(&preds, &targets, 5)?,
        macro_f1(&preds, &targets)?,
    ))
}

/// Trains a fresh model. Returns the parameters of the epoch with the best
/// validation loss (ties keep the earlier epoch; the untrained epoch-0
/// model competes too) together with the full per-epoch history.
///
/// Deterministic given the configs: initialization and the per-epoch
/// shuffle both derive from `train_cfg.seed`.
pub fn train(
    train_samples: &[DecisionSample],
    val_samples: &[DecisionSample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab_fingerprint: &str,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_cfg.validate()?;
    let params = ModelParams::init(model_cfg.clone(), vocab_fingerprint, train_cfg.seed)?;
    train_loop(params, train_samples, val_samples, train_cfg)
}

fn train_loop(
    mut params: ModelParams,
    train_samples: &[DecisionSample],
    val_samples: &[DecisionSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if train_samples.is_empty() {
        return Err(OscaError::Validation("training set is empty".into()));
    }
    if val_samples.is_empty() {
        return Err(OscaError::Validation(
            "validation set is empty; best-epoch selection needs one".into(),
        ));
    }

    let mut history = Vec::with_capacity(cfg.epochs + 1);

    // Epoch 0: measure the untrained model on both sets.
    let (preds0, targets0) = forward_set(&params, train_samples, "the pre-training pass")?;
    let train_loss0 = loss(&preds0, &targets0)?;
    let (val_loss0, top1, top5, f1) = val_row(&params, val_samples, 0)?;
    history.push(EpochStats {
        epoch: 0,
        train_loss: train_loss0,
        val_loss: val_loss0,
        val_top1: top1,
        val_top5: top5,
        val_f1: f1,
    });
    let mut best = (val_loss0, params.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SHUFFLE_SALT));
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut grads = ParamTree::zeros_like(params.tree());
    let mut indices: Vec<usize> = (0..train_samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, batch) in indices.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample = &train_samples[i];
                let (probs, cache) = forward_sample(
                    &params,
                    Some(&sample.visual_window),
                    &sample.action_history,
                    &sample.state_history,
                    OovPolicy::Strict,
                )?;
                let p = probs.prob(sample.target);
                if !p.is_finite() {
                    return Err(OscaError::Train(format!(
                        "non-finite prediction at epoch {epoch}, batch {batch_index} \
                         (video '{}', decision {}); training diverged",
                        sample.video_id, sample.decision_index
                    )));
                }
                batch_loss += -p.max(PROB_CLAMP).ln();
                backward_sample(&params, &cache, sample.target, scale, &mut grads);
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(OscaError::Train(format!(
                    "loss became {batch_loss} at epoch {epoch}, batch {batch_index}; training diverged"
                )));
            }
            loss_sum += batch_loss * batch.len() as f64;
            adam.step(&mut params, &grads);
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        let (val_loss, top1, top5, f1) = val_row(&params, val_samples, epoch)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_top1: top1,
            val_top5: top5,
            val_f1: f1,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone());
        }
    }
    Ok((best.1, history))
}
