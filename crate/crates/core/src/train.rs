//! Minibatch training.
//!
//! Randomness per run comes from `cfg.seed` only: initialization uses the
//! init stream, epoch `e` shuffles rows with `mix(seed, SHUFFLE, e)` and the
//! dropout mask of batch `b` in epoch `e` uses `mix(seed, DROPOUT + e, b)`.

use serde::Serialize;

use crate::dataset::EncodedMatrix;
use crate::hyper::{HyperparameterSetting, Optimizer};
use crate::metrics::roc_curve;
use crate::network::{init_weights, Batch, Dropout, Gradients, NetworkError, NetworkWeights};
use crate::rng::{mix, SplitMix64};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50_0000_0000;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub setting: HyperparameterSetting,
    pub seed: u64,
    pub input_width: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
#[serde(tag = "code")]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("weights became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteWeights { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("early stopping is enabled but no holdout set was given")]
    MissingHoldout,
    #[error("input width {found} does not match configured width {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    InvalidSetting(#[from] crate::hyper::InvalidHyperparameter),
}

impl From<NetworkError> for TrainError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::DimensionMismatch { expected, found } => {
                TrainError::DimensionMismatch { expected, found }
            }
        }
    }
}

enum OptimizerState {
    Sgd,
    Momentum { velocity: Gradients, momentum: f64 },
    Adam { m: Gradients, v: Gradients, step: i32 },
}

impl OptimizerState {
    fn new(setting: &HyperparameterSetting, w: &NetworkWeights) -> Self {
        match setting.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::SgdMomentum => OptimizerState::Momentum {
                velocity: w.zeros_like(),
                momentum: setting.momentum,
            },
            Optimizer::Adam => OptimizerState::Adam {
                m: w.zeros_like(),
                v: w.zeros_like(),
                step: 0,
            },
        }
    }

    fn step(&mut self, w: &mut NetworkWeights, g: &Gradients, lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for_each_param(w, g, |p, gp| *p -= lr * gp);
            }
            OptimizerState::Momentum { velocity, momentum } => {
                let mu = *momentum;
                for ((wl, gl), vl) in w.layers.iter_mut().zip(&g.layers).zip(&mut velocity.layers) {
                    let params = wl.weights.iter_mut().chain(wl.bias.iter_mut());
                    let grads = gl.weights.iter().chain(&gl.bias);
                    let vel = vl.weights.iter_mut().chain(vl.bias.iter_mut());
                    for ((p, &gp), v) in params.zip(grads).zip(vel) {
                        *v = mu * *v - lr * gp;
                        *p += *v;
                    }
                }
            }
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                for (((wl, gl), ml), vl) in w
                    .layers
                    .iter_mut()
                    .zip(&g.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    let params = wl.weights.iter_mut().chain(wl.bias.iter_mut());
                    let grads = gl.weights.iter().chain(&gl.bias);
                    let ms = ml.weights.iter_mut().chain(ml.bias.iter_mut());
                    let vs = vl.weights.iter_mut().chain(vl.bias.iter_mut());
                    for (((p, &gp), mp), vp) in params.zip(grads).zip(ms).zip(vs) {
                        *mp = ADAM_BETA1 * *mp + (1.0 - ADAM_BETA1) * gp;
                        *vp = ADAM_BETA2 * *vp + (1.0 - ADAM_BETA2) * gp * gp;
                        let m_hat = *mp / c1;
                        let v_hat = *vp / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
    }
}

fn for_each_param(w: &mut NetworkWeights, g: &Gradients, mut f: impl FnMut(&mut f64, f64)) {
    for (wl, gl) in w.layers.iter_mut().zip(&g.layers) {
        for (p, &gp) in wl.weights.iter_mut().zip(&gl.weights) {
            f(p, gp);
        }
        for (p, &gp) in wl.bias.iter_mut().zip(&gl.bias) {
            f(p, gp);
        }
    }
}

/// Learning rate used during epoch `epoch` (0-based).
pub fn epoch_learning_rate(setting: &HyperparameterSetting, epoch: usize) -> f64 {
    setting.learning_rate / (1.0 + setting.lr_decay * epoch as f64)
}

/// AUC of `w` on `m`, or 0.5 when `m` holds a single class.
pub fn score_auc(w: &NetworkWeights, m: &EncodedMatrix, setting: &HyperparameterSetting) -> Result<f64, TrainError> {
    let scores = w.predict_rows(&m.features, setting.hidden_activation)?;
    Ok(roc_curve(&scores, &m.labels).map_or(0.5, |r| r.auc))
}

/// Train a network on `m`.
///
/// With `early_stop_patience > 0` the holdout AUC is measured after every
/// epoch; training stops once it has not improved for `patience` epochs and
/// the weights from the best epoch are returned (also when the epoch budget
/// runs out first).
pub fn train(m: &EncodedMatrix, cfg: &TrainConfig, holdout: Option<&EncodedMatrix>) -> Result<NetworkWeights, TrainError> {
    let setting = &cfg.setting;
    setting.validate()?;
    if m.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if m.width != cfg.input_width {
        return Err(TrainError::DimensionMismatch {
            expected: cfg.input_width,
            found: m.width,
        });
    }
    let patience = setting.early_stop_patience;
    let holdout = match (patience, holdout) {
        (0, _) => None,
        (_, Some(h)) => Some(h),
        (_, None) => return Err(TrainError::MissingHoldout),
    };

    let mut w = init_weights(setting, cfg.input_width, cfg.seed);
    let mut grads = w.zeros_like();
    let mut opt = OptimizerState::new(setting, &w);
    let width = m.width;
    let n = m.n_rows();

    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut xb: Vec<f64> = Vec::with_capacity(setting.batch_size * width);
    let mut yb: Vec<f64> = Vec::with_capacity(setting.batch_size);
    let mut best: Option<(f64, NetworkWeights)> = None;
    let mut stale = 0usize;

    for epoch in 0..setting.epochs {
        let lr = epoch_learning_rate(setting, epoch);
        order.clear();
        order.extend(0..n);
        SplitMix64::new(mix(cfg.seed, SHUFFLE_STREAM, epoch as u64)).shuffle(&mut order);

        for (b, chunk) in order.chunks(setting.batch_size).enumerate() {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(m.row(i));
                yb.push(m.labels[i]);
            }
            let mut dropout = (setting.dropout_rate > 0.0).then(|| Dropout {
                rate: setting.dropout_rate,
                rng: SplitMix64::new(mix(cfg.seed, DROPOUT_STREAM + epoch as u64, b as u64)),
            });
            let loss = w.accumulate_gradients(
                Batch::new(&xb, &yb),
                setting.hidden_activation,
                setting.l2_lambda,
                dropout.as_mut(),
                &mut grads,
            )?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(&mut w, &grads, lr);
            debug_assert!(w.is_finite(), "non-finite weights at epoch {epoch}, batch {b}");
            if !w.is_finite() {
                return Err(TrainError::NonFiniteWeights { epoch, batch: b });
            }
        }

        if let Some(h) = holdout {
            let auc = score_auc(&w, h, setting)?;
            match &best {
                Some((best_auc, _)) if auc <= *best_auc => {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
                _ => {
                    best = Some((auc, w.clone()));
                    stale = 0;
                }
            }
        }
    }

    Ok(match best {
        Some((_, best_w)) => best_w,
        None => w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper::{Activation, WeightInit};

    /// 2 binary features one-hot encoded (width 4), y = x1 xor x2.
    fn xor_matrix(rows: usize) -> EncodedMatrix {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..rows {
            let a = i % 2;
            let b = (i / 2) % 2;
            features.extend([(a == 0) as u8 as f64, (a == 1) as u8 as f64, (b == 0) as u8 as f64, (b == 1) as u8 as f64]);
            labels.push((a ^ b) as f64);
        }
        EncodedMatrix { features, labels, width: 4 }
    }

    fn xor_setting() -> HyperparameterSetting {
        HyperparameterSetting {
            hidden_layer_count: 1,
            hidden_units: 8,
            hidden_activation: Activation::Relu,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            l2_lambda: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let m = xor_matrix(40);
        for optimizer in [Optimizer::Sgd, Optimizer::SgdMomentum, Optimizer::Adam] {
            let cfg = TrainConfig {
                setting: HyperparameterSetting {
                    epochs: 1,
                    learning_rate: 0.0,
                    optimizer,
                    ..xor_setting()
                },
                seed: 3,
                input_width: 4,
            };
            let w = train(&m, &cfg, None).unwrap();
            assert_eq!(w, init_weights(&cfg.setting, 4, 3));
        }
    }

    #[test]
    fn learns_xor() {
        let m = xor_matrix(200);
        let cfg = TrainConfig {
            setting: xor_setting(),
            seed: 12,
            input_width: 4,
        };
        let w = train(&m, &cfg, None).unwrap();
        let probs = w.predict_rows(&m.features, Activation::Relu).unwrap();
        let correct = probs
            .iter()
            .zip(&m.labels)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
            .count();
        assert_eq!(correct, m.n_rows());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let m = xor_matrix(64);
        let cfg = TrainConfig {
            setting: HyperparameterSetting {
                epochs: 20,
                dropout_rate: 0.2,
                optimizer: Optimizer::SgdMomentum,
                learning_rate: 0.05,
                lr_decay: 0.1,
                weight_init: WeightInit::XavierUniform,
                ..xor_setting()
            },
            seed: 5,
            input_width: 4,
        };
        let a = train(&m, &cfg, None).unwrap();
        let b = train(&m, &cfg, None).unwrap();
        let bits = |w: &NetworkWeights| {
            w.layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.bias))
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn early_stopping_requires_holdout() {
        let m = xor_matrix(16);
        let cfg = TrainConfig {
            setting: HyperparameterSetting { early_stop_patience: 2, ..xor_setting() },
            seed: 1,
            input_width: 4,
        };
        assert_eq!(train(&m, &cfg, None).unwrap_err(), TrainError::MissingHoldout);
        let w = train(&m, &cfg, Some(&m)).unwrap();
        assert!(w.is_finite());
    }

    #[test]
    fn early_stopping_returns_best_epoch_weights() {
        // With lr 0 the holdout AUC never improves after epoch 0, so the
        // run stops after `patience` more epochs holding the init weights.
        let m = xor_matrix(32);
        let cfg = TrainConfig {
            setting: HyperparameterSetting {
                early_stop_patience: 3,
                learning_rate: 0.0,
                epochs: 1000,
                ..xor_setting()
            },
            seed: 8,
            input_width: 4,
        };
        let w = train(&m, &cfg, Some(&m)).unwrap();
        assert_eq!(w, init_weights(&cfg.setting, 4, 8));
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = xor_matrix(16);
        let cfg = TrainConfig {
            setting: xor_setting(),
            seed: 1,
            input_width: 5,
        };
        assert!(matches!(train(&m, &cfg, None), Err(TrainError::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = EncodedMatrix { features: vec![], labels: vec![], width: 4 };
        let cfg = TrainConfig { setting: xor_setting(), seed: 1, input_width: 4 };
        assert_eq!(train(&m, &cfg, None).unwrap_err(), TrainError::EmptyTrainingSet);
    }

    #[test]
    fn decay_schedule() {
        let s = HyperparameterSetting { learning_rate: 0.1, lr_decay: 0.5, ..Default::default() };
        assert_eq!(epoch_learning_rate(&s, 0), 0.1);
        assert!((epoch_learning_rate(&s, 2) - 0.05).abs() < 1e-15);
    }
}
