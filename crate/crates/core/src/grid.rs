//! Exhaustive hyperparameter grid search scored by 5-fold cross-validation.
//!
//! Every setting gets its fold seeds from `mix(master_seed, setting_index,
//! fold)`, and results are gathered by setting index, so the report does not
//! depend on how many workers evaluated the grid or in which order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{encode, Dataset, EncodedMatrix, Encoder};
use crate::hyper::{self, Activation, HyperparameterSetting, InvalidHyperparameter, Optimizer, WeightInit};
use crate::metrics::{roc_curve, MetricsError, RocResult};
use crate::network::NetworkWeights;
use crate::rng::mix;
use crate::split::{make_split, SplitError, SplitPlan, N_FOLDS};
use crate::train::{train, TrainConfig, TrainError};

pub const DEFAULT_GRID_CAP: usize = 4096;

/// Candidate values for each hyperparameter. Fields left out of a JSON
/// document take the default setting's value as a singleton list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub hidden_layer_count: Vec<usize>,
    pub hidden_units: Vec<usize>,
    pub hidden_activation: Vec<Activation>,
    pub learning_rate: Vec<f64>,
    pub lr_decay: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub optimizer: Vec<Optimizer>,
    pub momentum: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub l2_lambda: Vec<f64>,
    pub weight_init: Vec<WeightInit>,
    pub early_stop_patience: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::singleton(&HyperparameterSetting::default())
    }
}

impl GridSpec {
    pub fn singleton(s: &HyperparameterSetting) -> Self {
        Self {
            hidden_layer_count: vec![s.hidden_layer_count],
            hidden_units: vec![s.hidden_units],
            hidden_activation: vec![s.hidden_activation],
            learning_rate: vec![s.learning_rate],
            lr_decay: vec![s.lr_decay],
            epochs: vec![s.epochs],
            batch_size: vec![s.batch_size],
            optimizer: vec![s.optimizer],
            momentum: vec![s.momentum],
            dropout_rate: vec![s.dropout_rate],
            l2_lambda: vec![s.l2_lambda],
            weight_init: vec![s.weight_init],
            early_stop_patience: vec![s.early_stop_patience],
        }
    }

    /// The grid offered when a user accepts the defaults: 3 learning rates,
    /// 2 batch sizes and 2 epoch budgets around the default setting.
    pub fn defaults() -> Self {
        Self {
            learning_rate: vec![0.001, 0.01, 0.1],
            batch_size: vec![16, 32],
            epochs: vec![50, 100],
            ..Self::default()
        }
    }

    /// List lengths in field order.
    pub fn radices(&self) -> [usize; 13] {
        [
            self.hidden_layer_count.len(),
            self.hidden_units.len(),
            self.hidden_activation.len(),
            self.learning_rate.len(),
            self.lr_decay.len(),
            self.epochs.len(),
            self.batch_size.len(),
            self.optimizer.len(),
            self.momentum.len(),
            self.dropout_rate.len(),
            self.l2_lambda.len(),
            self.weight_init.len(),
            self.early_stop_patience.len(),
        ]
    }

    /// Number of settings, or `None` on overflow.
    pub fn count(&self) -> Option<usize> {
        self.radices().iter().try_fold(1usize, |acc, &r| acc.checked_mul(r))
    }

    pub fn validate(&self) -> Result<(), GridError> {
        const NAMES: [&str; 13] = [
            "hidden_layer_count",
            "hidden_units",
            "hidden_activation",
            "learning_rate",
            "lr_decay",
            "epochs",
            "batch_size",
            "optimizer",
            "momentum",
            "dropout_rate",
            "l2_lambda",
            "weight_init",
            "early_stop_patience",
        ];
        if let Some(i) = self.radices().iter().position(|&r| r == 0) {
            return Err(GridError::EmptyList { field: NAMES[i] });
        }
        let checks = || -> Result<(), InvalidHyperparameter> {
            self.hidden_layer_count.iter().try_for_each(|&v| hyper::check_hidden_layer_count(v))?;
            self.hidden_units.iter().try_for_each(|&v| hyper::check_hidden_units(v))?;
            self.learning_rate.iter().try_for_each(|&v| hyper::check_learning_rate(v))?;
            self.lr_decay.iter().try_for_each(|&v| hyper::check_lr_decay(v))?;
            self.epochs.iter().try_for_each(|&v| hyper::check_epochs(v))?;
            self.batch_size.iter().try_for_each(|&v| hyper::check_batch_size(v))?;
            self.momentum.iter().try_for_each(|&v| hyper::check_momentum(v))?;
            self.dropout_rate.iter().try_for_each(|&v| hyper::check_dropout_rate(v))?;
            self.l2_lambda.iter().try_for_each(|&v| hyper::check_l2_lambda(v))?;
            Ok(())
        };
        checks().map_err(GridError::InvalidValue)
    }

    /// Setting number `index` in mixed-radix order (last field fastest).
    pub fn setting_at(&self, mut index: usize) -> HyperparameterSetting {
        let radices = self.radices();
        let mut digits = [0usize; 13];
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = index % r;
            index /= r;
        }
        HyperparameterSetting {
            hidden_layer_count: self.hidden_layer_count[digits[0]],
            hidden_units: self.hidden_units[digits[1]],
            hidden_activation: self.hidden_activation[digits[2]],
            learning_rate: self.learning_rate[digits[3]],
            lr_decay: self.lr_decay[digits[4]],
            epochs: self.epochs[digits[5]],
            batch_size: self.batch_size[digits[6]],
            optimizer: self.optimizer[digits[7]],
            momentum: self.momentum[digits[8]],
            dropout_rate: self.dropout_rate[digits[9]],
            l2_lambda: self.l2_lambda[digits[10]],
            weight_init: self.weight_init[digits[11]],
            early_stop_patience: self.early_stop_patience[digits[12]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid has {count} settings, above the cap of {cap}")]
    GridTooLarge { count: u128, cap: usize },
    #[error("candidate list for {field} is empty")]
    EmptyList { field: &'static str },
    #[error(transparent)]
    InvalidValue(InvalidHyperparameter),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("setting {setting_index}: {error}")]
    Train { setting_index: usize, error: TrainError },
    #[error("validation AUC undefined: {0}")]
    Validation(MetricsError),
}

impl GridError {
    pub fn code(&self) -> &'static str {
        match self {
            GridError::GridTooLarge { .. } => "GridTooLarge",
            GridError::EmptyList { .. } => "EmptyList",
            GridError::InvalidValue(_) => "InvalidHyperparameter",
            GridError::Split(SplitError::ClassTooSmall { .. }) => "ClassTooSmall",
            GridError::Validation(e) => e.code(),
            GridError::Train { error, .. } => match error {
                TrainError::NonFiniteLoss { .. } => "NonFiniteLoss",
                TrainError::NonFiniteWeights { .. } => "NonFiniteWeights",
                _ => "TrainingFailed",
            },
        }
    }
}

/// All settings of the grid in mixed-radix order.
pub fn enumerate_settings(g: &GridSpec, cap: usize) -> Result<Vec<HyperparameterSetting>, GridError> {
    g.validate()?;
    let count = match g.count() {
        Some(c) if c <= cap => c,
        Some(c) => return Err(GridError::GridTooLarge { count: c as u128, cap }),
        None => {
            let count = g.radices().iter().map(|&r| r as u128).product();
            return Err(GridError::GridTooLarge { count, cap });
        }
    };
    Ok((0..count).map(|i| g.setting_at(i)).collect())
}

/// Completed / total settings of a running search.
#[derive(Debug, Default)]
pub struct GridProgress {
    done: AtomicUsize,
    total: AtomicUsize,
}

impl GridProgress {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn snapshot(&self) -> (usize, usize) {
        (self.done.load(Ordering::Acquire), self.total.load(Ordering::Acquire))
    }
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    /// 1 evaluates serially; 0 uses every available core.
    pub workers: usize,
    pub cap: usize,
    pub progress: Option<Arc<GridProgress>>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            cap: DEFAULT_GRID_CAP,
            progress: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub index: usize,
    pub mean_cv_auc: f64,
    pub fold_aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub master_seed: u64,
    pub best_index: usize,
    pub best_setting: HyperparameterSetting,
    pub best_cv_auc: f64,
    pub validation_auc: f64,
    pub validation_roc: RocResult,
    pub per_setting_results: Vec<SettingResult>,
    pub settings: Vec<HyperparameterSetting>,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub weights: NetworkWeights,
    pub encoder: Encoder,
}

/// Seed for fold `k` of setting `setting_index`; fold `N_FOLDS` is the final
/// refit on the whole training partition.
pub fn fold_seed(master_seed: u64, setting_index: usize, fold: usize) -> u64 {
    mix(master_seed, setting_index as u64, fold as u64)
}

/// Train the model for fold `k`: fitted on every other fold, with fold `k`
/// as the early-stopping holdout when patience is enabled.
pub fn fold_model(
    m: &EncodedMatrix,
    plan: &SplitPlan,
    s: &HyperparameterSetting,
    setting_index: usize,
    master_seed: u64,
    k: usize,
) -> Result<NetworkWeights, TrainError> {
    let fit = m.select(&plan.fold_train_indices(k));
    let held = m.select(&plan.folds[k]);
    let cfg = TrainConfig {
        setting: s.clone(),
        seed: fold_seed(master_seed, setting_index, k),
        input_width: m.width,
    };
    train(&fit, &cfg, Some(&held))
}

fn fold_auc(
    m: &EncodedMatrix,
    plan: &SplitPlan,
    s: &HyperparameterSetting,
    setting_index: usize,
    master_seed: u64,
    k: usize,
) -> Result<f64, TrainError> {
    let w = fold_model(m, plan, s, setting_index, master_seed, k)?;
    let held = m.select(&plan.folds[k]);
    let scores = w.predict_rows(&held.features, s.hidden_activation)?;
    Ok(match roc_curve(&scores, &held.labels) {
        Ok(r) => r.auc,
        Err(e) => {
            tracing::warn!(setting_index, fold = k, "fold AUC undefined ({e}); recording 0.5");
            0.5
        }
    })
}

/// Mean held-out AUC over the plan's folds. Folds holding a single class
/// count as 0.5.
pub fn cross_validate(
    m: &EncodedMatrix,
    plan: &SplitPlan,
    s: &HyperparameterSetting,
    setting_index: usize,
    master_seed: u64,
) -> Result<SettingResult, TrainError> {
    let fold_aucs = (0..plan.folds.len())
        .map(|k| fold_auc(m, plan, s, setting_index, master_seed, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_cv_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
    Ok(SettingResult {
        index: setting_index,
        mean_cv_auc,
        fold_aucs,
    })
}

fn evaluate_all(
    m: &EncodedMatrix,
    plan: &SplitPlan,
    settings: &[HyperparameterSetting],
    master_seed: u64,
    opts: &GridOptions,
) -> Vec<Result<SettingResult, TrainError>> {
    let eval = |i: usize| {
        let r = cross_validate(m, plan, &settings[i], i, master_seed);
        if let Some(p) = &opts.progress {
            p.done.fetch_add(1, Ordering::AcqRel);
        }
        r
    };

    #[cfg(feature = "parallel")]
    if opts.workers != 1 {
        use rayon::prelude::*;
        let run = || (0..settings.len()).into_par_iter().map(eval).collect();
        return match rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                tracing::warn!("could not build worker pool ({e}); using the global pool");
                run()
            }
        };
    }

    (0..settings.len()).map(eval).collect()
}

/// Index of the highest score; the earliest index wins ties.
pub fn select_best(results: &[SettingResult]) -> usize {
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        if r.mean_cv_auc > results[best].mean_cv_auc {
            best = i;
        }
    }
    best
}

/// Search `g` on `d`: split 80/20, score every setting by 5-fold CV on the
/// 80 %, refit the best on the whole 80 % and measure it on the 20 %.
pub fn run_grid_search(d: &Dataset, g: &GridSpec, master_seed: u64, opts: &GridOptions) -> Result<GridReport, GridError> {
    let settings = enumerate_settings(g, opts.cap)?;
    let plan = make_split(d, master_seed)?;
    debug_assert_eq!(plan.folds.len(), N_FOLDS);
    if let Some(p) = &opts.progress {
        p.total.store(settings.len(), Ordering::Release);
        p.done.store(0, Ordering::Release);
    }
    let (m, encoder) = encode(d);

    let per_setting_results = evaluate_all(&m, &plan, &settings, master_seed, opts)
        .into_iter()
        .enumerate()
        .map(|(setting_index, r)| r.map_err(|error| GridError::Train { setting_index, error }))
        .collect::<Result<Vec<_>, _>>()?;

    let best_index = select_best(&per_setting_results);
    let best_setting = settings[best_index].clone();
    let train_m = m.select(&plan.train_indices);
    let val_m = m.select(&plan.validation_indices);
    let cfg = TrainConfig {
        setting: best_setting.clone(),
        seed: fold_seed(master_seed, best_index, N_FOLDS),
        input_width: m.width,
    };
    let train_err = |error| GridError::Train {
        setting_index: best_index,
        error,
    };
    let weights = train(&train_m, &cfg, Some(&val_m)).map_err(train_err)?;
    let scores = weights
        .predict_rows(&val_m.features, best_setting.hidden_activation)
        .map_err(|e| train_err(e.into()))?;
    // a class with only 2 rows contributes none to validation
    let validation_roc = roc_curve(&scores, &val_m.labels).map_err(GridError::Validation)?;

    Ok(GridReport {
        master_seed,
        best_index,
        best_cv_auc: per_setting_results[best_index].mean_cv_auc,
        best_setting,
        validation_auc: validation_roc.auc,
        validation_roc,
        per_setting_results,
        settings,
        train_rows: plan.train_indices.len(),
        validation_rows: plan.validation_indices.len(),
        weights,
        encoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_radix_order() {
        let g = GridSpec {
            learning_rate: vec![0.01, 0.1],
            batch_size: vec![16, 32, 64],
            ..GridSpec::default()
        };
        let s = enumerate_settings(&g, DEFAULT_GRID_CAP).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!((s[0].learning_rate, s[0].batch_size), (0.01, 16));
        assert_eq!((s[1].learning_rate, s[1].batch_size), (0.01, 32));
        assert_eq!((s[3].learning_rate, s[3].batch_size), (0.1, 16));
        assert_eq!((s[5].learning_rate, s[5].batch_size), (0.1, 64));
    }

    #[test]
    fn singleton_grid_has_one_setting() {
        let s = enumerate_settings(&GridSpec::default(), DEFAULT_GRID_CAP).unwrap();
        assert_eq!(s, vec![HyperparameterSetting::default()]);
    }

    #[test]
    fn default_grid_has_twelve() {
        assert_eq!(enumerate_settings(&GridSpec::defaults(), DEFAULT_GRID_CAP).unwrap().len(), 12);
    }

    #[test]
    fn cap_is_enforced() {
        let g = GridSpec {
            hidden_layer_count: vec![1, 2],
            hidden_units: vec![4, 8],
            learning_rate: vec![0.1, 0.01],
            lr_decay: vec![0.0, 0.1],
            epochs: vec![1, 2],
            batch_size: vec![1, 2],
            momentum: vec![0.0, 0.5],
            dropout_rate: vec![0.0, 0.5],
            l2_lambda: vec![0.0, 0.1],
            early_stop_patience: vec![0, 1],
            optimizer: vec![Optimizer::Sgd, Optimizer::Adam],
            hidden_activation: vec![Activation::Relu, Activation::Tanh],
            weight_init: vec![WeightInit::HeUniform, WeightInit::XavierUniform],
        };
        assert_eq!(g.count(), Some(8192));
        assert_eq!(
            enumerate_settings(&g, DEFAULT_GRID_CAP).unwrap_err(),
            GridError::GridTooLarge { count: 8192, cap: 4096 }
        );
        assert_eq!(enumerate_settings(&g, 8192).unwrap().len(), 8192);
    }

    #[test]
    fn overflowing_grid_is_too_large() {
        let g = GridSpec {
            hidden_units: (1..=100_000).collect(),
            epochs: (1..=100_000).collect(),
            batch_size: (1..=100_000).collect(),
            hidden_layer_count: (1..=100_000).collect(),
            ..GridSpec::default()
        };
        assert!(matches!(enumerate_settings(&g, DEFAULT_GRID_CAP), Err(GridError::GridTooLarge { .. })));
    }

    #[test]
    fn empty_list_and_bad_value_rejected() {
        let g = GridSpec { epochs: vec![], ..GridSpec::default() };
        assert_eq!(enumerate_settings(&g, 10).unwrap_err(), GridError::EmptyList { field: "epochs" });
        let g = GridSpec { dropout_rate: vec![0.1, 1.5], ..GridSpec::default() };
        assert_eq!(enumerate_settings(&g, 10).unwrap_err().code(), "InvalidHyperparameter");
    }

    #[test]
    fn partial_json_fills_defaults() {
        let g: GridSpec = serde_json::from_str(r#"{"learning_rate":[0.5,0.05]}"#).unwrap();
        assert_eq!(g.learning_rate, vec![0.5, 0.05]);
        assert_eq!(g.count(), Some(2));
        assert!(serde_json::from_str::<GridSpec>(r#"{"learning_rat":[0.5]}"#).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let r = |i, a| SettingResult { index: i, mean_cv_auc: a, fold_aucs: vec![] };
        assert_eq!(select_best(&[r(0, 0.7), r(1, 0.9), r(2, 0.9)]), 1);
        assert_eq!(select_best(&[r(0, 0.9), r(1, 0.9)]), 0);
    }
}
