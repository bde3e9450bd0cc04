use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the
    /// activation value `a = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    XavierUniform,
    HeUniform,
}

/// One complete assignment of the 13 network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparameterSetting {
    pub hidden_layer_count: usize,
    /// Width shared by every hidden layer.
    pub hidden_units: usize,
    pub hidden_activation: Activation,
    pub learning_rate: f64,
    /// Epoch `e` trains with `learning_rate / (1 + lr_decay * e)`.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Only used by `sgd_momentum`.
    pub momentum: f64,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub weight_init: WeightInit,
    /// Epochs without holdout AUC improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
#[error("invalid value for {field}: {reason}")]
pub struct InvalidHyperparameter {
    pub field: &'static str,
    pub reason: String,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> InvalidHyperparameter {
    InvalidHyperparameter {
        field,
        reason: reason.into(),
    }
}

impl Default for HyperparameterSetting {
    fn default() -> Self {
        Self {
            hidden_layer_count: 2,
            hidden_units: 16,
            hidden_activation: Activation::Relu,
            learning_rate: 0.01,
            lr_decay: 0.0,
            epochs: 100,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            momentum: 0.9,
            dropout_rate: 0.0,
            l2_lambda: 1e-4,
            weight_init: WeightInit::HeUniform,
            early_stop_patience: 0,
        }
    }
}

pub fn check_hidden_layer_count(v: usize) -> Result<(), InvalidHyperparameter> {
    if v == 0 {
        return Err(invalid("hidden_layer_count", "must be positive"));
    }
    Ok(())
}

pub fn check_hidden_units(v: usize) -> Result<(), InvalidHyperparameter> {
    if v == 0 {
        return Err(invalid("hidden_units", "must be positive"));
    }
    Ok(())
}

pub fn check_learning_rate(v: f64) -> Result<(), InvalidHyperparameter> {
    // zero is accepted: it trains nothing, which is a useful baseline
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid("learning_rate", format!("{v} is not a finite nonnegative number")));
    }
    Ok(())
}

pub fn check_lr_decay(v: f64) -> Result<(), InvalidHyperparameter> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid("lr_decay", format!("{v} is not a finite nonnegative number")));
    }
    Ok(())
}

pub fn check_epochs(v: usize) -> Result<(), InvalidHyperparameter> {
    if v == 0 {
        return Err(invalid("epochs", "must be positive"));
    }
    Ok(())
}

pub fn check_batch_size(v: usize) -> Result<(), InvalidHyperparameter> {
    if v == 0 {
        return Err(invalid("batch_size", "must be positive"));
    }
    Ok(())
}

pub fn check_momentum(v: f64) -> Result<(), InvalidHyperparameter> {
    if !(0.0..1.0).contains(&v) {
        return Err(invalid("momentum", format!("{v} is outside [0, 1)")));
    }
    Ok(())
}

pub fn check_dropout_rate(v: f64) -> Result<(), InvalidHyperparameter> {
    if !(0.0..1.0).contains(&v) {
        return Err(invalid("dropout_rate", format!("{v} is outside [0, 1)")));
    }
    Ok(())
}

pub fn check_l2_lambda(v: f64) -> Result<(), InvalidHyperparameter> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid("l2_lambda", format!("{v} is not a finite nonnegative number")));
    }
    Ok(())
}

impl HyperparameterSetting {
    pub fn validate(&self) -> Result<(), InvalidHyperparameter> {
        check_hidden_layer_count(self.hidden_layer_count)?;
        check_hidden_units(self.hidden_units)?;
        check_learning_rate(self.learning_rate)?;
        check_lr_decay(self.lr_decay)?;
        check_epochs(self.epochs)?;
        check_batch_size(self.batch_size)?;
        check_momentum(self.momentum)?;
        check_dropout_rate(self.dropout_rate)?;
        check_l2_lambda(self.l2_lambda)?;
        Ok(())
    }

    /// Layer widths from input to output, e.g. `[12, 16, 16, 1]`.
    pub fn layer_widths(&self, input_width: usize) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_layer_count + 2);
        widths.push(input_width);
        widths.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layer_count));
        widths.push(1);
        widths
    }
}

impl fmt::Display for HyperparameterSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} {:?} lr={} decay={} epochs={} batch={} {:?} mom={} drop={} l2={} {:?} patience={}",
            self.hidden_layer_count,
            self.hidden_units,
            self.hidden_activation,
            self.learning_rate,
            self.lr_decay,
            self.epochs,
            self.batch_size,
            self.optimizer,
            self.momentum,
            self.dropout_rate,
            self.l2_lambda,
            self.weight_init,
            self.early_stop_patience
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        HyperparameterSetting::default().validate().unwrap();
    }

    #[test]
    fn serde_has_thirteen_fields() {
        let v = serde_json::to_value(HyperparameterSetting::default()).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 13);
        assert_eq!(v["optimizer"], "adam");
        assert_eq!(v["weight_init"], "he_uniform");
    }

    #[test]
    fn range_violations() {
        let base = HyperparameterSetting::default();
        let cases = [
            HyperparameterSetting { hidden_layer_count: 0, ..base.clone() },
            HyperparameterSetting { hidden_units: 0, ..base.clone() },
            HyperparameterSetting { learning_rate: -1.0, ..base.clone() },
            HyperparameterSetting { learning_rate: f64::NAN, ..base.clone() },
            HyperparameterSetting { epochs: 0, ..base.clone() },
            HyperparameterSetting { batch_size: 0, ..base.clone() },
            HyperparameterSetting { momentum: 1.0, ..base.clone() },
            HyperparameterSetting { dropout_rate: 1.0, ..base.clone() },
            HyperparameterSetting { dropout_rate: -0.1, ..base.clone() },
            HyperparameterSetting { l2_lambda: -1e-3, ..base.clone() },
            HyperparameterSetting { lr_decay: f64::INFINITY, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c}");
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(HyperparameterSetting::default()).unwrap();
        v["learnin_rate"] = 0.1.into();
        assert!(serde_json::from_value::<HyperparameterSetting>(v).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn widths_chain() {
        let s = HyperparameterSetting { hidden_layer_count: 3, hidden_units: 4, ..Default::default() };
        assert_eq!(s.layer_widths(7), vec![7, 4, 4, 4, 1]);
    }
}
