use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::Encoder;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predictor {
    pub name: String,
    /// Question put to the user when asking for this predictor.
    pub question: String,
    pub values: Vec<String>,
}

/// The predictors a model asks for, in dialogue order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorCatalog {
    pub predictors: Vec<Predictor>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[serde(tag = "code")]
pub enum CatalogError {
    #[error("no value given for predictor {predictor:?}")]
    MissingPredictor { predictor: String },
    #[error("unknown predictor {predictor:?} (expected one of {expected:?})")]
    UnknownPredictor { predictor: String, expected: Vec<String> },
    #[error("{value:?} is not an allowed value of {predictor:?} (allowed: {allowed:?})")]
    InvalidValue {
        predictor: String,
        value: String,
        allowed: Vec<String>,
    },
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::MissingPredictor { .. } => "MissingPredictor",
            CatalogError::UnknownPredictor { .. } => "UnknownPredictor",
            CatalogError::InvalidValue { .. } => "InvalidValue",
        }
    }
}

impl PredictorCatalog {
    /// One predictor per encoded column, with a generic question.
    pub fn from_encoder(encoder: &Encoder) -> Self {
        Self {
            predictors: encoder
                .columns
                .iter()
                .map(|c| Predictor {
                    name: c.name.clone(),
                    question: format!("What is the value of {}?", c.name),
                    values: c.categories.clone(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Predictor> {
        self.predictors.iter().find(|p| p.name == name)
    }

    /// Names unique, every value list nonempty.
    pub fn is_well_formed(&self) -> bool {
        let mut names = BTreeSet::new();
        self.predictors
            .iter()
            .all(|p| names.insert(p.name.as_str()) && !p.values.is_empty())
    }

    /// True when the catalog asks for exactly the encoder's columns and
    /// offers only values the encoder knows.
    pub fn matches_encoder(&self, encoder: &Encoder) -> bool {
        self.predictors.len() == encoder.columns.len()
            && self.predictors.iter().all(|p| {
                encoder
                    .column(&p.name)
                    .is_some_and(|c| p.values.iter().all(|v| c.categories.contains(v)))
            })
    }

    pub fn check_value(&self, predictor: &str, value: &str) -> Result<(), CatalogError> {
        let p = self.get(predictor).ok_or_else(|| CatalogError::UnknownPredictor {
            predictor: predictor.to_owned(),
            expected: self.predictors.iter().map(|p| p.name.clone()).collect(),
        })?;
        if !p.values.iter().any(|v| v == value) {
            return Err(CatalogError::InvalidValue {
                predictor: predictor.to_owned(),
                value: value.to_owned(),
                allowed: p.values.clone(),
            });
        }
        Ok(())
    }

    /// Check a full answer set: every predictor answered exactly once with
    /// an allowed value, nothing extra.
    pub fn check_answers(&self, answers: &HashMap<String, String>) -> Result<(), CatalogError> {
        for name in answers.keys() {
            if self.get(name).is_none() {
                return Err(CatalogError::UnknownPredictor {
                    predictor: name.clone(),
                    expected: self.predictors.iter().map(|p| p.name.clone()).collect(),
                });
            }
        }
        for p in &self.predictors {
            let value = answers.get(&p.name).ok_or_else(|| CatalogError::MissingPredictor {
                predictor: p.name.clone(),
            })?;
            self.check_value(&p.name, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> PredictorCatalog {
        PredictorCatalog {
            predictors: vec![
                Predictor {
                    name: "DCIS_level".into(),
                    question: "Type of ductal carcinoma in situ?".into(),
                    values: vec!["comedo".into(), "none".into(), "solid".into()],
                },
                Predictor {
                    name: "grade".into(),
                    question: "Grade?".into(),
                    values: vec!["1".into(), "2".into()],
                },
            ],
        }
    }

    #[test]
    fn answers_checked() {
        let c = catalog();
        let mut a: HashMap<String, String> = HashMap::new();
        a.insert("DCIS_level".into(), "solid".into());
        assert_eq!(
            c.check_answers(&a).unwrap_err(),
            CatalogError::MissingPredictor { predictor: "grade".into() }
        );
        a.insert("grade".into(), "3".into());
        assert_eq!(c.check_answers(&a).unwrap_err().code(), "InvalidValue");
        a.insert("grade".into(), "2".into());
        c.check_answers(&a).unwrap();
        a.insert("age".into(), "old".into());
        assert_eq!(c.check_answers(&a).unwrap_err().code(), "UnknownPredictor");
    }

    #[test]
    fn duplicate_names_are_malformed() {
        let mut c = catalog();
        assert!(c.is_well_formed());
        c.predictors[1].name = "DCIS_level".into();
        assert!(!c.is_well_formed());
    }
}
