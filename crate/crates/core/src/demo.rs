//! Synthetic demo data and the bundled horizon models built from it.
//!
//! None of this data is clinical. The predictor names and vocabularies only
//! imitate the shape of a categorical metastasis dataset so the service has
//! something to serve; every provenance string says so.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Predictor, PredictorCatalog};
use crate::dataset::{parse_csv, Dataset};
use crate::grid::{run_grid_search, GridError, GridOptions, GridReport, GridSpec};
use crate::hyper::HyperparameterSetting;
use crate::rng::{mix, SplitMix64};
use crate::vault::{save, ModelArtifact, VaultError};

pub const DEMO_SEED: u64 = 20_220_901;
pub const LABEL_COLUMN: &str = "metastasis";
pub const SEPARABLE_LABEL: &str = "outcome";
pub const SEPARABLE_ROWS: usize = 400;
pub const SYNTHETIC_ROWS: usize = 600;

/// (name, question, values in display order, per-value log-odds effect)
type PredictorSpec = (&'static str, &'static str, &'static [&'static str], &'static [f64]);

const PREDICTORS: &[PredictorSpec] = &[
    (
        "DCIS_level",
        "DCIS_level: what type of ductal carcinoma in situ is present?",
        &["none", "solid", "cribriform", "comedo", "mixed"],
        &[0.0, 0.3, 0.4, 0.9, 0.6],
    ),
    (
        "stage",
        "What is the tumor stage?",
        &["1", "2", "3"],
        &[0.0, 0.7, 1.5],
    ),
    (
        "grade",
        "What is the histologic grade?",
        &["1", "2", "3"],
        &[0.0, 0.4, 0.9],
    ),
    (
        "lymph_nodes",
        "How many lymph nodes are positive?",
        &["0", "1-3", "4+"],
        &[0.0, 0.8, 1.6],
    ),
    (
        "tumor_size",
        "What is the tumor size?",
        &["<2cm", "2-5cm", ">5cm"],
        &[0.0, 0.5, 1.1],
    ),
    (
        "ER_status",
        "What is the estrogen receptor status?",
        &["positive", "negative"],
        &[0.0, 0.5],
    ),
    (
        "PR_status",
        "What is the progesterone receptor status?",
        &["positive", "negative"],
        &[0.0, 0.3],
    ),
    (
        "HER2_status",
        "What is the HER2 status?",
        &["negative", "positive"],
        &[0.0, 0.6],
    ),
    (
        "menopausal_status",
        "What is the menopausal status?",
        &["pre", "post"],
        &[0.0, -0.2],
    ),
];

/// The question catalog shared by the bundled horizon models.
pub fn demo_catalog() -> PredictorCatalog {
    PredictorCatalog {
        predictors: PREDICTORS
            .iter()
            .map(|(name, question, values, _)| Predictor {
                name: (*name).into(),
                question: (*question).into(),
                values: values.iter().map(|v| (*v).into()).collect(),
            })
            .collect(),
    }
}

/// Intercept and effect multiplier per horizon: later horizons have more
/// events and slightly stronger effects.
fn horizon_profile(horizon: u32) -> (f64, f64) {
    match horizon {
        5 => (-3.4, 1.0),
        10 => (-3.0, 1.1),
        _ => (-2.7, 1.2),
    }
}

/// Noisy logistic synthetic cohort for one horizon, labels "no"/"yes".
pub fn synthetic_cohort(horizon: u32, rows: usize, seed: u64) -> Dataset {
    let (intercept, scale) = horizon_profile(horizon);
    let mut rng = SplitMix64::new(mix(seed, horizon as u64, 0xC0));
    let mut csv = String::new();
    let names: Vec<&str> = PREDICTORS.iter().map(|p| p.0).collect();
    csv.push_str(&names.join(","));
    csv.push(',');
    csv.push_str(LABEL_COLUMN);
    csv.push('\n');
    for _ in 0..rows {
        let mut logit = intercept;
        let mut fields = Vec::with_capacity(PREDICTORS.len() + 1);
        for (_, _, values, effects) in PREDICTORS {
            let k = rng.below(values.len() as u64) as usize;
            logit += scale * effects[k];
            fields.push(values[k]);
        }
        let p = crate::hyper::sigmoid(logit);
        fields.push(if rng.next_f64() < p { "yes" } else { "no" });
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    parse_csv(csv.as_bytes(), LABEL_COLUMN).expect("generated cohort is valid")
}

const SEPARABLE_COLUMNS: &[(&str, &[&str], &[i32])] = &[
    ("tumor_grade", &["low", "intermediate", "high"], &[0, 2, 4]),
    ("node_status", &["negative", "micro", "macro"], &[0, 1, 3]),
    ("receptor_status", &["positive", "negative"], &[0, 2]),
    ("dcis_level", &["none", "low", "high"], &[0, 1, 2]),
    ("smoker", &["no", "yes"], &[0, 1]),
];

/// A dataset whose label is a threshold on an integer sum of per-category
/// scores, so the classes are linearly separable in one-hot space. The
/// threshold is the median score, which keeps the classes near balance.
pub fn separable_dataset(rows: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(mix(seed, 0x5E9A, 0));
    let mut picks = Vec::with_capacity(rows);
    let mut scores = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut score = 0;
        let row: Vec<usize> = SEPARABLE_COLUMNS
            .iter()
            .map(|(_, values, weights)| {
                let k = rng.below(values.len() as u64) as usize;
                score += weights[k];
                k
            })
            .collect();
        picks.push(row);
        scores.push(score);
    }
    let mut sorted = scores.clone();
    sorted.sort_unstable();
    let threshold = sorted[rows / 2];

    let mut csv = String::new();
    let names: Vec<&str> = SEPARABLE_COLUMNS.iter().map(|c| c.0).collect();
    csv.push_str(&names.join(","));
    csv.push(',');
    csv.push_str(SEPARABLE_LABEL);
    csv.push('\n');
    for (row, score) in picks.iter().zip(&scores) {
        for (k, (_, values, _)) in row.iter().zip(SEPARABLE_COLUMNS) {
            csv.push_str(values[*k]);
            csv.push(',');
        }
        csv.push_str(if *score >= threshold { "yes" } else { "no" });
        csv.push('\n');
    }
    parse_csv(csv.as_bytes(), SEPARABLE_LABEL).expect("generated dataset is valid")
}

/// `d` with its labels shuffled by a seeded permutation.
pub fn permute_labels(d: &Dataset, seed: u64) -> Dataset {
    let mut labels = d.labels();
    SplitMix64::new(mix(seed, 0x9E2A, 0)).shuffle(&mut labels);
    d.with_labels(&labels)
}

/// Grid used to build the bundled horizon models.
pub fn demo_grid() -> GridSpec {
    GridSpec {
        hidden_units: vec![8, 16],
        learning_rate: vec![0.003, 0.01],
        epochs: vec![40],
        l2_lambda: vec![1e-3],
        ..GridSpec::singleton(&HyperparameterSetting::default())
    }
}

/// The answer set whose prediction is recorded as each model's golden value.
pub fn golden_answers() -> BTreeMap<String, String> {
    [
        ("DCIS_level", "comedo"),
        ("stage", "2"),
        ("grade", "3"),
        ("lymph_nodes", "1-3"),
        ("tumor_size", "2-5cm"),
        ("ER_status", "negative"),
        ("PR_status", "positive"),
        ("HER2_status", "negative"),
        ("menopausal_status", "post"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub horizon: u32,
    pub file: String,
    pub validation_auc: f64,
    pub answers: BTreeMap<String, String>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenManifest {
    pub seed: u64,
    pub models: Vec<GoldenRecord>,
}

impl GoldenManifest {
    pub fn for_horizon(&self, horizon: u32) -> Option<&GoldenRecord> {
        self.models.iter().find(|m| m.horizon == horizon)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Train one horizon model on its synthetic cohort.
pub fn build_horizon_model(horizon: u32, seed: u64, workers: usize) -> Result<(ModelArtifact, GridReport), GridError> {
    let cohort = synthetic_cohort(horizon, SYNTHETIC_ROWS, seed);
    let opts = GridOptions {
        workers,
        ..GridOptions::default()
    };
    let report = run_grid_search(&cohort, &demo_grid(), seed, &opts)?;
    let provenance = format!(
        "DEMO ONLY - trained on a synthetic categorical cohort ({horizon}-year horizon, {SYNTHETIC_ROWS} rows, seed {seed}); \
         validation AUC {:.4}. Not derived from patient data; no clinical validity.",
        report.validation_auc
    );
    let artifact = ModelArtifact::new(
        Some(horizon),
        report.best_setting.clone(),
        report.encoder.clone(),
        demo_catalog(),
        report.weights.clone(),
        provenance,
    );
    Ok((artifact, report))
}

/// Write the synthetic CSVs to `data_dir` and the three horizon models plus
/// `golden.json` to `model_dir`.
pub fn build_demo_assets(data_dir: &Path, model_dir: &Path, seed: u64, workers: usize) -> Result<GoldenManifest, DemoError> {
    let write = |path: std::path::PathBuf, content: &[u8]| {
        std::fs::write(&path, content).map_err(|source| DemoError::Io { path, source })
    };
    for dir in [data_dir, model_dir] {
        std::fs::create_dir_all(dir).map_err(|source| DemoError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    write(
        data_dir.join("demo_separable.csv"),
        separable_dataset(SEPARABLE_ROWS, seed).to_csv().as_bytes(),
    )?;

    let answers = golden_answers();
    let lookup: HashMap<String, String> = answers.clone().into_iter().collect();
    let mut models = Vec::new();
    for horizon in crate::vault::HORIZONS {
        write(
            data_dir.join(format!("synthetic_cohort_{horizon}y.csv")),
            synthetic_cohort(horizon, SYNTHETIC_ROWS, seed).to_csv().as_bytes(),
        )?;
        let (artifact, report) = build_horizon_model(horizon, seed, workers)?;
        let file = format!("horizon-{horizon}.imbm");
        save(&artifact, &model_dir.join(&file))?;
        let probability = artifact.predict(&lookup).expect("golden answers fit the demo catalog");
        models.push(GoldenRecord {
            horizon,
            file,
            validation_auc: report.validation_auc,
            answers: answers.clone(),
            probability,
        });
    }
    let manifest = GoldenManifest { seed, models };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(model_dir.join("golden.json"), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}
