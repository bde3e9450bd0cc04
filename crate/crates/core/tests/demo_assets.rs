//! The bundled data/ and models/ files against a fresh build.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use medagent_core::demo::{
    build_horizon_model, separable_dataset, synthetic_cohort, GoldenManifest, DEMO_SEED, SEPARABLE_ROWS,
    SYNTHETIC_ROWS,
};
use medagent_core::vault::{self, ModelRegistry, VaultError, HORIZONS};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn golden() -> GoldenManifest {
    serde_json::from_slice(&std::fs::read(repo().join("models/golden.json")).unwrap()).unwrap()
}

#[test]
fn bundled_models_reproduce_golden_predictions() {
    let g = golden();
    assert_eq!(g.seed, DEMO_SEED);
    for rec in &g.models {
        let a = vault::load(&repo().join("models").join(&rec.file)).unwrap();
        assert_eq!(a.horizon, Some(rec.horizon));
        let answers: HashMap<String, String> = rec.answers.clone().into_iter().collect();
        assert_eq!(a.predict(&answers).unwrap().to_bits(), rec.probability.to_bits());
    }
}

#[test]
fn registry_serves_three_distinct_models() {
    let reg = ModelRegistry::open(repo().join("models")).unwrap();
    assert_eq!(reg.horizons(), HORIZONS.to_vec());
    let provenance: HashSet<String> = reg.list().into_iter().map(|e| e.provenance).collect();
    assert_eq!(provenance.len(), 3);
    assert!(provenance.iter().all(|p| p.starts_with("DEMO ONLY")));
    let five = reg.lookup(5).unwrap();
    assert_ne!(*five, *reg.lookup(10).unwrap());
    assert_ne!(*five, *reg.lookup(15).unwrap());
}

#[test]
fn missing_horizon_file_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    for h in [5, 15] {
        let name = format!("horizon-{h}.imbm");
        std::fs::copy(repo().join("models").join(&name), dir.path().join(&name)).unwrap();
    }
    let reg = ModelRegistry::open(dir.path()).unwrap();
    assert!(reg.lookup(5).is_ok());
    assert!(matches!(reg.lookup(10), Err(VaultError::HorizonUnavailable(10))));
}

#[test]
fn bundled_files_match_a_fresh_build() {
    let data = repo().join("data");
    assert_eq!(
        std::fs::read_to_string(data.join("demo_separable.csv")).unwrap(),
        separable_dataset(SEPARABLE_ROWS, DEMO_SEED).to_csv()
    );
    let g = golden();
    for h in HORIZONS {
        assert_eq!(
            std::fs::read_to_string(data.join(format!("synthetic_cohort_{h}y.csv"))).unwrap(),
            synthetic_cohort(h, SYNTHETIC_ROWS, DEMO_SEED).to_csv()
        );
        let (artifact, report) = build_horizon_model(h, DEMO_SEED, 1).unwrap();
        let file = std::fs::read(repo().join(format!("models/horizon-{h}.imbm"))).unwrap();
        assert!(artifact.to_bytes().unwrap() == file, "horizon {h} model differs from a rebuild");
        assert_eq!(g.for_horizon(h).unwrap().validation_auc, report.validation_auc);
    }
}
