use medagent_core::rng::SplitMix64;
use medagent_core::testkit::random_artifact;
use medagent_core::vault::{load, save, ModelArtifact, VaultError};

fn random_input(rng: &mut SplitMix64, width: usize) -> Vec<f64> {
    (0..width).map(|_| rng.uniform(-2.0, 2.0)).collect()
}

#[test]
fn random_artifacts_roundtrip_and_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let a = random_artifact(seed);
        let path = dir.path().join(format!("m{seed}.imbm"));
        let written = save(&a, &path).unwrap();
        assert_eq!(written, std::fs::metadata(&path).unwrap().len());
        let b = load(&path).unwrap();
        assert_eq!(a, b, "seed {seed}");
        let mut rng = SplitMix64::new(seed);
        for _ in 0..5 {
            let x = random_input(&mut rng, a.encoder.width);
            let act = a.setting.hidden_activation;
            assert_eq!(
                a.weights.forward(&x, act).unwrap().to_bits(),
                b.weights.forward(&x, act).unwrap().to_bits()
            );
        }
    }
}

#[test]
fn saving_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_artifact(7);
    save(&a, &dir.path().join("a.imbm")).unwrap();
    save(&a, &dir.path().join("b.imbm")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a.imbm")).unwrap(),
        std::fs::read(dir.path().join("b.imbm")).unwrap()
    );
}

#[test]
fn every_single_byte_corruption_is_detected() {
    for seed in 0..3 {
        let bytes = random_artifact(seed).to_bytes().unwrap();
        for pos in 4..bytes.len() {
            for flip in [0x01u8, 0x80, 0xFF] {
                let mut bad = bytes.clone();
                bad[pos] ^= flip;
                match ModelArtifact::from_bytes(&bad) {
                    Err(VaultError::ChecksumMismatch) => {}
                    other => panic!("seed {seed} byte {pos} flip {flip:#x}: {other:?}"),
                }
            }
        }
    }
}

#[test]
fn missing_file_reports_path() {
    let err = load(std::path::Path::new("/nonexistent/model.imbm")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/model.imbm"));
}
