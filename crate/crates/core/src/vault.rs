//! Model files and the on-disk model registry.
//!
//! # File format (`.imbm`, version 1)
//!
//! ```text
//! offset  size  content
//! 0       4     magic "IMBM"
//! 4       4     format version, u32 little-endian
//! 8       4     metadata length N, u32 little-endian
//! 12      N     metadata: canonical UTF-8 JSON, object keys sorted
//! 12+N    8*P   weights payload: f64 little-endian; per layer, the
//!               row-major (outputs x inputs) weight matrix then the bias
//! end-8   8     FNV-1a 64 of bytes [4, end-8), u64 little-endian
//! ```
//!
//! Metadata keys: `catalog`, `encoder`, `horizon` (5, 10, 15 or null),
//! `layers` (list of `[inputs, outputs]`), `provenance`, `setting`.
//!
//! Load order: magic, checksum, version, then structure. Any corrupted byte
//! after the magic therefore reports [`VaultError::ChecksumMismatch`].

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{CatalogError, PredictorCatalog};
use crate::dataset::Encoder;
use crate::hyper::HyperparameterSetting;
use crate::network::{DenseLayer, NetworkWeights};

pub const MAGIC: &[u8; 4] = b"IMBM";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "imbm";
pub const HORIZONS: [u32; 3] = [5, 10, 15];

const HEADER_LEN: usize = 12;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum VaultError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file checksum mismatch")]
    ChecksumMismatch,
    #[error("encoder width {encoder} does not match network input width {weights}")]
    EncoderWidthMismatch { encoder: usize, weights: usize },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("invalid model: {0}")]
    InvalidArtifact(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no model registered for the {0}-year horizon")]
    HorizonUnavailable(u32),
}

impl VaultError {
    pub fn code(&self) -> &'static str {
        match self {
            VaultError::BadMagic => "BadMagic",
            VaultError::UnsupportedVersion(_) => "UnsupportedVersion",
            VaultError::ChecksumMismatch => "ChecksumMismatch",
            VaultError::EncoderWidthMismatch { .. } => "EncoderWidthMismatch",
            VaultError::Malformed(_) => "Malformed",
            VaultError::InvalidArtifact(_) => "InvalidArtifact",
            VaultError::Io { .. } => "StorageError",
            VaultError::HorizonUnavailable(_) => "HorizonUnavailable",
        }
    }
}

/// A trained model with everything needed to serve predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub horizon: Option<u32>,
    pub setting: HyperparameterSetting,
    pub encoder: Encoder,
    pub catalog: PredictorCatalog,
    pub weights: NetworkWeights,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    catalog: PredictorCatalog,
    encoder: Encoder,
    horizon: Option<u32>,
    layers: Vec<(usize, usize)>,
    provenance: String,
    setting: HyperparameterSetting,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Re-insert object keys in sorted order so output is canonical whatever
/// map ordering serde_json was built with.
fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

impl ModelArtifact {
    pub fn new(
        horizon: Option<u32>,
        setting: HyperparameterSetting,
        encoder: Encoder,
        catalog: PredictorCatalog,
        weights: NetworkWeights,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            horizon,
            setting,
            encoder,
            catalog,
            weights,
            provenance: provenance.into(),
        }
    }

    pub fn validate(&self) -> Result<(), VaultError> {
        if self.format_version != FORMAT_VERSION {
            return Err(VaultError::UnsupportedVersion(self.format_version));
        }
        if let Some(h) = self.horizon {
            if !HORIZONS.contains(&h) {
                return Err(VaultError::InvalidArtifact(format!("horizon {h} is not one of 5, 10, 15")));
            }
        }
        if !self.weights.is_well_formed() {
            return Err(VaultError::InvalidArtifact("layer dimensions do not chain to one output".into()));
        }
        if self.encoder.width != self.encoder.computed_width() {
            return Err(VaultError::InvalidArtifact("encoder width disagrees with its columns".into()));
        }
        if self.encoder.width != self.weights.input_width() {
            return Err(VaultError::EncoderWidthMismatch {
                encoder: self.encoder.width,
                weights: self.weights.input_width(),
            });
        }
        if !self.catalog.is_well_formed() || !self.catalog.matches_encoder(&self.encoder) {
            return Err(VaultError::InvalidArtifact("predictor catalog does not match the encoder".into()));
        }
        self.setting
            .validate()
            .map_err(|e| VaultError::InvalidArtifact(e.to_string()))?;
        if self.setting.hidden_layer_count + 1 != self.weights.layers.len() {
            return Err(VaultError::InvalidArtifact("layer count disagrees with the setting".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, VaultError> {
        self.validate()?;
        let meta = Metadata {
            catalog: self.catalog.clone(),
            encoder: self.encoder.clone(),
            horizon: self.horizon,
            layers: self.weights.dims(),
            provenance: self.provenance.clone(),
            setting: self.setting.clone(),
        };
        let value = serde_json::to_value(&meta).map_err(|e| VaultError::InvalidArtifact(e.to_string()))?;
        let json = serde_json::to_string(&canonical(value)).map_err(|e| VaultError::InvalidArtifact(e.to_string()))?;
        let meta_len = u32::try_from(json.len()).map_err(|_| VaultError::InvalidArtifact("metadata too large".into()))?;

        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 8 * self.weights.n_params() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for layer in &self.weights.layers {
            for v in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&out[MAGIC.len()..]);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VaultError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(VaultError::BadMagic);
        }
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(VaultError::ChecksumMismatch);
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        if fnv1a64(&bytes[MAGIC.len()..body_end]) != stored {
            return Err(VaultError::ChecksumMismatch);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(VaultError::UnsupportedVersion(version));
        }
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let meta_end = HEADER_LEN
            .checked_add(meta_len)
            .filter(|&e| e <= body_end)
            .ok_or_else(|| VaultError::Malformed("metadata length exceeds file".into()))?;
        let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| VaultError::Malformed(format!("metadata: {e}")))?;

        let payload = &bytes[meta_end..body_end];
        let n_values: usize = meta.layers.iter().map(|&(i, o)| i * o + o).sum();
        if payload.len() != 8 * n_values {
            return Err(VaultError::Malformed(format!(
                "payload holds {} bytes, layer dimensions need {}",
                payload.len(),
                8 * n_values
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let layers = meta
            .layers
            .iter()
            .map(|&(inputs, outputs)| DenseLayer {
                inputs,
                outputs,
                weights: values.by_ref().take(inputs * outputs).collect(),
                bias: values.by_ref().take(outputs).collect(),
            })
            .collect();

        let artifact = ModelArtifact {
            format_version: version,
            horizon: meta.horizon,
            setting: meta.setting,
            encoder: meta.encoder,
            catalog: meta.catalog,
            weights: NetworkWeights { layers },
            provenance: meta.provenance,
        };
        artifact.validate().map_err(|e| match e {
            VaultError::InvalidArtifact(msg) => VaultError::Malformed(msg),
            other => other,
        })?;
        Ok(artifact)
    }

    /// Probability of the positive class for a complete answer set.
    pub fn predict(&self, answers: &HashMap<String, String>) -> Result<f64, CatalogError> {
        self.catalog.check_answers(answers)?;
        let x = self
            .encoder
            .encode_values(answers)
            .expect("catalog values are a subset of encoder categories");
        Ok(self
            .weights
            .forward(&x, self.setting.hidden_activation)
            .expect("encoder width matches network"))
    }
}

/// Write `a` to `path`, returning the byte count.
pub fn save(a: &ModelArtifact, path: &Path) -> Result<u64, VaultError> {
    let bytes = a.to_bytes()?;
    let io = |source| VaultError::Io {
        path: path.to_owned(),
        source,
    };
    let tmp = path.with_extension(format!("{FILE_EXTENSION}.tmp"));
    std::fs::write(&tmp, &bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<ModelArtifact, VaultError> {
    let bytes = std::fs::read(path).map_err(|source| VaultError::Io {
        path: path.to_owned(),
        source,
    })?;
    ModelArtifact::from_bytes(&bytes)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegistryEntry {
    pub horizon: u32,
    pub provenance: String,
    pub predictors: usize,
    pub path: PathBuf,
}

/// Horizon-keyed models loaded from a directory of `.imbm` files.
#[derive(Debug)]
pub struct ModelRegistry {
    dir: PathBuf,
    models: RwLock<BTreeMap<u32, (PathBuf, Arc<ModelArtifact>)>>,
}

impl ModelRegistry {
    /// Load every horizon-tagged model in `dir`. Files without a horizon
    /// are skipped; when two files claim a horizon the first by name wins.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, VaultError> {
        let dir = dir.into();
        let io = |source| VaultError::Io {
            path: dir.clone(),
            source,
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == FILE_EXTENSION))
            .collect();
        paths.sort();

        let mut models = BTreeMap::new();
        for path in paths {
            let artifact = load(&path)?;
            match artifact.horizon {
                Some(h) if models.contains_key(&h) => {
                    tracing::warn!(path = %path.display(), horizon = h, "duplicate horizon; ignoring");
                }
                Some(h) => {
                    models.insert(h, (path, Arc::new(artifact)));
                }
                None => {}
            }
        }
        Ok(Self {
            dir,
            models: RwLock::new(models),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lookup(&self, horizon: u32) -> Result<Arc<ModelArtifact>, VaultError> {
        self.models
            .read()
            .get(&horizon)
            .map(|(_, a)| Arc::clone(a))
            .ok_or(VaultError::HorizonUnavailable(horizon))
    }

    pub fn horizons(&self) -> Vec<u32> {
        self.models.read().keys().copied().collect()
    }

    pub fn list(&self) -> Vec<RegistryEntry> {
        self.models
            .read()
            .iter()
            .map(|(&horizon, (path, a))| RegistryEntry {
                horizon,
                provenance: a.provenance.clone(),
                predictors: a.catalog.len(),
                path: path.clone(),
            })
            .collect()
    }

    /// Persist `a` as `horizon-<h>.imbm` and make it the served model for
    /// its horizon.
    pub fn register(&self, a: ModelArtifact) -> Result<PathBuf, VaultError> {
        let h = a
            .horizon
            .ok_or_else(|| VaultError::InvalidArtifact("only horizon models can be registered".into()))?;
        let path = self.dir.join(format!("horizon-{h}.{FILE_EXTENSION}"));
        let mut models = self.models.write();
        save(&a, &path)?;
        models.insert(h, (path.clone(), Arc::new(a)));
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, parse_csv};
    use crate::network::init_weights;

    fn artifact() -> ModelArtifact {
        let d = parse_csv(b"a,b,y\nx,p,0\nx,q,1\nz,p,0\nz,r,1\n", "y").unwrap();
        let (_, encoder) = encode(&d);
        let setting = HyperparameterSetting {
            hidden_layer_count: 1,
            hidden_units: 3,
            ..Default::default()
        };
        let weights = init_weights(&setting, encoder.width, 17);
        let catalog = PredictorCatalog::from_encoder(&encoder);
        ModelArtifact::new(Some(5), setting, encoder, catalog, weights, "unit test")
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn roundtrip_and_determinism() {
        let a = artifact();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes, a.to_bytes().unwrap());
        assert_eq!(&bytes[..4], b"IMBM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let b = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metadata_keys_sorted() {
        let bytes = artifact().to_bytes().unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        let keys = ["\"catalog\"", "\"encoder\"", "\"horizon\"", "\"layers\"", "\"provenance\"", "\"setting\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = artifact().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(ModelArtifact::from_bytes(&bytes), Err(VaultError::BadMagic)));
        assert!(matches!(ModelArtifact::from_bytes(b"IM"), Err(VaultError::BadMagic)));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = artifact().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        let end = bytes.len() - 8;
        let sum = fnv1a64(&bytes[4..end]);
        bytes[end..].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(ModelArtifact::from_bytes(&bytes), Err(VaultError::UnsupportedVersion(999))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = artifact().to_bytes().unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 9, 20, 13, 5] {
            assert!(
                matches!(ModelArtifact::from_bytes(&bytes[..cut]), Err(VaultError::ChecksumMismatch)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn width_mismatch_rejected_on_save() {
        let mut a = artifact();
        a.weights = init_weights(&a.setting, a.encoder.width + 1, 1);
        assert!(matches!(a.to_bytes(), Err(VaultError::EncoderWidthMismatch { .. })));
    }

    #[test]
    fn width_mismatch_rejected_on_load() {
        // Build a file by hand whose weights are one input wider than the
        // encoder, with a valid checksum.
        let a = artifact();
        let wide = init_weights(&a.setting, a.encoder.width + 1, 1);
        let meta = Metadata {
            catalog: a.catalog.clone(),
            encoder: a.encoder.clone(),
            horizon: a.horizon,
            layers: wide.dims(),
            provenance: a.provenance.clone(),
            setting: a.setting.clone(),
        };
        let json = serde_json::to_string(&meta).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json.as_bytes());
        for l in &wide.layers {
            for v in l.weights.iter().chain(&l.bias) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a64(&bytes[4..]);
        bytes.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(VaultError::EncoderWidthMismatch { encoder: 5, weights: 6 })
        ));
    }

    #[test]
    fn registry_lookup_and_missing_horizon() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ModelRegistry::open(dir.path()).unwrap();
        assert!(matches!(reg.lookup(5), Err(VaultError::HorizonUnavailable(5))));
        let path = reg.register(artifact()).unwrap();
        assert_eq!(path.file_name().unwrap(), "horizon-5.imbm");
        assert_eq!(reg.lookup(5).unwrap().provenance, "unit test");

        let reopened = ModelRegistry::open(dir.path()).unwrap();
        assert_eq!(reopened.horizons(), vec![5]);
        std::fs::remove_file(&path).unwrap();
        let emptied = ModelRegistry::open(dir.path()).unwrap();
        assert!(matches!(emptied.lookup(5), Err(VaultError::HorizonUnavailable(5))));
    }

    #[test]
    fn predict_checks_answers() {
        let a = artifact();
        let mut answers: HashMap<String, String> = HashMap::new();
        answers.insert("a".into(), "x".into());
        assert_eq!(a.predict(&answers).unwrap_err().code(), "MissingPredictor");
        answers.insert("b".into(), "q".into());
        let p = a.predict(&answers).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}
