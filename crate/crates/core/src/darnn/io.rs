use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DarnnConfig, DarnnParams, InputDims};
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "model.toml";
const PARAMS: &str = "params.ckpt";

/// Sidecar written next to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    /// Vocabulary file the model was trained against, relative to the model
    /// directory.
    pub vocab: String,
    pub dims: InputDims,
    pub config: DarnnConfig,
}

/// Writes `model.toml` and `params.ckpt` into `dir`, creating it if needed.
pub fn save_model(dir: &Path, params: &DarnnParams, vocab: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        vocab: vocab.to_string(),
        dims: params.dims(),
        config: params.config().clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    params.store().save(&dir.join(PARAMS))
}

pub fn load_model(dir: &Path) -> Result<(DarnnParams, ModelManifest)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version(format!(
            "model format {} (supported: {MODEL_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let store = ParamSet::load(&dir.join(PARAMS))?;
    let params = DarnnParams::from_store(&manifest.config, manifest.dims, store)?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darnn::{predict_encoded, EncodedSequence, Mode};

    fn dims() -> InputDims {
        InputDims {
            vocab_size: 7,
            num_fields: 2,
        }
    }

    #[test]
    fn round_trip_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [Mode::Darnn, Mode::Arnn] {
            let cfg = DarnnConfig {
                mode,
                hidden_size: 5,
                ..Default::default()
            };
            let p = DarnnParams::init(&cfg, dims(), 9).unwrap();
            let sub = dir.path().join(format!("{mode:?}"));
            save_model(&sub, &p, "../data/vocab.tsv").unwrap();
            let (q, m) = load_model(&sub).unwrap();
            assert_eq!(m.config, cfg);
            assert_eq!(m.vocab, "../data/vocab.tsv");
            let s = EncodedSequence {
                features: vec![vec![0, 4], vec![2, 6], vec![1, 5]],
                clicks: vec![false; 3],
                converted: false,
            };
            assert_eq!(predict_encoded(&p, &s).unwrap(), predict_encoded(&q, &s).unwrap());
        }
    }

    #[test]
    fn future_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = DarnnParams::init(&DarnnConfig::default(), dims(), 9).unwrap();
        save_model(dir.path(), &p, "vocab.tsv").unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("format_version = 1", "format_version = 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Version(_))));
    }

    #[test]
    fn config_checkpoint_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = DarnnParams::init(&DarnnConfig::default(), dims(), 9).unwrap();
        save_model(dir.path(), &p, "vocab.tsv").unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("hidden_size = 16", "hidden_size = 4");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Version(_))));
    }
}
