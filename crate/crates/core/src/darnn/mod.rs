//! Dual-attention recurrent conversion model.
//!
//! An LSTM encoder reads the embedded touch points, an LSTM decoder predicts
//! the click sequence from the final encoder state, and two attention heads
//! (impression-level over encoder states, click-level over decoder states)
//! are mixed by a learned gate λ before the conversion head. The attention
//! weights, mixed by the same λ, are the per-touch attribution credits.
//!
//! `Mode::Arnn` is the single-attention ablation: encoder and impression
//! attention only, with λ fixed at 0.

mod io;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{FeatureVocab, Sequence};
use crate::tensor::{init, ParamId, ParamSet};

pub use io::{load_model, save_model, ModelManifest, MODEL_FORMAT_VERSION};
pub use model::{
    attention, attribute, attribute_encoded, click_loss, conversion_loss, decode, embed, encode, forward, lambda_gate,
    predict_conversion, predict_encoded, ClickFeed, Forward, MlpIdsRef,
};
pub use train::{train_two_stage, EpochRecord, RiseDetector, Stage, TrainingCurves};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Darnn,
    Arnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarnnConfig {
    pub mode: Mode,
    /// Embedding width of every field.
    pub embedding_size: usize,
    /// Width of both encoder and decoder states.
    pub hidden_size: usize,
    pub energy_hidden: usize,
    pub lambda_hidden: usize,
    pub click_hidden: usize,
    pub conv_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs_click: usize,
    pub max_epochs_conv: usize,
}

impl Default for DarnnConfig {
    fn default() -> Self {
        DarnnConfig {
            mode: Mode::Darnn,
            embedding_size: 8,
            hidden_size: 16,
            energy_hidden: 16,
            lambda_hidden: 16,
            click_hidden: 16,
            conv_hidden: 16,
            learning_rate: 1e-2,
            batch_size: 16,
            max_epochs_click: 10,
            max_epochs_conv: 40,
        }
    }
}

impl DarnnConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("energy_hidden", self.energy_hidden),
            ("lambda_hidden", self.lambda_hidden),
            ("click_hidden", self.click_hidden),
            ("conv_hidden", self.conv_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Sizes the model takes from the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub vocab_size: usize,
    pub num_fields: usize,
}

impl InputDims {
    pub fn of(vocab: &FeatureVocab) -> Self {
        InputDims {
            vocab_size: vocab.size(),
            num_fields: vocab.num_fields(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    pub w: ParamId,
    pub b: ParamId,
}

/// One tanh hidden layer and a linear scalar output.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MlpIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DualIds {
    pub decoder: LstmIds,
    pub click: MlpIds,
    pub energy_c2v: MlpIds,
    pub lambda: MlpIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamIds {
    pub embedding: ParamId,
    pub encoder: LstmIds,
    pub energy_i2v: MlpIds,
    pub conv: MlpIds,
    /// Absent in ARNN mode.
    pub dual: Option<DualIds>,
}

/// Every trainable tensor of the model plus the layout needed to use them.
#[derive(Clone, Debug)]
pub struct DarnnParams {
    config: DarnnConfig,
    dims: InputDims,
    store: ParamSet,
    ids: ParamIds,
}

struct Builder<'a> {
    store: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let t = init::glorot_uniform(self.rng, rows, cols);
        self.store.add(name, t)
    }

    fn bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.store.add(name, init::zeros(len))
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Result<LstmIds> {
        let w = self.matrix(&format!("{name}.w"), 4 * hidden, input + hidden)?;
        let mut b = init::zeros(4 * hidden);
        // Gate order is [input, forget, candidate, output].
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = self.store.add(format!("{name}.b"), b)?;
        Ok(LstmIds { w, b })
    }

    fn mlp(&mut self, name: &str, input: usize, hidden: usize) -> Result<MlpIds> {
        Ok(MlpIds {
            w1: self.matrix(&format!("{name}.w1"), hidden, input)?,
            b1: self.bias(&format!("{name}.b1"), hidden)?,
            w2: self.matrix(&format!("{name}.w2"), 1, hidden)?,
            b2: self.bias(&format!("{name}.b2"), 1)?,
        })
    }
}

impl DarnnParams {
    /// Fresh parameters: Glorot-uniform weights, zero biases, LSTM forget
    /// biases at 1.
    pub fn init(config: &DarnnConfig, dims: InputDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.num_fields == 0 || dims.vocab_size < dims.num_fields {
            return Err(Error::Config(format!("bad input dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: ParamSet::new(),
            rng: &mut rng,
        };
        let (e, h) = (config.embedding_size, config.hidden_size);
        let x = e * dims.num_fields;

        let embedding = b.matrix("embedding", dims.vocab_size, e)?;
        let encoder = b.lstm("encoder", x, h)?;
        let dual = match config.mode {
            Mode::Darnn => Some(DualIds {
                decoder: b.lstm("decoder", 1 + h, h)?,
                click: b.mlp("click", 1 + h, config.click_hidden)?,
                energy_c2v: b.mlp("energy_c2v", h + x, config.energy_hidden)?,
                lambda: b.mlp("lambda", x + h, config.lambda_hidden)?,
            }),
            Mode::Arnn => None,
        };
        let energy_i2v = b.mlp("energy_i2v", h + x, config.energy_hidden)?;
        let conv = b.mlp("conv", h, config.conv_hidden)?;
        Ok(DarnnParams {
            config: config.clone(),
            dims,
            store: b.store,
            ids: ParamIds {
                embedding,
                encoder,
                energy_i2v,
                conv,
                dual,
            },
        })
    }

    /// Adopts tensors loaded from a checkpoint after checking that names and
    /// shapes match what `config` and `dims` produce.
    pub fn from_store(config: &DarnnConfig, dims: InputDims, store: ParamSet) -> Result<Self> {
        let mut fresh = Self::init(config, dims, 0)?;
        if !fresh.store.same_layout(&store) {
            return Err(Error::Version(
                "checkpoint tensors do not match the model configuration".into(),
            ));
        }
        fresh.store = store;
        Ok(fresh)
    }

    pub fn config(&self) -> &DarnnConfig {
        &self.config
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn store(&self) -> &ParamSet {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamSet {
        &mut self.store
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }

    /// Parameter group of a tensor: the name up to the first dot.
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}

/// A sequence mapped onto vocabulary rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    /// Per touch point, one embedding row per vocabulary field.
    pub features: Vec<Vec<usize>>,
    pub clicks: Vec<bool>,
    pub converted: bool,
}

impl EncodedSequence {
    pub fn new(seq: &Sequence, vocab: &FeatureVocab) -> Self {
        EncodedSequence {
            features: seq.points.iter().map(|p| vocab.encode(p)).collect(),
            clicks: seq.points.iter().map(|p| p.click).collect(),
            converted: seq.converted,
        }
    }

    pub fn encode_all(seqs: &[Sequence], vocab: &FeatureVocab) -> Vec<Self> {
        seqs.iter().map(|s| Self::new(s, vocab)).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label(&self) -> f64 {
        if self.converted {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-sequence attention, gate and credit, plus the model's predictions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributionRecord {
    pub a_i2v: Vec<f64>,
    /// `None` in ARNN mode.
    pub a_c2v: Option<Vec<f64>>,
    pub lambda: f64,
    pub attr: Vec<f64>,
    pub conversion_prob: f64,
    /// Predicted click probabilities; empty in ARNN mode.
    pub click_probs: Vec<f64>,
}

impl AttributionRecord {
    pub(crate) fn combine(
        a_i2v: Vec<f64>,
        a_c2v: Option<Vec<f64>>,
        lambda: f64,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let attr = match &a_c2v {
            Some(c) => a_i2v
                .iter()
                .zip(c)
                .map(|(i, c)| (1.0 - lambda) * i + lambda * c)
                .collect(),
            None => a_i2v.clone(),
        };
        (attr, a_i2v, a_c2v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> InputDims {
        InputDims {
            vocab_size: 10,
            num_fields: 3,
        }
    }

    #[test]
    fn arnn_has_no_decoder_or_gate() {
        let cfg = DarnnConfig {
            mode: Mode::Arnn,
            ..Default::default()
        };
        let p = DarnnParams::init(&cfg, dims(), 1).unwrap();
        assert!(p.store().id("decoder.w").is_none());
        assert!(p.store().id("lambda.w1").is_none());
        assert!(p.store().id("energy_c2v.w1").is_none());
        assert!(p.store().id("energy_i2v.w1").is_some());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let p = DarnnParams::init(&DarnnConfig::default(), dims(), 1).unwrap();
        let b = p.store().value(p.store().id("encoder.b").unwrap()).data();
        let h = 16;
        assert!(b[..h].iter().all(|&v| v == 0.0));
        assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(b[2 * h..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sizes_rejected() {
        let cfg = DarnnConfig {
            hidden_size: 0,
            ..Default::default()
        };
        assert!(matches!(DarnnParams::init(&cfg, dims(), 1), Err(Error::Config(_))));
    }

    #[test]
    fn layout_mismatch_is_version_error() {
        let small = DarnnParams::init(&DarnnConfig::default(), dims(), 1).unwrap();
        let cfg = DarnnConfig {
            hidden_size: 8,
            ..Default::default()
        };
        let err = DarnnParams::from_store(&cfg, dims(), small.store().clone()).unwrap_err();
        assert!(matches!(err, Error::Version(_)));
    }

    #[test]
    fn attr_is_lambda_mix() {
        let (attr, _, _) = AttributionRecord::combine(vec![0.2, 0.8], Some(vec![0.6, 0.4]), 0.5);
        assert!((attr[0] - 0.4).abs() < 1e-15 && (attr[1] - 0.6).abs() < 1e-15);
    }
}
