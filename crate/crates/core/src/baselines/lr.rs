use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::proportional;
use crate::error::{Error, Result};
use crate::seqdata::{Sequence, CHANNEL_FIELD, HOUR_FIELD};
use crate::tensor::PROB_EPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    /// Penalty `l2 / 2 * |w|^2` added to the mean cross-entropy; the bias is
    /// not penalized.
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Also count `field=value` tokens of non-channel features.
    pub side_features: bool,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            l2: 1e-3,
            epochs: 3000,
            learning_rate: 0.1,
            side_features: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    /// Feature name to column; channels are named `channel=<name>`.
    pub features: BTreeMap<String, usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub side_features: bool,
}

fn channel_key(ch: &str) -> String {
    format!("{CHANNEL_FIELD}={ch}")
}

fn tokens(seq: &Sequence, side: bool) -> impl Iterator<Item = String> + '_ {
    seq.points.iter().flat_map(move |p| {
        let side_tokens = p
            .features
            .iter()
            .filter(move |(f, _)| side && f != CHANNEL_FIELD && f != HOUR_FIELD)
            .map(|(f, v)| format!("{f}={v}"));
        std::iter::once(channel_key(&p.channel)).chain(side_tokens)
    })
}

impl LrModel {
    /// Token counts; tokens unseen in training are dropped.
    pub fn featurize(&self, seq: &Sequence) -> Vec<f64> {
        let mut x = vec![0.0; self.features.len()];
        for t in tokens(seq, self.side_features) {
            if let Some(&i) = self.features.get(&t) {
                x[i] += 1.0;
            }
        }
        x
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Coefficient of a channel, 0 if the channel was never seen.
    pub fn channel_weight(&self, channel: &str) -> f64 {
        self.features
            .get(&channel_key(channel))
            .map_or(0.0, |&i| self.weights[i])
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Full-batch gradient descent on mean cross-entropy plus L2. The seed only
/// sets the small random starting weights.
pub fn lr_fit(train: &[Sequence], cfg: &LrConfig, seed: u64) -> Result<LrModel> {
    if train.is_empty() {
        return Err(Error::Contract("logistic regression needs training data".into()));
    }
    let mut names: Vec<String> = train.iter().flat_map(|s| tokens(s, cfg.side_features)).collect();
    names.sort_unstable();
    names.dedup();
    let features: BTreeMap<String, usize> = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LrModel {
        weights: (0..features.len()).map(|_| rng.gen_range(-0.01..0.01)).collect(),
        features,
        bias: 0.0,
        side_features: cfg.side_features,
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|s| model.featurize(s)).collect();
    let ys: Vec<f64> = train.iter().map(Sequence::label).collect();
    let n = train.len() as f64;
    let d = model.weights.len();

    for epoch in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let p = sigmoid(model.logit(x));
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let r = p - y;
            gb += r;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        loss = loss / n + 0.5 * cfg.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "logistic regression loss {loss} at epoch {epoch}"
            )));
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
        }
        model.bias -= cfg.learning_rate * gb / n;
    }
    if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("logistic regression weights".into()));
    }
    Ok(model)
}

pub fn lr_predict(seq: &Sequence, model: &LrModel) -> f64 {
    sigmoid(model.logit(&model.featurize(seq)))
}

/// Credit proportional to the clamped channel coefficient `max(w, 0)`.
pub fn lr_attribute(seq: &Sequence, model: &LrModel) -> Vec<f64> {
    proportional(seq.channels().map(|c| model.channel_weight(c).max(0.0)).collect())
}
