use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::proportional;
use crate::seqdata::Sequence;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    /// Sequences with at least one touch on the channel.
    pub exposures: usize,
    /// Converted sequences among them.
    pub conversions: usize,
    /// `conversions / exposures`, or 0 without exposures.
    pub prob: f64,
}

impl ChannelStat {
    pub fn observed(&self) -> bool {
        self.exposures > 0
    }
}

/// Per-channel empirical conversion rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channels: BTreeMap<String, ChannelStat>,
}

impl ChannelStats {
    /// Unseen channels get the zero stat (`observed()` is false).
    pub fn stat(&self, channel: &str) -> ChannelStat {
        self.channels.get(channel).copied().unwrap_or_default()
    }

    pub fn prob(&self, channel: &str) -> f64 {
        self.stat(channel).prob
    }
}

pub fn sp_fit(train: &[Sequence]) -> ChannelStats {
    let mut channels: BTreeMap<String, ChannelStat> = BTreeMap::new();
    for s in train {
        let mut seen: Vec<&str> = s.channels().collect();
        seen.sort_unstable();
        seen.dedup();
        for ch in seen {
            let st = channels.entry(ch.to_string()).or_default();
            st.exposures += 1;
            st.conversions += usize::from(s.converted);
        }
    }
    for st in channels.values_mut() {
        st.prob = st.conversions as f64 / st.exposures as f64;
    }
    ChannelStats { channels }
}

/// Noisy-or over the touch points: `1 - Π_j (1 - Pr(y=1 | c_j))`.
pub fn sp_predict(seq: &Sequence, stats: &ChannelStats) -> f64 {
    1.0 - seq.channels().map(|c| 1.0 - stats.prob(c)).product::<f64>()
}

/// Credit proportional to each touch point's channel probability.
pub fn sp_attribute(seq: &Sequence, stats: &ChannelStats) -> Vec<f64> {
    proportional(seq.channels().map(|c| stats.prob(c)).collect())
}
