//! Reference attribution models: the simple probabilistic (noisy-or) model,
//! logistic regression on channel counts, and first/last-touch rules.
//!
//! Every credit vector is non-negative and sums to 1 for a non-empty
//! sequence.

mod lr;
mod sp;

use serde::{Deserialize, Serialize};

use crate::seqdata::Sequence;

pub use lr::{lr_attribute, lr_fit, lr_predict, LrConfig, LrModel};
pub use sp::{sp_attribute, sp_fit, sp_predict, ChannelStat, ChannelStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    First,
    Last,
}

/// Full credit on the first or last touch point.
pub fn rule_attribute(seq: &Sequence, rule: Rule) -> Vec<f64> {
    let mut credit = vec![0.0; seq.len()];
    let pos = match rule {
        Rule::First => 0,
        Rule::Last => seq.len().wrapping_sub(1),
    };
    if let Some(c) = credit.get_mut(pos) {
        *c = 1.0;
    }
    credit
}

/// Scales non-negative scores to sum 1; uniform when they sum to 0.
pub(crate) fn proportional(scores: Vec<f64>) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.into_iter().map(|s| s / total).collect()
    } else {
        let n = scores.len() as f64;
        vec![1.0 / n; scores.len()]
    }
}

#[cfg(test)]
pub(crate) fn seq_of(channels: &[&str], converted: bool) -> Sequence {
    use crate::seqdata::TouchPoint;
    Sequence {
        id: "s#0".into(),
        user_id: "s".into(),
        points: channels
            .iter()
            .enumerate()
            .map(|(i, c)| TouchPoint::new(*c, i as i64 * 3600, false, 1.0, Vec::new()))
            .collect(),
        converted,
        conversion_time: None,
    }
}
