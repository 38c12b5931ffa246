use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::seqdata::Sequence;

/// Sums touch-point credits per channel over converted sequences.
pub fn channel_credit(credits: &[Vec<f64>], seqs: &[Sequence]) -> Result<BTreeMap<String, f64>> {
    if credits.len() != seqs.len() {
        return Err(Error::Contract(format!(
            "{} credit vectors for {} sequences",
            credits.len(),
            seqs.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (c, s) in credits.iter().zip(seqs) {
        if c.len() != s.len() {
            return Err(Error::Contract(format!(
                "sequence {}: {} credits for {} touch points",
                s.id,
                c.len(),
                s.len()
            )));
        }
        if !s.converted {
            continue;
        }
        for (credit, ch) in c.iter().zip(s.channels()) {
            *out.entry(ch.to_string()).or_insert(0.0) += credit;
        }
    }
    Ok(out)
}

/// Total touch-point cost per channel.
pub fn channel_spend(seqs: &[Sequence]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for p in seqs.iter().flat_map(|s| &s.points) {
        *out.entry(p.channel.clone()).or_insert(0.0) += p.cost;
    }
    out
}

/// Effective cost per acquisition: total cost over converted sequences.
pub fn ecpa(seqs: &[Sequence]) -> Result<f64> {
    let conversions = seqs.iter().filter(|s| s.converted).count();
    if conversions == 0 {
        return Err(Error::UndefinedMetric("eCPA with zero conversions".into()));
    }
    let cost: f64 = seqs.iter().map(Sequence::total_cost).sum();
    Ok(cost / conversions as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoiEntry {
    pub credit: f64,
    pub spend: f64,
    pub roi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChannelRoi {
    pub channels: BTreeMap<String, RoiEntry>,
    /// Channels without spend; they take no part in allocation.
    pub excluded: Vec<String>,
}

/// `ROI_k = credit_k * V / spend_k` for every channel with positive spend.
pub fn compute_roi(credit: &BTreeMap<String, f64>, spend: &BTreeMap<String, f64>, value: f64) -> Result<ChannelRoi> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Config(format!("conversion value must be positive, got {value}")));
    }
    let mut out = ChannelRoi::default();
    let names: std::collections::BTreeSet<&String> = credit.keys().chain(spend.keys()).collect();
    for name in names {
        let c = credit.get(name).copied().unwrap_or(0.0);
        let s = spend.get(name).copied().unwrap_or(0.0);
        if s > 0.0 {
            out.channels.insert(
                name.clone(),
                RoiEntry {
                    credit: c,
                    spend: s,
                    roi: c * value / s,
                },
            );
        } else {
            log::warn!("channel {name} has no spend; excluded from allocation");
            out.excluded.push(name.clone());
        }
    }
    Ok(out)
}

/// Per-channel budgets. Channels absent from the plan have budget 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetPlan {
    pub total: f64,
    pub budgets: BTreeMap<String, f64>,
}

impl BudgetPlan {
    /// The same amount for every listed channel.
    pub fn uniform<'a>(channels: impl IntoIterator<Item = &'a str>, amount: f64) -> Self {
        let budgets: BTreeMap<String, f64> = channels.into_iter().map(|c| (c.to_string(), amount)).collect();
        BudgetPlan {
            total: amount * budgets.len() as f64,
            budgets,
        }
    }

    pub fn budget(&self, channel: &str) -> f64 {
        self.budgets.get(channel).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        BudgetPlan {
            total: self.total * alpha,
            budgets: self.budgets.iter().map(|(k, v)| (k.clone(), v * alpha)).collect(),
        }
    }
}

/// `b_k = ROI_k / Σ ROI * B`; uniform when every ROI is 0.
pub fn allocate_budget(roi: &ChannelRoi, total: f64) -> Result<BudgetPlan> {
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Config(format!("total budget must be positive, got {total}")));
    }
    if roi.channels.is_empty() {
        return Err(Error::Contract("no channel with spend to allocate budget to".into()));
    }
    let sum: f64 = roi.channels.values().map(|e| e.roi).sum();
    let n = roi.channels.len() as f64;
    if sum <= 0.0 {
        log::warn!("every channel ROI is 0; splitting budget uniformly");
    }
    let budgets = roi
        .channels
        .iter()
        .map(|(k, e)| {
            let b = if sum > 0.0 { e.roi / sum * total } else { total / n };
            (k.clone(), b)
        })
        .collect();
    Ok(BudgetPlan { total, budgets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::seq_of;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn credit_aggregation() {
        let s = seq_of(&["A", "B"], true);
        assert_eq!(
            channel_credit(&[vec![0.4, 0.6]], &[s]).unwrap(),
            map(&[("A", 0.4), ("B", 0.6)])
        );
        let s = seq_of(&["A", "A"], true);
        assert_eq!(channel_credit(&[vec![0.3, 0.7]], &[s]).unwrap(), map(&[("A", 1.0)]));
    }

    #[test]
    fn credit_two_sequences_and_unconverted_ignored() {
        let seqs = vec![
            seq_of(&["A", "B", "C"], true),
            seq_of(&["B", "C"], true),
            seq_of(&["A"], false),
        ];
        let credits = vec![vec![0.5, 0.25, 0.25], vec![0.5, 0.5], vec![1.0]];
        let got = channel_credit(&credits, &seqs).unwrap();
        assert_eq!(got, map(&[("A", 0.5), ("B", 0.75), ("C", 0.75)]));
        assert_eq!(got.values().sum::<f64>(), 2.0);
    }

    #[test]
    fn credit_misaligned() {
        let s = seq_of(&["A", "B"], true);
        assert!(matches!(
            channel_credit(&[vec![1.0]], std::slice::from_ref(&s)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(channel_credit(&[], &[s]), Err(Error::Contract(_))));
    }

    #[test]
    fn roi_examples() {
        let r = compute_roi(
            &map(&[("A", 2.0), ("B", 0.0)]),
            &map(&[("A", 5.0), ("B", 1.0), ("Z", 0.0)]),
            10.0,
        )
        .unwrap();
        assert_eq!(r.channels["A"].roi, 4.0);
        assert_eq!(r.channels["B"].roi, 0.0);
        assert_eq!(r.excluded, ["Z"]);
        assert!(matches!(compute_roi(&map(&[]), &map(&[]), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn roi_scales_with_value_and_allocation_does_not() {
        let credit = map(&[("A", 2.0), ("B", 1.0), ("C", 0.5)]);
        let spend = map(&[("A", 5.0), ("B", 1.0), ("C", 3.0)]);
        let r1 = compute_roi(&credit, &spend, 10.0).unwrap();
        let r2 = compute_roi(&credit, &spend, 30.0).unwrap();
        for k in ["A", "B", "C"] {
            assert!((r2.channels[k].roi - 3.0 * r1.channels[k].roi).abs() < 1e-12);
        }
        let (p1, p2) = (allocate_budget(&r1, 77.0).unwrap(), allocate_budget(&r2, 77.0).unwrap());
        for k in ["A", "B", "C"] {
            assert!((p1.budget(k) - p2.budget(k)).abs() < 1e-9);
        }
    }

    fn roi_of(rois: &[f64]) -> ChannelRoi {
        ChannelRoi {
            channels: rois
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    (
                        format!("c{i}"),
                        RoiEntry {
                            credit: *r,
                            spend: 1.0,
                            roi: *r,
                        },
                    )
                })
                .collect(),
            excluded: Vec::new(),
        }
    }

    #[test]
    fn allocation_examples() {
        let p = allocate_budget(&roi_of(&[3.0, 1.0]), 100.0).unwrap();
        assert_eq!((p.budget("c0"), p.budget("c1")), (75.0, 25.0));
        let p = allocate_budget(&roi_of(&[1.0, 1.0, 2.0]), 40.0).unwrap();
        assert_eq!((p.budget("c0"), p.budget("c1"), p.budget("c2")), (10.0, 10.0, 20.0));
        assert_eq!(allocate_budget(&roi_of(&[0.3]), 9.0).unwrap().budget("c0"), 9.0);
        let p = allocate_budget(&roi_of(&[0.0, 0.0]), 9.0).unwrap();
        assert_eq!(p.budget("c1"), 4.5);
        assert!(matches!(allocate_budget(&roi_of(&[1.0]), 0.0), Err(Error::Config(_))));
        assert!(matches!(allocate_budget(&roi_of(&[1.0]), -3.0), Err(Error::Config(_))));
    }

    #[test]
    fn ecpa_is_cost_per_conversion() {
        let seqs = vec![seq_of(&["a", "b"], true), seq_of(&["a"], false)];
        assert_eq!(ecpa(&seqs).unwrap(), 3.0);
        assert!(matches!(ecpa(&seqs[1..]), Err(Error::UndefinedMetric(_))));
    }
}
