//! Conversion-estimation metrics, channel ROI, proportional budget
//! allocation and the budget-constrained replay of a historical event log.

mod budget;
mod replay;

use crate::error::{Error, Result};
use crate::tensor::PROB_EPS;

pub use budget::{allocate_budget, channel_credit, channel_spend, compute_roi, ecpa, BudgetPlan, ChannelRoi, RoiEntry};
pub use replay::{
    events_from_sequences, read_events, replay, report_metrics, write_events, write_metrics_tsv, Metrics, ReplayEvent,
    ReplayReport, Replayer, BUDGET_FRACTIONS,
};

fn check_aligned(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Area under the ROC curve by rank sum, ties sharing their average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let rank = (i + j + 2) as f64 / 2.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("log-loss of zero predictions".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_undefined() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(auc(&[0.1], &[true, false]), Err(Error::Contract(_))));
    }

    #[test]
    fn logloss_examples() {
        assert!(logloss(&[1.0, 0.0], &[true, false]).unwrap() < 1e-6);
        assert!((logloss(&[0.5; 4], &[true, false, false, true]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((logloss(&[0.8], &[false]).unwrap() + 0.2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..8, any::<bool>()), 2..50)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 8.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            match auc(&scores, &labels) {
                Ok(a) => prop_assert!((a - brute_auc(&scores, &labels)).abs() < 1e-12),
                Err(Error::UndefinedMetric(_)) => prop_assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
