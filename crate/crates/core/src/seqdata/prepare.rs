use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventRecord, Sequence};
use crate::error::{Error, Result};

/// Groups records per user, orders them by time (ties keep input order) and
/// cuts each user's stream right after every conversion event.
///
/// A conversion with no preceding touch in its segment produces nothing.
pub fn build_sequences(records: &[EventRecord]) -> Vec<Sequence> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_user: HashMap<&str, Vec<&EventRecord>> = HashMap::new();
    for r in records {
        by_user
            .entry(r.user_id.as_str())
            .or_insert_with(|| {
                order.push(r.user_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut out = Vec::new();
    for user in order {
        let mut events = by_user.remove(user).unwrap_or_default();
        events.sort_by_key(|r| r.point.timestamp);
        let mut segment = Vec::new();
        let mut next_id = 0usize;
        let mut emit = |points: Vec<_>, conversion_time: Option<i64>, out: &mut Vec<Sequence>| {
            out.push(Sequence {
                id: format!("{user}#{next_id}"),
                user_id: user.to_string(),
                points,
                converted: conversion_time.is_some(),
                conversion_time,
            });
            next_id += 1;
        };
        for r in events {
            if r.conversion {
                if segment.is_empty() {
                    log::debug!("user {user}: conversion at {} with no touch points", r.point.timestamp);
                    continue;
                }
                emit(std::mem::take(&mut segment), Some(r.point.timestamp), &mut out);
            } else {
                segment.push(r.point.clone());
            }
        }
        if !segment.is_empty() {
            emit(segment, None, &mut out);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_duration_days: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_len: 3,
            max_len: 20,
            max_duration_days: 14.0,
        }
    }
}

/// Keeps sequences whose length lies in `[min_len, max_len]` and whose span
/// from first to last touch is at most `max_duration_days`.
pub fn filter_sequences(seqs: Vec<Sequence>, cfg: &FilterConfig) -> Result<Vec<Sequence>> {
    if cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "min_len {} exceeds max_len {}",
            cfg.min_len, cfg.max_len
        )));
    }
    if !(cfg.max_duration_days >= 0.0) {
        return Err(Error::Config(format!("max_duration_days {}", cfg.max_duration_days)));
    }
    let max_secs = cfg.max_duration_days * 86_400.0;
    Ok(seqs
        .into_iter()
        .filter(|s| (cfg.min_len..=cfg.max_len).contains(&s.len()) && s.duration() as f64 <= max_secs)
        .collect())
}

/// Keeps every converted sequence and a uniform sample (without replacement)
/// of `floor(ratio * #converted)` non-converted ones. Input order is kept.
pub fn negative_sample(seqs: Vec<Sequence>, ratio: f64, seed: u64) -> Result<Vec<Sequence>> {
    if !(ratio > 0.0) {
        return Err(Error::Config(format!("sampling ratio must be positive, got {ratio}")));
    }
    let positives = seqs.iter().filter(|s| s.converted).count();
    let negatives: Vec<usize> = (0..seqs.len()).filter(|&i| !seqs[i].converted).collect();
    let target = ((ratio * positives as f64).floor() as usize).min(negatives.len());
    if positives == 0 && !negatives.is_empty() {
        log::warn!("no converted sequences; negative sampling keeps nothing");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; seqs.len()];
    for i in index::sample(&mut rng, negatives.len(), target) {
        keep[negatives[i]] = true;
    }
    Ok(seqs
        .into_iter()
        .enumerate()
        .filter(|(i, s)| s.converted || keep[*i])
        .map(|(_, s)| s)
        .collect())
}

/// Splits by whole sequence; `round(n * test_fraction)` go to the test side.
/// Both halves keep input order.
pub fn train_test_split(seqs: Vec<Sequence>, test_fraction: f64, seed: u64) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = seqs.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &perm[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = seqs.into_iter().enumerate().partition(|(i, _)| is_test[*i]);
    Ok((
        train.into_iter().map(|(_, s)| s).collect(),
        test.into_iter().map(|(_, s)| s).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthStat {
    pub length: usize,
    pub sequences: usize,
    pub converted: usize,
    pub conversion_rate: f64,
}

/// Sequence count and conversion rate per sequence length, ascending.
pub fn length_stats(seqs: &[Sequence]) -> Vec<LengthStat> {
    let mut counts: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for s in seqs {
        let e = counts.entry(s.len()).or_default();
        e.0 += 1;
        e.1 += usize::from(s.converted);
    }
    counts
        .into_iter()
        .map(|(length, (n, c))| LengthStat {
            length,
            sequences: n,
            converted: c,
            conversion_rate: c as f64 / n as f64,
        })
        .collect()
}
