use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{click_loss, conversion_loss, forward, ClickFeed};
use super::{DarnnConfig, DarnnParams, EncodedSequence, InputDims, Mode};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{AdamConfig, Graph, Optimizer};

/// Fires once the observed loss has risen on two successive epochs.
#[derive(Clone, Debug, Default)]
pub struct RiseDetector {
    prev: Option<f64>,
    rises: usize,
}

impl RiseDetector {
    pub fn observe(&mut self, loss: f64) -> bool {
        let rose = self.prev.is_some_and(|p| loss > p);
        self.rises = if rose { self.rises + 1 } else { 0 };
        self.prev = Some(loss);
        self.rises >= 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Click loss only.
    Click,
    /// Click plus conversion loss.
    Joint,
}

/// Losses after one epoch. Click losses are per touch point, conversion
/// losses per sequence; the validation click loss is teacher-forced and the
/// validation conversion loss uses predicted clicks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based, counted across both stages.
    pub epoch: usize,
    pub stage: Stage,
    pub train_click_loss: Option<f64>,
    pub train_conv_loss: Option<f64>,
    pub val_click_loss: Option<f64>,
    pub val_conv_loss: f64,
    /// Optimizer steps so far whose objective included the conversion loss.
    pub conv_updates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingCurves {
    pub epochs: Vec<EpochRecord>,
    /// Number of click-only epochs; joint training starts after it.
    pub stage_boundary: usize,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

fn opt_tsv(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl TrainingCurves {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epoch\tstage\ttrain_click_loss\ttrain_conv_loss\tval_click_loss\tval_conv_loss\tconv_updates\tbest"
        )?;
        for e in &self.epochs {
            let stage = match e.stage {
                Stage::Click => "click",
                Stage::Joint => "joint",
            };
            writeln!(
                w,
                "{}\t{stage}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                e.epoch,
                opt_tsv(e.train_click_loss),
                opt_tsv(e.train_conv_loss),
                opt_tsv(e.val_click_loss),
                e.val_conv_loss,
                e.conv_updates,
                u8::from(e.epoch == self.best_epoch)
            )?;
        }
        Ok(())
    }
}

/// Length buckets; within each, sequences are shuffled and chunked, then the
/// resulting batches are shuffled.
fn make_batches(buckets: &BTreeMap<usize, Vec<usize>>, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    for idx in buckets.values() {
        let mut idx = idx.clone();
        idx.shuffle(rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

#[derive(Debug)]
struct EpochLoss {
    click: f64,
    conv: f64,
}

/// Runs one epoch of updates and returns mean training losses.
fn run_epoch(
    params: &mut DarnnParams,
    data: &[EncodedSequence],
    batches: &[Vec<usize>],
    stage: Stage,
    opt: &mut Optimizer,
    epoch: usize,
) -> Result<EpochLoss> {
    let dual = params.mode() == Mode::Darnn;
    let joint = stage == Stage::Joint;
    let (mut click_sum, mut conv_sum, mut touches) = (0.0, 0.0, 0usize);
    for (b, batch) in batches.iter().enumerate() {
        let grads = {
            let mut g = Graph::new(params.store());
            let mut total = None;
            for &i in batch {
                let s = &data[i];
                let f = forward(&mut g, params, s, ClickFeed::Teacher(&s.clicks), joint)?;
                let mut loss = None;
                if dual {
                    let lc = click_loss(&mut g, &f.click_probs, &s.clicks)?;
                    click_sum += g.scalar(lc);
                    loss = Some(lc);
                }
                if joint {
                    let p = f.conversion_prob.expect("conversion head requested");
                    let lv = conversion_loss(&mut g, p, s.converted)?;
                    conv_sum += g.scalar(lv);
                    loss = Some(match loss {
                        Some(l) => g.add(l, lv)?,
                        None => lv,
                    });
                }
                touches += s.len();
                if let Some(l) = loss {
                    total = Some(match total {
                        Some(t) => g.add(t, l)?,
                        None => l,
                    });
                }
            }
            let Some(total) = total else { continue };
            let value = g.scalar(total);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {value} in epoch {epoch}, batch {b} (sequences {batch:?})"
                )));
            }
            g.backward(total)?
        };
        params.store_mut().accumulate(&grads);
        opt.step(params.store_mut());
        if !params.store().all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after epoch {epoch}, batch {b} (sequences {batch:?})"
            )));
        }
    }
    let n: usize = batches.iter().map(Vec::len).sum();
    Ok(EpochLoss {
        click: click_sum / touches.max(1) as f64,
        conv: conv_sum / n.max(1) as f64,
    })
}

/// Mean teacher-forced click loss per touch and mean conversion loss per
/// sequence with predicted clicks.
fn evaluate(params: &DarnnParams, data: &[EncodedSequence]) -> Result<(Option<f64>, f64)> {
    let dual = params.mode() == Mode::Darnn;
    let (mut click, mut conv, mut touches) = (0.0, 0.0, 0usize);
    for s in data {
        if dual {
            let mut g = Graph::new(params.store());
            let f = forward(&mut g, params, s, ClickFeed::Teacher(&s.clicks), false)?;
            let l = click_loss(&mut g, &f.click_probs, &s.clicks)?;
            click += g.scalar(l);
            touches += s.len();
        }
        let mut g = Graph::new(params.store());
        let f = forward(&mut g, params, s, ClickFeed::Predicted, true)?;
        let l = conversion_loss(
            &mut g,
            f.conversion_prob.expect("conversion head requested"),
            s.converted,
        )?;
        conv += g.scalar(l);
    }
    let n = data.len().max(1) as f64;
    let click = dual.then(|| click / touches.max(1) as f64);
    Ok((click, conv / n))
}

/// Two-stage training: click loss alone until the validation click loss
/// rises twice in a row (or `max_epochs_click`), then click plus conversion
/// loss until the validation conversion loss does the same (or
/// `max_epochs_conv`). Returns the parameters of the joint epoch with the
/// lowest validation conversion loss. ARNN has no click objective and starts
/// directly with the conversion stage.
///
/// An empty validation set falls back to the training set.
pub fn train_two_stage(
    train: &[EncodedSequence],
    val: &[EncodedSequence],
    config: &DarnnConfig,
    dims: InputDims,
    seed: u64,
) -> Result<(DarnnParams, TrainingCurves)> {
    if !train.iter().any(|s| s.converted) || train.iter().all(|s| s.converted) {
        return Err(Error::Contract(
            "training set needs at least one converted and one non-converted sequence".into(),
        ));
    }
    if let Some(i) = train.iter().chain(val).position(EncodedSequence::is_empty) {
        return Err(Error::Contract(format!("sequence {i} is empty")));
    }
    let val = if val.is_empty() {
        log::warn!("empty validation set; convergence is judged on training loss");
        train
    } else {
        val
    };

    let mut params = DarnnParams::init(config, dims, derive_seed(seed, "init"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut opt = Optimizer::adam(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        params.store(),
    );
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        buckets.entry(s.len()).or_default().push(i);
    }

    let mut curves = TrainingCurves::default();
    let mut conv_updates = 0;
    let mut best: Option<(f64, DarnnParams)> = None;

    let stages: &[Stage] = match config.mode {
        Mode::Darnn => &[Stage::Click, Stage::Joint],
        Mode::Arnn => &[Stage::Joint],
    };
    for &stage in stages {
        let max_epochs = match stage {
            Stage::Click => config.max_epochs_click,
            Stage::Joint => config.max_epochs_conv,
        };
        let mut rule = RiseDetector::default();
        for _ in 0..max_epochs {
            let epoch = curves.epochs.len() + 1;
            let batches = make_batches(&buckets, config.batch_size, &mut rng);
            let loss = run_epoch(&mut params, train, &batches, stage, &mut opt, epoch)?;
            if stage == Stage::Joint {
                conv_updates += batches.len();
            }
            let (val_click, val_conv) = evaluate(&params, val)?;
            let record = EpochRecord {
                epoch,
                stage,
                train_click_loss: (params.mode() == Mode::Darnn).then_some(loss.click),
                train_conv_loss: (stage == Stage::Joint).then_some(loss.conv),
                val_click_loss: val_click,
                val_conv_loss: val_conv,
                conv_updates,
            };
            log::info!("{record:?}");
            curves.epochs.push(record);
            let watched = match stage {
                Stage::Click => val_click.unwrap_or(0.0),
                Stage::Joint => {
                    if best.as_ref().is_none_or(|(b, _)| val_conv < *b) {
                        best = Some((val_conv, params.clone()));
                        curves.best_epoch = epoch;
                    }
                    val_conv
                }
            };
            if rule.observe(watched) {
                break;
            }
        }
        if stage == Stage::Click {
            curves.stage_boundary = curves.epochs.len();
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((params, curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rise_rule_needs_two_successive_rises() {
        let mut r = RiseDetector::default();
        let fired: Vec<bool> = [5.0, 4.0, 4.5, 4.2, 4.3, 4.4].iter().map(|&l| r.observe(l)).collect();
        assert_eq!(fired, [false, false, false, false, false, true]);
        let mut r = RiseDetector::default();
        assert!(![1.0, 1.0, 1.0, 1.0].iter().any(|&l| r.observe(l)));
    }

    fn toy() -> Vec<EncodedSequence> {
        (0..12)
            .map(|i| {
                let len = 2 + i % 3;
                EncodedSequence {
                    features: (0..len).map(|j| vec![(i + j) % 4, 4 + (j % 2)]).collect(),
                    clicks: (0..len).map(|j| (i + j) % 3 == 0).collect(),
                    converted: i % 2 == 0,
                }
            })
            .collect()
    }

    fn small() -> (DarnnConfig, InputDims) {
        (
            DarnnConfig {
                embedding_size: 2,
                hidden_size: 3,
                energy_hidden: 3,
                lambda_hidden: 3,
                click_hidden: 3,
                conv_hidden: 3,
                batch_size: 4,
                max_epochs_click: 3,
                max_epochs_conv: 2,
                ..Default::default()
            },
            InputDims {
                vocab_size: 6,
                num_fields: 2,
            },
        )
    }

    #[test]
    fn schedule_and_counters() {
        let (cfg, dims) = small();
        let data = toy();
        let (_, c) = train_two_stage(&data, &data[..4], &cfg, dims, 7).unwrap();
        assert_eq!(c.stage_boundary, 3);
        assert_eq!(c.epochs.len(), 5);
        for e in &c.epochs[..3] {
            assert_eq!((e.stage, e.conv_updates, e.train_conv_loss), (Stage::Click, 0, None));
        }
        assert!(c.epochs[3].conv_updates > 0);
        assert!(c.best_epoch > 3);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (cfg, dims) = small();
        let data = toy();
        let (a, ca) = train_two_stage(&data, &data[..4], &cfg, dims, 11).unwrap();
        let (b, cb) = train_two_stage(&data, &data[..4], &cfg, dims, 11).unwrap();
        assert_eq!(ca, cb);
        for id in a.store().ids() {
            assert_eq!(a.store().value(id), b.store().value(id));
        }
    }

    #[test]
    fn needs_both_labels() {
        let (cfg, dims) = small();
        let mut data = toy();
        data.iter_mut().for_each(|s| s.converted = true);
        assert!(matches!(
            train_two_stage(&data, &[], &cfg, dims, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn arnn_has_no_click_stage() {
        let (mut cfg, dims) = small();
        cfg.mode = Mode::Arnn;
        let data = toy();
        let (p, c) = train_two_stage(&data, &data[..4], &cfg, dims, 3).unwrap();
        assert_eq!(c.stage_boundary, 0);
        assert!(c
            .epochs
            .iter()
            .all(|e| e.stage == Stage::Joint && e.val_click_loss.is_none()));
        assert!(p.store().id("decoder.w").is_none());
    }

    #[test]
    fn divergence_names_the_batch() {
        let (cfg, dims) = small();
        let data = toy();
        let mut p = DarnnParams::init(&cfg, dims, 1).unwrap();
        let id = p.store().id("embedding").unwrap();
        p.store_mut().value_mut(id).data_mut()[0] = f64::NAN;
        let mut opt = Optimizer::sgd(0.1);
        let batches = vec![vec![1, 2], vec![0, 4]];
        let err = run_epoch(&mut p, &data, &batches, Stage::Joint, &mut opt, 1).unwrap_err();
        match err {
            Error::NonFinite(msg) => assert!(msg.contains("batch"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
