//! Synthetic event logs with a known conversion mechanism.
//!
//! Every touch point has a channel, an ad `format` and a noise `device`
//! field. Touches in format `f0` are usually clicked, others rarely. A
//! journey converts with high probability iff some touch on the golden
//! channel was clicked, so the label is recoverable from the features and
//! credit should concentrate on golden-channel touches.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{EventRecord, SchemaConfig, TouchPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub channels: usize,
    pub golden_channel: usize,
    pub formats: usize,
    /// Touch points per journey, inclusive range.
    pub min_touches: usize,
    pub max_touches: usize,
    pub click_rate_f0: f64,
    pub click_rate_other: f64,
    pub conv_rate_golden: f64,
    pub conv_rate_base: f64,
    /// Chance that a gap between touches is several days long.
    pub long_gap_rate: f64,
    /// Chance that a converted user keeps receiving impressions afterwards.
    pub continue_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 5000,
            channels: 10,
            golden_channel: 0,
            formats: 2,
            min_touches: 2,
            max_touches: 22,
            click_rate_f0: 0.95,
            click_rate_other: 0.01,
            conv_rate_golden: 0.9,
            conv_rate_base: 0.05,
            long_gap_rate: 0.02,
            continue_rate: 0.2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.golden_channel >= self.channels {
            return Err(Error::Config(format!(
                "golden channel {} outside {} channels",
                self.golden_channel, self.channels
            )));
        }
        if self.formats == 0 || self.min_touches == 0 || self.min_touches > self.max_touches {
            return Err(Error::Config("synthetic sizes must be positive with min <= max".into()));
        }
        let rates = [
            self.click_rate_f0,
            self.click_rate_other,
            self.conv_rate_golden,
            self.conv_rate_base,
            self.long_gap_rate,
            self.continue_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("synthetic rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn channel_name(k: usize) -> String {
    format!("ch{k}")
}

const HOUR: i64 = 3_600;
const DAY: i64 = 86_400;

fn touch(cfg: &SynthConfig, rng: &mut ChaCha8Rng, ts: i64) -> TouchPoint {
    let ch = rng.gen_range(0..cfg.channels);
    let format = rng.gen_range(0..cfg.formats);
    let rate = if format == 0 {
        cfg.click_rate_f0
    } else {
        cfg.click_rate_other
    };
    let click = rng.gen_bool(rate);
    let base = 0.5 + 0.1 * ch as f64;
    let cost = (base * rng.gen_range(0.8..1.2) * 1e4).round() / 1e4;
    let device = if rng.gen_bool(0.5) { "mobile" } else { "desktop" };
    TouchPoint::new(
        channel_name(ch),
        ts,
        click,
        cost,
        vec![
            ("format".into(), format!("f{format}")),
            ("device".into(), device.into()),
        ],
    )
}

fn gap(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> i64 {
    if rng.gen_bool(cfg.long_gap_rate) {
        rng.gen_range(4 * DAY..8 * DAY)
    } else {
        rng.gen_range(HOUR..12 * HOUR)
    }
}

/// Event records in user order, each user's events in time order.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<EventRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golden = channel_name(cfg.golden_channel);
    let mut out = Vec::new();
    for u in 0..cfg.users {
        let user = format!("u{u:06}");
        let n = rng.gen_range(cfg.min_touches..=cfg.max_touches);
        let mut ts = rng.gen_range(0..30 * DAY);
        let mut golden_click = false;
        for i in 0..n {
            if i > 0 {
                ts += gap(cfg, &mut rng);
            }
            let p = touch(cfg, &mut rng, ts);
            golden_click |= p.click && p.channel == golden;
            out.push(EventRecord {
                user_id: user.clone(),
                point: p,
                conversion: false,
            });
        }
        let rate = if golden_click {
            cfg.conv_rate_golden
        } else {
            cfg.conv_rate_base
        };
        if rng.gen_bool(rate) {
            ts += rng.gen_range(HOUR..6 * HOUR);
            let last = out.last().map(|r| r.point.channel.clone()).unwrap_or_default();
            out.push(EventRecord {
                user_id: user.clone(),
                point: TouchPoint::new(last, ts, false, 0.0, Vec::new()),
                conversion: true,
            });
            if rng.gen_bool(cfg.continue_rate) {
                for _ in 0..rng.gen_range(1..=cfg.max_touches.min(5)) {
                    ts += gap(cfg, &mut rng);
                    out.push(EventRecord {
                        user_id: user.clone(),
                        point: touch(cfg, &mut rng, ts),
                        conversion: false,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Schema matching [`write_log`].
pub fn schema() -> SchemaConfig {
    SchemaConfig {
        delimiter: "\t".into(),
        user: "user".into(),
        timestamp: "ts".into(),
        channel: "channel".into(),
        click: "click".into(),
        cost: Some("cost".into()),
        conversion: "conversion".into(),
        conversion_mode: Default::default(),
        conversion_time: None,
        features: vec!["format".into(), "device".into()],
    }
}

/// Tab-separated log with one row per record.
pub fn write_log<W: Write>(mut w: W, records: &[EventRecord]) -> Result<()> {
    writeln!(w, "user\tts\tchannel\tclick\tcost\tconversion\tformat\tdevice")?;
    for r in records {
        let p = &r.point;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.user_id,
            p.timestamp,
            p.channel,
            u8::from(p.click),
            p.cost,
            u8::from(r.conversion),
            p.feature("format").unwrap_or("-"),
            p.feature("device").unwrap_or("-"),
        )?;
    }
    Ok(())
}
