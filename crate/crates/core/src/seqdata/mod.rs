//! User touch-point sequences: parsing event logs, segmenting per conversion,
//! length/duration filtering, negative sampling, splitting and the
//! categorical feature vocabulary.

mod parse;
mod prepare;
mod vocab;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{parse_events, ConversionMode, EventRecord, ParseOutput, SchemaConfig};
pub use prepare::{
    build_sequences, filter_sequences, length_stats, negative_sample, train_test_split, FilterConfig, LengthStat,
};
pub use vocab::{build_vocab, FeatureVocab, FieldVocab};

/// Feature field carrying the channel of a touch point.
pub const CHANNEL_FIELD: &str = "channel";
/// Feature field carrying the hour of day derived from the timestamp.
pub const HOUR_FIELD: &str = "hour";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchPoint {
    /// Ordered (field, value) pairs; always includes the channel and hour fields.
    pub features: Vec<(String, String)>,
    pub click: bool,
    pub channel: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub cost: f64,
}

impl TouchPoint {
    /// Builds a touch point, folding channel and timestamp into the features.
    pub fn new(
        channel: impl Into<String>,
        timestamp: i64,
        click: bool,
        cost: f64,
        extra: Vec<(String, String)>,
    ) -> Self {
        let channel = channel.into();
        let mut features = Vec::with_capacity(extra.len() + 2);
        features.push((CHANNEL_FIELD.to_string(), channel.clone()));
        features.push((
            HOUR_FIELD.to_string(),
            timestamp.rem_euclid(86_400).div_euclid(3_600).to_string(),
        ));
        features.extend(extra);
        TouchPoint {
            features,
            click,
            channel,
            timestamp,
            cost,
        }
    }

    pub fn feature(&self, field: &str) -> Option<&str> {
        self.features.iter().find(|(f, _)| f == field).map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    /// Unique per segment: `<user>#<segment index>`.
    pub id: String,
    pub user_id: String,
    pub points: Vec<TouchPoint>,
    pub converted: bool,
    pub conversion_time: Option<i64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Seconds between the first and last touch.
    pub fn duration(&self) -> i64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0,
        }
    }

    pub fn label(&self) -> f64 {
        if self.converted {
            1.0
        } else {
            0.0
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.points.iter().map(|p| p.cost).sum()
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.points.iter().map(|p| p.channel.as_str())
    }
}

/// Writes one JSON object per line.
pub fn write_sequences<W: Write>(mut w: W, seqs: &[Sequence]) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sequences<R: std::io::Read>(r: R) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("sequence line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn save_sequences(path: &Path, seqs: &[Sequence]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_sequences(&mut w, seqs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_sequences(path: &Path) -> Result<Vec<Sequence>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sequences(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_and_hour_are_features() {
        let tp = TouchPoint::new(
            "search",
            3 * 86_400 + 5 * 3_600 + 12,
            false,
            0.0,
            vec![("os".into(), "ios".into())],
        );
        assert_eq!(tp.feature(CHANNEL_FIELD), Some("search"));
        assert_eq!(tp.feature(HOUR_FIELD), Some("5"));
        assert_eq!(tp.feature("os"), Some("ios"));
    }

    #[test]
    fn jsonl_round_trip() {
        let s = Sequence {
            id: "u1#0".into(),
            user_id: "u1".into(),
            points: vec![TouchPoint::new("a", 10, true, 0.25, vec![])],
            converted: true,
            conversion_time: Some(20),
        };
        let mut buf = Vec::new();
        write_sequences(&mut buf, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(read_sequences(&buf[..]).unwrap(), vec![s.clone(), s]);
    }
}
