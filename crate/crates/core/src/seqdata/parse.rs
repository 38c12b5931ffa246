use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TouchPoint, CHANNEL_FIELD, HOUR_FIELD};
use crate::error::{Error, Result};

/// How the conversion column is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionMode {
    /// A row with the flag set is the conversion event itself, not a touch.
    #[default]
    Event,
    /// Every row is a touch; a set flag means the journey converts at the
    /// time found in `conversion_time` (Criteo-style logs).
    Flag,
}

/// Column mapping for a delimiter-separated event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub user: String,
    pub timestamp: String,
    pub channel: String,
    pub click: String,
    #[serde(default)]
    pub cost: Option<String>,
    pub conversion: String,
    #[serde(default)]
    pub conversion_mode: ConversionMode,
    #[serde(default)]
    pub conversion_time: Option<String>,
    #[serde(default)]
    pub features: Vec<String>,
}

fn default_delimiter() -> String {
    "\t".to_string()
}

impl SchemaConfig {
    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_bytes() {
            [b] => Ok(*b),
            _ => Err(Error::Config(format!(
                "delimiter must be a single byte, got {:?}",
                self.delimiter
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        for reserved in [CHANNEL_FIELD, HOUR_FIELD] {
            if self.features.iter().any(|f| f == reserved) {
                return Err(Error::Config(format!(
                    "feature column may not be named {reserved:?}; it is derived"
                )));
            }
        }
        if self.conversion_mode == ConversionMode::Flag && self.conversion_time.is_none() {
            return Err(Error::Config("conversion_mode = \"flag\" needs conversion_time".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub user_id: String,
    /// For conversion records only the timestamp and channel are meaningful.
    pub point: TouchPoint,
    pub conversion: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParseOutput {
    pub records: Vec<EventRecord>,
    pub skipped: usize,
}

struct Columns {
    user: usize,
    timestamp: usize,
    channel: usize,
    click: usize,
    cost: Option<usize>,
    conversion: usize,
    conversion_time: Option<usize>,
    features: Vec<(String, usize)>,
}

fn flag(s: &str) -> Option<bool> {
    match s.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Reads one record per data row. Malformed rows are logged and skipped.
pub fn parse_events<R: Read>(reader: R, schema: &SchemaConfig) -> Result<ParseOutput> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(true)
        .flexible(true)
        .quoting(schema.delimiter != "\t")
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("schema column {name:?} not in header")))
    };
    let cols = Columns {
        user: col(&schema.user)?,
        timestamp: col(&schema.timestamp)?,
        channel: col(&schema.channel)?,
        click: col(&schema.click)?,
        cost: schema.cost.as_deref().map(col).transpose()?,
        conversion: col(&schema.conversion)?,
        conversion_time: schema.conversion_time.as_deref().map(col).transpose()?,
        features: schema
            .features
            .iter()
            .map(|f| col(f).map(|i| (f.clone(), i)))
            .collect::<Result<_>>()?,
    };

    let mut out = ParseOutput::default();
    let mut seen_conversions: HashSet<(String, i64)> = HashSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let get = |i: usize| rec.get(i).map(str::trim);
        let parsed = (|| {
            let user = get(cols.user).filter(|s| !s.is_empty()).ok_or("empty user")?;
            let ts: i64 = get(cols.timestamp)
                .and_then(|s| s.parse().ok())
                .ok_or("bad timestamp")?;
            let channel = get(cols.channel).filter(|s| !s.is_empty()).ok_or("empty channel")?;
            let click = get(cols.click).and_then(flag).ok_or("bad click flag")?;
            let cost = match cols.cost {
                None => 0.0,
                Some(i) => get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|c| c.is_finite() && *c >= 0.0)
                    .ok_or("bad cost")?,
            };
            let conv = get(cols.conversion).and_then(flag).ok_or("bad conversion flag")?;
            let conv_time = match (schema.conversion_mode, conv) {
                (ConversionMode::Flag, true) => Some(
                    cols.conversion_time
                        .and_then(get)
                        .and_then(|s| s.parse::<i64>().ok())
                        .ok_or("bad conversion time")?,
                ),
                _ => None,
            };
            let extra = cols
                .features
                .iter()
                .map(|(name, i)| get(*i).map(|v| (name.clone(), v.to_string())).ok_or("missing feature"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok::<_, &'static str>((
                user.to_string(),
                TouchPoint::new(channel, ts, click, cost, extra),
                conv,
                conv_time,
            ))
        })();
        match parsed {
            Ok((user_id, point, conv, conv_time)) => match schema.conversion_mode {
                ConversionMode::Event => out.records.push(EventRecord {
                    user_id,
                    point,
                    conversion: conv,
                }),
                ConversionMode::Flag => {
                    let conversion = conv_time.and_then(|t| {
                        seen_conversions.insert((user_id.clone(), t)).then(|| EventRecord {
                            user_id: user_id.clone(),
                            point: TouchPoint::new(point.channel.clone(), t, false, 0.0, Vec::new()),
                            conversion: true,
                        })
                    });
                    out.records.push(EventRecord {
                        user_id,
                        point,
                        conversion: false,
                    });
                    out.records.extend(conversion);
                }
            },
            Err(why) => {
                log::warn!("skipping malformed row at line {line}: {why}");
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}
