use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::Serialize;

use super::BudgetPlan;
use crate::error::{Error, Result};
use crate::seqdata::Sequence;

/// Fractions of the test-set total cost used for the standard report.
pub const BUDGET_FRACTIONS: [f64; 5] = [0.5, 0.25, 0.125, 0.0625, 0.03125];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayEvent {
    pub sequence_id: String,
    pub timestamp: i64,
    pub channel: String,
    pub cost: f64,
    pub y: bool,
}

/// One event per touch point (`y = 0`, at its cost) plus, for converted
/// sequences, a zero-cost `y = 1` event at the conversion time on the channel
/// of the last touch. Stable-sorted by timestamp.
pub fn events_from_sequences(seqs: &[Sequence]) -> Vec<ReplayEvent> {
    let mut out = Vec::new();
    for s in seqs {
        for p in &s.points {
            out.push(ReplayEvent {
                sequence_id: s.id.clone(),
                timestamp: p.timestamp,
                channel: p.channel.clone(),
                cost: p.cost,
                y: false,
            });
        }
        if let (true, Some(last)) = (s.converted, s.points.last()) {
            out.push(ReplayEvent {
                sequence_id: s.id.clone(),
                timestamp: s.conversion_time.unwrap_or(last.timestamp).max(last.timestamp),
                channel: last.channel.clone(),
                cost: 0.0,
                y: true,
            });
        }
    }
    out.sort_by_key(|e| e.timestamp);
    out
}

const EVENT_HEADER: [&str; 5] = ["sequence_id", "timestamp", "channel", "cost", "y"];

pub fn write_events<W: Write>(w: W, events: &[ReplayEvent]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(w);
    wr.write_record(EVENT_HEADER)?;
    for e in events {
        wr.write_record([
            e.sequence_id.as_str(),
            &e.timestamp.to_string(),
            &e.channel,
            &e.cost.to_string(),
            if e.y { "1" } else { "0" },
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads tab-separated events with the header written by [`write_events`].
/// Any malformed row is an error: dropping events would change the replay.
pub fn read_events<R: Read>(r: R) -> Result<Vec<ReplayEvent>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != EVENT_HEADER {
        return Err(Error::Parse(format!(
            "event header {header:?}, expected {EVENT_HEADER:?}"
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse(format!("event line {}: {what}", i + 2));
        let ts = rec[1].parse().map_err(|_| bad("timestamp"))?;
        let cost: f64 = rec[3].parse().map_err(|_| bad("cost"))?;
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(bad("cost"));
        }
        let y = match &rec[4] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("y")),
        };
        out.push(ReplayEvent {
            sequence_id: rec[0].to_string(),
            timestamp: ts,
            channel: rec[2].to_string(),
            cost,
            y,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    /// Total planned budget.
    pub budget: f64,
    /// Y.
    pub conversions: usize,
    /// O.
    pub cost: f64,
    pub blacklisted: usize,
    /// Sequences with at least one charged event that were never blacklisted.
    pub touched: usize,
    pub residual: BTreeMap<String, f64>,
}

/// Incremental replay: feed events in time order, then read the report.
#[derive(Clone, Debug)]
pub struct Replayer {
    total: f64,
    budgets: BTreeMap<String, f64>,
    blacklist: HashSet<String>,
    charged: HashSet<String>,
    last_ts: Option<i64>,
    pushed: usize,
    conversions: usize,
    cost: f64,
}

impl Replayer {
    pub fn new(plan: &BudgetPlan) -> Self {
        Replayer {
            total: plan.total,
            budgets: plan.budgets.clone(),
            blacklist: HashSet::new(),
            charged: HashSet::new(),
            last_ts: None,
            pushed: 0,
            conversions: 0,
            cost: 0.0,
        }
    }

    /// Charges the event if its channel's remaining budget strictly exceeds
    /// its cost, otherwise blacklists its sequence. Events of blacklisted
    /// sequences are ignored.
    pub fn push(&mut self, e: &ReplayEvent) -> Result<()> {
        if self.last_ts.is_some_and(|t| e.timestamp < t) {
            return Err(Error::Contract(format!(
                "event {} at {} precedes the previous event at {}",
                self.pushed,
                e.timestamp,
                self.last_ts.unwrap_or_default()
            )));
        }
        if !(e.cost >= 0.0 && e.cost.is_finite()) {
            return Err(Error::Contract(format!("event {} has cost {}", self.pushed, e.cost)));
        }
        self.last_ts = Some(e.timestamp);
        self.pushed += 1;
        if self.blacklist.contains(&e.sequence_id) {
            return Ok(());
        }
        match self.budgets.get_mut(&e.channel) {
            Some(b) if *b > e.cost => {
                *b -= e.cost;
                self.cost += e.cost;
                self.conversions += usize::from(e.y);
                self.charged.insert(e.sequence_id.clone());
            }
            _ => {
                self.blacklist.insert(e.sequence_id.clone());
            }
        }
        Ok(())
    }

    pub fn report(&self) -> ReplayReport {
        ReplayReport {
            budget: self.total,
            conversions: self.conversions,
            cost: self.cost,
            blacklisted: self.blacklist.len(),
            touched: self.charged.iter().filter(|s| !self.blacklist.contains(*s)).count(),
            residual: self.budgets.clone(),
        }
    }
}

pub fn replay(events: &[ReplayEvent], plan: &BudgetPlan) -> Result<ReplayReport> {
    let mut r = Replayer::new(plan);
    for e in events {
        r.push(e)?;
    }
    Ok(r.report())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub budget: f64,
    pub conversions: usize,
    pub cost: f64,
    /// `cost / conversions`; `None` without conversions.
    pub cpa: Option<f64>,
    /// `conversions / touched`; `None` when nothing was touched.
    pub cvr: Option<f64>,
    /// Value of the obtained conversions, `conversions * V`.
    pub value: f64,
    /// `value - cost`.
    pub profit: f64,
}

pub fn report_metrics(report: &ReplayReport, conversion_value: f64) -> Metrics {
    let y = report.conversions as f64;
    let value = y * conversion_value;
    Metrics {
        budget: report.budget,
        conversions: report.conversions,
        cost: report.cost,
        cpa: (report.conversions > 0).then(|| report.cost / y),
        cvr: (report.touched > 0).then(|| y / report.touched as f64),
        value,
        profit: value - report.cost,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// One row per (method, budget fraction).
pub fn write_metrics_tsv<W: Write>(mut w: W, rows: &[(String, f64, Metrics)]) -> Result<()> {
    writeln!(w, "method\tfraction\tbudget\tY\tO\tCPA\tCVR\tvalue\tprofit")?;
    for (method, frac, m) in rows {
        writeln!(
            w,
            "{method}\t{frac}\t{:.4}\t{}\t{:.4}\t{}\t{}\t{:.4}\t{:.4}",
            m.budget,
            m.conversions,
            m.cost,
            fmt_opt(m.cpa),
            fmt_opt(m.cvr),
            m.value,
            m.profit
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::seq_of;

    fn ev(s: &str, t: i64, ch: &str, cost: f64, y: bool) -> ReplayEvent {
        ReplayEvent {
            sequence_id: s.into(),
            timestamp: t,
            channel: ch.into(),
            cost,
            y,
        }
    }

    fn plan(pairs: &[(&str, f64)]) -> BudgetPlan {
        BudgetPlan {
            total: pairs.iter().map(|p| p.1).sum(),
            budgets: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn manual_trace_blacklists_second_sequence() {
        let events = [
            ev("s1", 1, "A", 3.0, false),
            ev("s2", 2, "A", 3.0, false),
            ev("s2", 3, "A", 1.0, true),
        ];
        let r = replay(&events, &plan(&[("A", 5.0)])).unwrap();
        assert_eq!((r.conversions, r.cost, r.blacklisted, r.touched), (0, 3.0, 1, 1));
        assert_eq!(r.residual["A"], 2.0);
    }

    #[test]
    fn unlimited_budget_counts_everything() {
        let events = [
            ev("s1", 1, "A", 3.0, false),
            ev("s2", 2, "B", 3.0, false),
            ev("s1", 3, "A", 0.0, true),
            ev("s2", 4, "B", 1.5, true),
        ];
        let p = BudgetPlan::uniform(["A", "B"], f64::INFINITY);
        let r = replay(&events, &p).unwrap();
        assert_eq!((r.conversions, r.cost, r.blacklisted), (2, 7.5, 0));
    }

    #[test]
    fn zero_budget_blacklists_every_sequence() {
        let events = [
            ev("s1", 1, "A", 0.0, false),
            ev("s2", 2, "B", 2.0, true),
            ev("s1", 3, "A", 1.0, true),
        ];
        let r = replay(&events, &plan(&[("A", 0.0), ("B", 0.0)])).unwrap();
        assert_eq!((r.conversions, r.cost, r.blacklisted, r.touched), (0, 0.0, 2, 0));
    }

    #[test]
    fn exact_remaining_budget_fails_strict_test() {
        let events = [ev("s1", 1, "A", 2.0, false), ev("s1", 2, "A", 0.0, true)];
        let r = replay(&events, &plan(&[("A", 2.0)])).unwrap();
        assert_eq!((r.conversions, r.cost, r.blacklisted), (0, 0.0, 1));
    }

    #[test]
    fn missing_channel_has_zero_budget() {
        let events = [ev("s1", 1, "Z", 0.5, true)];
        let r = replay(&events, &plan(&[("A", 100.0)])).unwrap();
        assert_eq!((r.conversions, r.blacklisted), (0, 1));
    }

    #[test]
    fn unsorted_input_rejected() {
        let events = [ev("s1", 5, "A", 1.0, false), ev("s2", 4, "A", 1.0, false)];
        assert!(matches!(replay(&events, &plan(&[("A", 9.0)])), Err(Error::Contract(_))));
    }

    #[test]
    fn metrics_examples() {
        let mut r = ReplayReport {
            budget: 100.0,
            conversions: 2,
            cost: 10.0,
            blacklisted: 0,
            touched: 4,
            residual: BTreeMap::new(),
        };
        let m = report_metrics(&r, 10.0);
        assert_eq!((m.cpa, m.cvr), (Some(5.0), Some(0.5)));
        r.conversions = 3;
        r.cost = 12.0;
        let m = report_metrics(&r, 10.0);
        assert_eq!((m.value, m.profit), (30.0, 18.0));
        r.conversions = 0;
        let m = report_metrics(&r, 10.0);
        assert_eq!((m.cpa, m.profit), (None, -12.0));
    }

    #[test]
    fn events_from_sequences_layout() {
        let mut a = seq_of(&["x", "y"], true);
        a.id = "a#0".into();
        a.conversion_time = Some(7200 + 60);
        let mut b = seq_of(&["z"], false);
        b.id = "b#0".into();
        let ev = events_from_sequences(&[a, b]);
        let got: Vec<(&str, i64, &str, bool)> = ev
            .iter()
            .map(|e| (e.sequence_id.as_str(), e.timestamp, e.channel.as_str(), e.y))
            .collect();
        assert_eq!(
            got,
            [
                ("a#0", 0, "x", false),
                ("b#0", 0, "z", false),
                ("a#0", 3600, "y", false),
                ("a#0", 7260, "y", true)
            ]
        );
        assert_eq!(ev[3].cost, 0.0);
    }

    #[test]
    fn event_file_round_trip() {
        let events = vec![ev("u#0", 1, "A", 0.25, false), ev("u#0", 9, "A", 0.0, true)];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        assert_eq!(read_events(&buf[..]).unwrap(), events);
        let bad = b"sequence_id\ttimestamp\tchannel\tcost\ty\nu\t1\tA\t-1\t0\n";
        assert!(matches!(read_events(&bad[..]), Err(Error::Parse(_))));
    }
}
