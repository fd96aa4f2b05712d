//! Trace files written by a run.
//!
//! * `rssi.csv`: `tick,receiver,sender,rssi_raw,rssi_smoothed`, one row per
//!   reception in delivery order (or `rssi.jsonl` with the same fields).
//! * `events.jsonl`: one `{tick, node, action, details}` object per action.
//! * `metrics.json`: the [`RunMetrics`](super::RunMetrics) summary.

use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Tick;

pub const TRACE_VERSION: u32 = 1;
pub const RSSI_CSV_HEADER: &str = "tick,receiver,sender,rssi_raw,rssi_smoothed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiRow {
    pub tick: Tick,
    pub receiver: String,
    pub sender: String,
    pub rssi_raw: f64,
    pub rssi_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    pub node: String,
    pub action: String,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RssiFormat {
    #[default]
    Csv,
    Jsonl,
}

impl RssiFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            RssiFormat::Csv => "rssi.csv",
            RssiFormat::Jsonl => "rssi.jsonl",
        }
    }
}

impl FromStr for RssiFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RssiFormat::Csv),
            "jsonl" => Ok(RssiFormat::Jsonl),
            other => Err(Error::Config(format!("unknown trace format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rssi: Vec<RssiRow>,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn rssi_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::with_capacity(self.rssi.len() * 48));
        w.write_record(RSSI_CSV_HEADER.split(',')).expect("in-memory write");
        for r in &self.rssi {
            w.write_record([
                r.tick.to_string(),
                r.receiver.clone(),
                r.sender.clone(),
                format!("{:.6}", r.rssi_raw),
                format!("{:.6}", r.rssi_smoothed),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii fields")
    }

    pub fn rssi_jsonl(&self) -> String {
        jsonl(&self.rssi)
    }

    pub fn events_jsonl(&self) -> String {
        jsonl(&self.events)
    }

    /// Writes the RSSI trace, the event log and `metrics_json` into `dir`.
    pub fn write_dir(&self, dir: &Path, format: RssiFormat, metrics_json: &str) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let rssi = match format {
            RssiFormat::Csv => self.rssi_csv(),
            RssiFormat::Jsonl => self.rssi_jsonl(),
        };
        fs::write(dir.join(format.file_name()), rssi)?;
        fs::write(dir.join("events.jsonl"), self.events_jsonl())?;
        fs::write(dir.join("metrics.json"), metrics_json)?;
        Ok(())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("trace rows serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_rssi_csv(text: &str) -> Result<Vec<RssiRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Decode(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RSSI_CSV_HEADER {
        return Err(Error::Decode(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e: csv::Error| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Decode(format!("line {line}: {e}"))
            })
        })
        .collect()
}

pub fn parse_rssi_jsonl(text: &str) -> Result<Vec<RssiRow>> {
    parse_jsonl(text)
}

pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    parse_jsonl(text)
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Decode(format!("line {}: {e}", i + 1))))
        .collect()
}
