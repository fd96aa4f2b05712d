//! Offline replay of recorded RSSI through smoothing filters.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use pol_core::filters::{FilterSpec, Smoother, TriggerState};
use pol_core::sim::metrics::DETECTION_WINDOW;
use pol_core::sim::RssiRow;
use pol_core::Tick;

/// `LO:HI:STEP`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Sweep {
    pub fn single(threshold: f64) -> Self {
        Sweep { lo: threshold, hi: threshold, step: 1.0 }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts[..] else {
            return Err(format!("expected LO:HI:STEP, got {s:?}"));
        };
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let sweep = Sweep { lo: num(lo)?, hi: num(hi)?, step: num(step)? };
        if !(sweep.lo > 0.0 && sweep.lo <= sweep.hi && sweep.step > 0.0 && sweep.hi.is_finite()) {
            return Err(format!("need 0 < LO <= HI and STEP > 0, got {s:?}"));
        }
        Ok(sweep)
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

/// Builds one spec per name, merging `params[name]` over the defaults.
pub fn resolve_specs(names: &[String], params: Option<&Value>) -> Result<Vec<FilterSpec>, String> {
    let overrides = match params {
        None => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(other) => return Err(format!("--params must be a JSON object keyed by filter name, got {other}")),
    };
    if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
        return Err(format!("filter {:?} listed twice", dup.1));
    }
    if let Some(extra) = overrides.keys().find(|k| !names.contains(k)) {
        return Err(format!("--params names filter {extra:?} which is not in --filter"));
    }
    names
        .iter()
        .map(|name| {
            let spec = FilterSpec::default_for(name)
                .ok_or_else(|| format!("unknown filter {name:?}; known: {}", FilterSpec::NAMES.join(", ")))?;
            let Some(patch) = overrides.get(name) else {
                return Ok(spec);
            };
            let Value::Object(patch) = patch else {
                return Err(format!("params for {name} must be an object"));
            };
            let mut merged = serde_json::to_value(&spec).expect("filter specs serialize");
            let obj = merged.as_object_mut().expect("tagged spec is an object");
            for (k, v) in patch {
                obj.insert(k.clone(), v.clone());
            }
            let spec: FilterSpec = serde_json::from_value(merged).map_err(|e| format!("params for {name}: {e}"))?;
            spec.build().map_err(|e| format!("params for {name}: {e}"))?;
            Ok(spec)
        })
        .collect()
}

/// Smoothed value for every row, each (receiver, sender) link with its own state.
pub fn smooth(rows: &[RssiRow], spec: &FilterSpec) -> pol_core::Result<Vec<f64>> {
    let mut links = BTreeMap::new();
    rows.iter()
        .map(|r| {
            let f = match links.entry((r.receiver.as_str(), r.sender.as_str())) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(spec.build()?),
            };
            Ok(f.step(r.rssi_raw))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fire {
    pub tick: Tick,
    pub receiver: String,
    pub sender: String,
}

/// Trigger fires per link, armed once the link has seen `warmup` samples.
pub fn fires(
    rows: &[RssiRow],
    smoothed: &[f64],
    threshold: f64,
    cooldown: Tick,
    warmup: usize,
) -> pol_core::Result<Vec<Fire>> {
    let mut links: BTreeMap<(&str, &str), (TriggerState, usize)> = BTreeMap::new();
    let mut out = Vec::new();
    for (r, &y) in rows.iter().zip(smoothed) {
        let key = (r.receiver.as_str(), r.sender.as_str());
        let (trigger, samples) = match links.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert((TriggerState::new(threshold, cooldown)?, 0)),
        };
        *samples += 1;
        if *samples >= warmup && trigger.check_settling(y, r.tick) {
            out.push(Fire { tick: r.tick, receiver: r.receiver.clone(), sender: r.sender.clone() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownMove {
    pub node: String,
    pub at: Tick,
}

/// How the links into each observer reacted to one movement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub node: String,
    pub at: Tick,
    /// Ticks from the move to the first fire on `node -> observer`, if within the window.
    pub observers: BTreeMap<String, Option<Tick>>,
    /// Worst observer latency; `None` if any observer missed.
    pub latency: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub filter: String,
    pub threshold: f64,
    pub fires: usize,
    pub static_false_positives: usize,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub trace: String,
    pub rows: usize,
    pub links: usize,
    pub cooldown: Tick,
    pub warmup: usize,
    /// Ticks after a movement or attack start during which fires are not false positives.
    pub settle: Tick,
    pub filters: Vec<FilterSpec>,
    pub movements: Vec<KnownMove>,
    pub attacks: Vec<Tick>,
    pub results: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay<'a> {
    pub rows: &'a [RssiRow],
    pub movements: &'a [KnownMove],
    /// Attack start ticks; everything after one is excluded from the static span.
    pub attacks: &'a [Tick],
    pub cooldown: Tick,
    pub warmup: usize,
    pub settle: Tick,
}

impl Replay<'_> {
    fn is_static(&self, t: Tick) -> bool {
        !self.movements.iter().any(|m| t >= m.at && t <= m.at + self.settle) && !self.attacks.iter().any(|&a| t >= a)
    }

    fn detections(&self, fires: &[Fire]) -> Vec<Detection> {
        self.movements
            .iter()
            .map(|m| {
                let mut observers: BTreeMap<String, Option<Tick>> =
                    self.rows.iter().filter(|r| r.sender == m.node).map(|r| (r.receiver.clone(), None)).collect();
                for f in
                    fires.iter().filter(|f| f.sender == m.node && f.tick >= m.at && f.tick <= m.at + DETECTION_WINDOW)
                {
                    let slot = observers.entry(f.receiver.clone()).or_default();
                    if slot.is_none() {
                        *slot = Some(f.tick - m.at);
                    }
                }
                let latency = observers.values().try_fold(0, |acc: Tick, l| l.map(|l| acc.max(l)));
                Detection { node: m.node.clone(), at: m.at, observers, latency }
            })
            .collect()
    }

    /// One row per (filter, threshold), plus each filter's smoothed column.
    pub fn evaluate(
        &self,
        specs: &[FilterSpec],
        thresholds: &[f64],
    ) -> pol_core::Result<(Vec<SweepRow>, Vec<Vec<f64>>)> {
        let mut rows = Vec::new();
        let mut columns = Vec::new();
        for spec in specs {
            let smoothed = smooth(self.rows, spec)?;
            for &threshold in thresholds {
                let fired = fires(self.rows, &smoothed, threshold, self.cooldown, self.warmup)?;
                rows.push(SweepRow {
                    filter: spec.name().to_string(),
                    threshold,
                    fires: fired.len(),
                    static_false_positives: fired.iter().filter(|f| self.is_static(f.tick)).count(),
                    detections: self.detections(&fired),
                });
            }
            columns.push(smoothed);
        }
        Ok((rows, columns))
    }
}

/// The trace's raw column followed by one smoothed column per filter.
pub fn filtered_csv(rows: &[RssiRow], specs: &[FilterSpec], columns: &[Vec<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["tick", "receiver", "sender", "rssi_raw"];
    header.extend(specs.iter().map(|s| s.name()));
    w.write_record(&header).expect("in-memory write");
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![r.tick.to_string(), r.receiver.clone(), r.sender.clone(), format!("{:.6}", r.rssi_raw)];
        rec.extend(columns.iter().map(|c| format!("{:.6}", c[i])));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii fields")
}
