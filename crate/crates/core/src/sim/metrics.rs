use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::Tick;
use crate::sim::scenario::AttackKind;
use crate::sim::trace::{Event, RssiRow};

/// Ticks after a movement in which BFT messages count as detections.
pub const DETECTION_WINDOW: Tick = 60;
/// Ticks after an attack starts in which BFT messages count as detections.
pub const ATTACK_WINDOW: Tick = 120;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub payload_sent: u64,
    pub bft_sent: u64,
    pub alert_sent: u64,
    pub payload_received: u64,
    pub bft_received: u64,
    pub alert_received: u64,
    pub trusted: u64,
    pub ignored: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BftRecord {
    pub tick: Tick,
    pub sender: String,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub tick: Tick,
    pub sender: String,
    pub alert_type: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementReport {
    pub node: String,
    pub at: Tick,
    pub to: [f64; 3],
    /// BFT messages about the moved node within the detection window, per sender.
    pub bft_in_window: BTreeMap<String, usize>,
    /// Ticks from the move to each sender's first BFT about the node.
    pub first_latency: BTreeMap<String, Option<Tick>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub at: Tick,
    pub victim: String,
    /// Honest nodes that sent a BFT about the victim within the attack window.
    pub bft_senders: Vec<String>,
    /// Tick of the snapshot below.
    pub snapshot_tick: Tick,
    /// Each honest node's tau at the snapshot.
    pub tau: BTreeMap<String, usize>,
    /// Honest nodes whose distrust predicate holds for the victim at the snapshot.
    pub distrusting: Vec<String>,
    /// Each honest node's trust in the victim at the snapshot.
    pub victim_trust: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustSample {
    pub tick: Tick,
    pub observer: String,
    pub subject: String,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub trace_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration: Tick,
    pub nodes: BTreeMap<String, NodeCounts>,
    pub bfts: Vec<BftRecord>,
    pub alerts: Vec<AlertRecord>,
    pub movements: Vec<MovementReport>,
    pub attacks: Vec<AttackReport>,
    /// Frames put on air by attackers.
    pub injected: u64,
    /// BFT messages sent outside every movement and attack window.
    pub static_false_positives: u64,
    pub trust: Vec<TrustSample>,
}

impl RunMetrics {
    pub fn total_bft(&self) -> u64 {
        self.nodes.values().map(|c| c.bft_sent).sum()
    }

    pub fn total_alerts(&self) -> u64 {
        self.nodes.values().map(|c| c.alert_sent).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::Error::Decode(e.to_string()))
    }

    /// Distinct BFT senders about `subject` in `[from, to]`.
    pub fn bft_senders_between(&self, subject: &str, from: Tick, to: Tick) -> BTreeSet<String> {
        self.bfts
            .iter()
            .filter(|b| b.subject == subject && (from..=to).contains(&b.tick))
            .map(|b| b.sender.clone())
            .collect()
    }

    /// Recounts sent, trusted and ignored actions from the event log and
    /// lists every disagreement with the stored counts.
    pub fn cross_check(&self, events: &[Event]) -> Vec<String> {
        let mut counted: BTreeMap<&str, NodeCounts> = BTreeMap::new();
        let mut injected = 0;
        for e in events {
            let c = counted.entry(e.node.as_str()).or_default();
            match e.action.as_str() {
                "SendPayload" => c.payload_sent += 1,
                "SendBft" => c.bft_sent += 1,
                "SendAlert" => c.alert_sent += 1,
                "StoreTrusted" => c.trusted += 1,
                "Ignore" => c.ignored += 1,
                a if a.starts_with("Attack") => injected += 1,
                _ => {}
            }
        }
        let mut diff = Vec::new();
        for (node, c) in &self.nodes {
            let t = counted.get(node.as_str()).cloned().unwrap_or_default();
            for (what, m, e) in [
                ("payload_sent", c.payload_sent, t.payload_sent),
                ("bft_sent", c.bft_sent, t.bft_sent),
                ("alert_sent", c.alert_sent, t.alert_sent),
                ("trusted", c.trusted, t.trusted),
                ("ignored", c.ignored, t.ignored),
            ] {
                if m != e {
                    diff.push(format!("{node} {what}: metrics {m}, trace {e}"));
                }
            }
        }
        if injected != self.injected {
            diff.push(format!("injected: metrics {}, trace {injected}", self.injected));
        }
        if self.bfts.len() as u64 != self.total_bft() {
            diff.push("bft records disagree with bft counts".into());
        }
        diff
    }
}

/// `|RSSI_AB - RSSI_BA|` for every tick where both directions were received,
/// on the column `value` picks.
pub fn symmetry_gaps(rows: &[RssiRow], value: impl Fn(&RssiRow) -> f64) -> Vec<f64> {
    let mut by_key: BTreeMap<(Tick, &str, &str), f64> = BTreeMap::new();
    for r in rows {
        by_key.entry((r.tick, &r.receiver, &r.sender)).or_insert_with(|| value(r));
    }
    by_key
        .iter()
        .filter(|((_, rx, tx), _)| rx < tx)
        .filter_map(|((t, rx, tx), v)| by_key.get(&(*t, *tx, *rx)).map(|w| (v - w).abs()))
        .collect()
}
