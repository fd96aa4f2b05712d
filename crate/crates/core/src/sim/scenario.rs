use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::model::{Location, NodeId, SensorType, Tick};
use crate::protocol::{FilterParams, ProtocolParams};

fn one() -> Tick {
    1
}

fn yes() -> bool {
    true
}

fn default_tick_ms() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Label used by movements, attacks and trace output.
    pub id: String,
    pub mac: NodeId,
    pub position: Location,
    #[serde(default = "generic")]
    pub sensor_type: SensorType,
    /// Ticks between payload emissions.
    #[serde(default = "one")]
    pub payload_period: Tick,
}

fn generic() -> SensorType {
    SensorType::Generic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Movement {
    pub node: String,
    pub at: Tick,
    pub to: Location,
    /// The node learns about its own move (sets its moved flag and position).
    #[serde(default = "yes")]
    pub announce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    IdentitySpoof,
    MaliciousBft,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(rename = "type")]
    pub kind: AttackKind,
    pub at: Tick,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// A foreign radio sends payloads under the victim's identity, signed for
/// the victim's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofParams {
    pub victim: String,
    pub position: Location,
    /// Spoofed payloads per tick.
    #[serde(default = "spoof_rate")]
    pub rate: u32,
    #[serde(default)]
    pub until: Option<Tick>,
}

fn spoof_rate() -> u32 {
    3
}

/// A member node periodically reports a fabricated RSSI about the victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaliciousBftParams {
    pub attacker: String,
    pub victim: String,
    #[serde(default = "fabricated")]
    pub fabricated_rssi: f64,
    #[serde(default = "bft_period")]
    pub period: Tick,
    #[serde(default)]
    pub until: Option<Tick>,
}

fn fabricated() -> f64 {
    -90.0
}

fn bft_period() -> Tick {
    10
}

/// A foreign radio records the target's payloads and re-broadcasts the
/// latest one unmodified, `delay` ticks after capturing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayParams {
    pub target: String,
    pub position: Location,
    #[serde(default = "replay_delay")]
    pub delay: Tick,
    #[serde(default = "bft_period")]
    pub period: Tick,
    #[serde(default)]
    pub until: Option<Tick>,
}

fn replay_delay() -> Tick {
    150
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attack {
    IdentitySpoof { at: Tick, params: SpoofParams },
    MaliciousBft { at: Tick, params: MaliciousBftParams },
    Replay { at: Tick, params: ReplayParams },
}

impl Attack {
    pub fn at(&self) -> Tick {
        match self {
            Attack::IdentitySpoof { at, .. } | Attack::MaliciousBft { at, .. } | Attack::Replay { at, .. } => *at,
        }
    }

    pub fn until(&self) -> Option<Tick> {
        match self {
            Attack::IdentitySpoof { params, .. } => params.until,
            Attack::MaliciousBft { params, .. } => params.until,
            Attack::Replay { params, .. } => params.until,
        }
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            Attack::IdentitySpoof { .. } => AttackKind::IdentitySpoof,
            Attack::MaliciousBft { .. } => AttackKind::MaliciousBft,
            Attack::Replay { .. } => AttackKind::Replay,
        }
    }

    /// Label of the honest node the attack is aimed at.
    pub fn victim(&self) -> &str {
        match self {
            Attack::IdentitySpoof { params, .. } => &params.victim,
            Attack::MaliciousBft { params, .. } => &params.victim,
            Attack::Replay { params, .. } => &params.target,
        }
    }

    pub fn active(&self, t: Tick) -> bool {
        t >= self.at() && self.until().is_none_or(|u| t < u)
    }
}

impl AttackSpec {
    pub fn resolve(&self) -> Result<Attack> {
        let p = if self.params.is_null() { serde_json::Value::Object(Default::default()) } else { self.params.clone() };
        let err = |e: serde_json::Error| Error::Config(format!("{:?} params: {e}", self.kind));
        Ok(match self.kind {
            AttackKind::IdentitySpoof => {
                Attack::IdentitySpoof { at: self.at, params: serde_json::from_value(p).map_err(err)? }
            }
            AttackKind::MaliciousBft => {
                Attack::MaliciousBft { at: self.at, params: serde_json::from_value(p).map_err(err)? }
            }
            AttackKind::Replay => Attack::Replay { at: self.at, params: serde_json::from_value(p).map_err(err)? },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration: Tick,
    /// Wall-clock length of one tick; metadata only.
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub movements: Vec<Movement>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    /// The channel seed is taken from `seed`.
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Decode(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn node(&self, label: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == label)
    }

    /// Resolved attacks; only meaningful after [`Scenario::validate`].
    pub fn resolved_attacks(&self) -> Result<Vec<Attack>> {
        self.attacks.iter().map(AttackSpec::resolve).collect()
    }

    /// Lists every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.duration == 0 {
            bad.push("duration must be > 0".to_string());
        }
        if self.nodes.is_empty() {
            bad.push("at least one node is required".to_string());
        }
        let mut labels = BTreeSet::new();
        let mut macs = BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() {
                bad.push(format!("node {} has an empty id", n.mac));
            }
            if !labels.insert(n.id.as_str()) {
                bad.push(format!("duplicate node id {:?}", n.id));
            }
            if !macs.insert(n.mac) {
                bad.push(format!("duplicate mac {}", n.mac));
            }
            if n.payload_period == 0 {
                bad.push(format!("node {:?}: payload_period must be > 0", n.id));
            }
        }
        let known = |label: &str, what: &str, bad: &mut Vec<String>| {
            if !labels.contains(label) {
                bad.push(format!("{what} references unknown node {label:?}"));
            }
        };
        for m in &self.movements {
            known(&m.node, "movement", &mut bad);
            if m.at >= self.duration {
                bad.push(format!("movement of {:?} at {} is outside duration {}", m.node, m.at, self.duration));
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if a.at >= self.duration {
                bad.push(format!("attack #{i} at {} is outside duration {}", a.at, self.duration));
            }
            match a.resolve() {
                Err(e) => bad.push(format!("attack #{i}: {e}")),
                Ok(Attack::IdentitySpoof { params, .. }) => {
                    known(&params.victim, "identity_spoof victim", &mut bad);
                    if params.rate == 0 {
                        bad.push(format!("attack #{i}: rate must be > 0"));
                    }
                }
                Ok(Attack::MaliciousBft { params, .. }) => {
                    known(&params.attacker, "malicious_bft attacker", &mut bad);
                    known(&params.victim, "malicious_bft victim", &mut bad);
                    if params.attacker == params.victim {
                        bad.push(format!("attack #{i}: attacker and victim are the same node"));
                    }
                    if params.period == 0 {
                        bad.push(format!("attack #{i}: period must be > 0"));
                    }
                    if !params.fabricated_rssi.is_finite() {
                        bad.push(format!("attack #{i}: fabricated_rssi must be finite"));
                    }
                }
                Ok(Attack::Replay { params, .. }) => {
                    known(&params.target, "replay target", &mut bad);
                    if params.period == 0 {
                        bad.push(format!("attack #{i}: period must be > 0"));
                    }
                }
            }
        }
        for (what, r) in [
            ("channel", self.channel.validate()),
            ("filter", self.filter.validate()),
            ("protocol", self.protocol.validate()),
        ] {
            if let Err(e) = r {
                bad.push(format!("{what}: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(bad))
        }
    }
}
