//! Discrete-time event loop.
//!
//! Per tick `t`:
//!
//! 1. movements due at `t` update the channel geometry (and, when
//!    announced, the node's own position and moved flag);
//! 2. everything queued at `t - 1` is broadcast, honest nodes first in
//!    ascending id order, then attackers;
//! 3. every node runs one protocol round in ascending id order;
//! 4. attackers queue their frames.
//!
//! Every node starts out knowing the true position of every other node.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::model::{location_key, AlertObject, BftMessage, Location, Message, NodeId, PayloadMessage, Rssi, Tick};
use crate::protocol::{Action, NodeConfig, NodeState};
use crate::sim::metrics::{
    AlertRecord, AttackReport, BftRecord, MovementReport, NodeCounts, RunMetrics, TrustSample, ATTACK_WINDOW,
    DETECTION_WINDOW,
};
use crate::sim::scenario::{Attack, Scenario};
use crate::sim::trace::{Event, RssiRow, Trace, TRACE_VERSION};
use crate::wire;

/// Trust is sampled every this many ticks.
pub const TRUST_SAMPLE_PERIOD: Tick = 10;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trace: Trace,
    /// Node states after the last tick, ascending by id.
    pub nodes: Vec<NodeState>,
}

struct Honest {
    label: String,
    period: Tick,
    state: NodeState,
}

struct Attacker {
    label: String,
    radio: NodeId,
    attack: Attack,
    seq: u64,
    captured: Option<(Tick, PayloadMessage)>,
}

struct Labels(BTreeMap<NodeId, String>);

impl Labels {
    fn of(&self, id: &NodeId) -> String {
        self.0.get(id).cloned().unwrap_or_else(|| id.to_string())
    }
}

/// Radio identity of the `i`-th foreign attacker.
fn attacker_radio(i: usize) -> NodeId {
    NodeId::new([0x06, 0, 0, 0, 0xff, i as u8])
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    Sim::new(scenario)?.run()
}

struct Sim<'a> {
    sc: &'a Scenario,
    channel: Channel,
    nodes: Vec<Honest>,
    index: BTreeMap<NodeId, usize>,
    attackers: Vec<Attacker>,
    labels: Labels,
    sensor_rng: ChaCha8Rng,
    trace: Trace,
    counts: BTreeMap<String, NodeCounts>,
    bfts: Vec<BftRecord>,
    alerts: Vec<AlertRecord>,
    injected: u64,
    trust: Vec<TrustSample>,
    attack_reports: Vec<Option<AttackReport>>,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let mut channel = Channel::new(crate::channel::ChannelConfig { seed: sc.seed, ..sc.channel })?;
        let mut specs: Vec<_> = sc.nodes.iter().collect();
        specs.sort_by_key(|n| n.mac);
        let mut nodes = Vec::with_capacity(specs.len());
        for spec in &specs {
            channel.register(spec.mac, spec.position);
            let mut state = NodeState::new(NodeConfig {
                id: spec.mac,
                location: spec.position,
                sensor_type: spec.sensor_type,
                params: sc.protocol,
                filter: sc.filter.clone(),
            })?;
            for peer in &specs {
                state.introduce_peer(peer.mac, peer.sensor_type, Some(peer.position));
            }
            nodes.push(Honest { label: spec.id.clone(), period: spec.payload_period, state });
        }
        let index = specs.iter().enumerate().map(|(i, s)| (s.mac, i)).collect();
        let mut labels: BTreeMap<NodeId, String> = specs.iter().map(|s| (s.mac, s.id.clone())).collect();

        let mut attackers = Vec::new();
        for (i, attack) in sc.resolved_attacks()?.into_iter().enumerate() {
            let (radio, label) = match &attack {
                Attack::IdentitySpoof { params, .. } => {
                    let r = attacker_radio(i);
                    channel.register(r, params.position);
                    (r, format!("attacker-{i}"))
                }
                Attack::Replay { params, .. } => {
                    let r = attacker_radio(i);
                    channel.register(r, params.position);
                    (r, format!("attacker-{i}"))
                }
                Attack::MaliciousBft { params, .. } => {
                    let spec = sc.node(&params.attacker).expect("validated");
                    (spec.mac, spec.id.clone())
                }
            };
            labels.entry(radio).or_insert_with(|| label.clone());
            attackers.push(Attacker { label, radio, attack, seq: 1_000_000, captured: None });
        }
        let counts = specs.iter().map(|s| (s.id.clone(), NodeCounts::default())).collect();
        let n_attacks = attackers.len();
        Ok(Sim {
            sc,
            channel,
            nodes,
            index,
            attackers,
            labels: Labels(labels),
            sensor_rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5345_4e53_4f52),
            trace: Trace::default(),
            counts,
            bfts: Vec::new(),
            alerts: Vec::new(),
            injected: 0,
            trust: Vec::new(),
            attack_reports: vec![None; n_attacks],
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        let mut queue: Vec<(NodeId, Message)> = Vec::new();
        for t in 0..self.sc.duration {
            self.apply_movements(t)?;
            let mut inboxes: Vec<Vec<(Vec<u8>, Rssi)>> = vec![Vec::new(); self.nodes.len()];
            for (from, msg) in std::mem::take(&mut queue) {
                self.deliver(from, &msg, t, &mut inboxes)?;
            }
            for (i, inbox) in inboxes.into_iter().enumerate() {
                let sensor = (t % self.nodes[i].period == 0).then(|| self.sensor_rng.random::<[u8; 4]>().to_vec());
                let node = &mut self.nodes[i];
                let actions = node.state.tick_frames(&inbox, sensor, t);
                let me = node.state.id();
                let label = node.label.clone();
                for p in node.state.take_probes() {
                    self.trace.rssi.push(RssiRow {
                        tick: p.tick,
                        receiver: label.clone(),
                        sender: self.labels.of(&p.sender),
                        rssi_raw: p.raw.value(),
                        rssi_smoothed: p.smoothed.value(),
                    });
                }
                for a in &actions {
                    self.record_action(t, &label, a);
                    if let Some(m) = a.outgoing() {
                        queue.push((me, m));
                    }
                }
            }
            queue.extend(self.attack_frames(t));
            self.snapshots(t);
        }
        Ok(self.finish())
    }

    fn apply_movements(&mut self, t: Tick) -> Result<()> {
        for m in self.sc.movements.iter().filter(|m| m.at == t) {
            let mac = self.sc.node(&m.node).expect("validated").mac;
            self.channel.move_node(mac, m.to, t)?;
            if m.announce {
                self.nodes[self.index[&mac]].state.relocate(m.to, t);
            }
        }
        Ok(())
    }

    fn deliver(&mut self, from: NodeId, msg: &Message, t: Tick, inboxes: &mut [Vec<(Vec<u8>, Rssi)>]) -> Result<()> {
        let frame = wire::encode(msg);
        for (to, rssi) in self.channel.broadcast(from, t)? {
            if let Some(&i) = self.index.get(&to) {
                let c = self.counts.get_mut(&self.nodes[i].label).expect("known node");
                match msg {
                    Message::Payload(_) => c.payload_received += 1,
                    Message::Bft(_) => c.bft_received += 1,
                    Message::Alert(_) => c.alert_received += 1,
                }
                inboxes[i].push((frame.clone(), rssi));
            } else if let Some(a) = self.attackers.iter_mut().find(|a| a.radio == to) {
                if let (Attack::Replay { at, params }, Message::Payload(p)) = (&a.attack, msg) {
                    let target = self.sc.node(&params.target).expect("validated").mac;
                    if t >= *at && p.sender == target && a.captured.is_none() {
                        a.captured = Some((t, p.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    fn attack_frames(&mut self, t: Tick) -> Vec<(NodeId, Message)> {
        let mut out = Vec::new();
        let mut events = Vec::new();
        for a in &mut self.attackers {
            if !a.attack.active(t) {
                continue;
            }
            match &a.attack {
                Attack::IdentitySpoof { params, .. } => {
                    let victim = self.sc.node(&params.victim).expect("validated");
                    let at = self.channel.position(&victim.mac).expect("registered");
                    for _ in 0..params.rate {
                        a.seq += 1;
                        let payload = self.sensor_rng.random::<[u8; 4]>().to_vec();
                        let key = location_key(&at, &payload, self.sc.protocol.verify.grid).expect("finite position");
                        out.push((
                            a.radio,
                            Message::Payload(PayloadMessage {
                                sender: victim.mac,
                                seq: a.seq,
                                sensor_type: victim.sensor_type,
                                payload,
                                signed_payload: key,
                                timestamp: t,
                            }),
                        ));
                        events.push(Event {
                            tick: t,
                            node: a.label.clone(),
                            action: "AttackSpoof".into(),
                            details: json!({"as": victim.id, "seq": a.seq}),
                        });
                    }
                }
                Attack::MaliciousBft { at, params } => {
                    if (t - at) % params.period != 0 {
                        continue;
                    }
                    let victim = self.sc.node(&params.victim).expect("validated");
                    let me = &self.nodes[self.index[&a.radio]].state;
                    out.push((
                        a.radio,
                        Message::Bft(BftMessage {
                            sender: a.radio,
                            sender_location: me.location(),
                            subject: victim.mac,
                            measured_rssi: Rssi::clamped(params.fabricated_rssi),
                            ref_seq: None,
                            timestamp: t,
                        }),
                    ));
                    events.push(Event {
                        tick: t,
                        node: a.label.clone(),
                        action: "AttackBft".into(),
                        details: json!({"subject": victim.id, "measured_rssi": params.fabricated_rssi}),
                    });
                }
                Attack::Replay { at, params } => {
                    let Some((captured_at, msg)) = &a.captured else {
                        continue;
                    };
                    if t < captured_at + params.delay || (t - at) % params.period != 0 {
                        continue;
                    }
                    out.push((a.radio, Message::Payload(msg.clone())));
                    events.push(Event {
                        tick: t,
                        node: a.label.clone(),
                        action: "AttackReplay".into(),
                        details: json!({"as": params.target, "seq": msg.seq, "captured_at": captured_at}),
                    });
                }
            }
        }
        self.injected += events.len() as u64;
        self.trace.events.extend(events);
        out
    }

    fn record_action(&mut self, t: Tick, label: &str, a: &Action) {
        let c = self.counts.get_mut(label).expect("known node");
        let l = &self.labels;
        let details = match a {
            Action::SendPayload(m) => {
                c.payload_sent += 1;
                json!({"seq": m.seq, "sensor_type": m.sensor_type, "key": m.signed_payload.to_hex()})
            }
            Action::SendBft(m) => {
                c.bft_sent += 1;
                self.bfts.push(BftRecord { tick: t, sender: label.to_string(), subject: l.of(&m.subject) });
                json!({"subject": l.of(&m.subject), "measured_rssi": m.measured_rssi, "ref_seq": m.ref_seq})
            }
            Action::SendAlert(m) => {
                c.alert_sent += 1;
                let object = match &m.object {
                    AlertObject::Node(n) => l.of(n),
                    AlertObject::Reading { sensor_type, .. } => format!("{sensor_type:?}"),
                };
                self.alerts.push(AlertRecord {
                    tick: t,
                    sender: label.to_string(),
                    alert_type: format!("{:?}", m.alert_type),
                    object: object.clone(),
                });
                json!({"alert_type": m.alert_type, "object": object, "ref_bft": m.ref_bft})
            }
            Action::StoreTrusted(m) => {
                c.trusted += 1;
                json!({"sender": l.of(&m.sender), "seq": m.seq})
            }
            Action::Ignore(r) => {
                c.ignored += 1;
                serde_json::to_value(r).expect("ignore reasons serialize")
            }
        };
        self.trace.events.push(Event { tick: t, node: label.to_string(), action: a.name().to_string(), details });
    }

    fn snapshots(&mut self, t: Tick) {
        let last = t + 1 == self.sc.duration;
        if t % TRUST_SAMPLE_PERIOD == 0 || last {
            for obs in &self.nodes {
                for subj in &self.nodes {
                    if obs.state.id() != subj.state.id() {
                        self.trust.push(TrustSample {
                            tick: t,
                            observer: obs.label.clone(),
                            subject: subj.label.clone(),
                            trust: obs.state.trust(&subj.state.id()).value(),
                        });
                    }
                }
            }
        }
        for (i, a) in self.attackers.iter().enumerate() {
            let due = a.attack.at() + ATTACK_WINDOW;
            if self.attack_reports[i].is_some() || !(t == due || (last && t < due)) {
                continue;
            }
            let victim = self.sc.node(a.attack.victim()).expect("validated").mac;
            let mut tau = BTreeMap::new();
            let mut distrusting = Vec::new();
            let mut victim_trust = BTreeMap::new();
            for n in self.nodes.iter().filter(|n| n.state.id() != victim) {
                tau.insert(n.label.clone(), n.state.tau(t));
                victim_trust.insert(n.label.clone(), n.state.trust(&victim).value());
                if n.state.distrust(&victim, t) {
                    distrusting.push(n.label.clone());
                }
            }
            let victim_label = self.labels.of(&victim);
            let bft_senders = self
                .bfts
                .iter()
                .filter(|b| b.subject == victim_label && b.tick >= a.attack.at() && b.tick <= due)
                .filter(|b| !matches!(a.attack, Attack::MaliciousBft { .. }) || b.sender != a.label)
                .map(|b| b.sender.clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            self.attack_reports[i] = Some(AttackReport {
                kind: a.attack.kind(),
                at: a.attack.at(),
                victim: victim_label,
                bft_senders,
                snapshot_tick: t,
                tau,
                distrusting,
                victim_trust,
            });
        }
    }

    fn finish(self) -> RunOutput {
        let sc = self.sc;
        let movements: Vec<MovementReport> = sc
            .movements
            .iter()
            .map(|m| {
                let mut bft_in_window = BTreeMap::new();
                let mut first_latency = BTreeMap::new();
                for n in self.nodes.iter().filter(|n| n.label != m.node) {
                    let about: Vec<Tick> = self
                        .bfts
                        .iter()
                        .filter(|b| b.sender == n.label && b.subject == m.node && b.tick >= m.at)
                        .map(|b| b.tick)
                        .collect();
                    bft_in_window
                        .insert(n.label.clone(), about.iter().filter(|&&t| t <= m.at + DETECTION_WINDOW).count());
                    first_latency.insert(n.label.clone(), about.first().map(|t| t - m.at));
                }
                MovementReport { node: m.node.clone(), at: m.at, to: m.to.as_array(), bft_in_window, first_latency }
            })
            .collect();
        let settle = sc.protocol.bft_window;
        let attacks: Vec<Attack> = sc.resolved_attacks().expect("validated");
        let static_false_positives = self
            .bfts
            .iter()
            .filter(|b| !sc.movements.iter().any(|m| b.tick >= m.at && b.tick <= m.at + settle))
            .filter(|b| !attacks.iter().any(|a| b.tick >= a.at() && a.until().is_none_or(|u| b.tick <= u + settle)))
            .count() as u64;
        let metrics = RunMetrics {
            trace_version: TRACE_VERSION,
            scenario: sc.name.clone(),
            seed: sc.seed,
            duration: sc.duration,
            nodes: self.counts,
            bfts: self.bfts,
            alerts: self.alerts,
            movements,
            attacks: self.attack_reports.into_iter().flatten().collect(),
            injected: self.injected,
            static_false_positives,
            trust: self.trust,
        };
        RunOutput { metrics, trace: self.trace, nodes: self.nodes.into_iter().map(|n| n.state).collect() }
    }
}

/// Where a node sits at tick `t` according to the scenario's movements.
pub fn position_at(sc: &Scenario, label: &str, t: Tick) -> Result<Location> {
    let spec = sc.node(label).ok_or_else(|| Error::Config(format!("unknown node {label:?}")))?;
    Ok(sc
        .movements
        .iter()
        .filter(|m| m.node == label && m.at <= t)
        .max_by_key(|m| m.at)
        .map_or(spec.position, |m| m.to))
}
