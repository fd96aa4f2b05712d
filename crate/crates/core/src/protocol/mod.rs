//! Per-node Proof-of-Location state machine.
//!
//! A node is driven one tick at a time: [`NodeState::tick`] consumes the
//! messages heard this round and returns the [`Action`]s to put on air next
//! round. Nothing else leaves the node, so replaying the same inputs yields
//! the same actions.
//!
//! Processing order inside a tick:
//!
//! 1. inbox in arrival order (payload into the pool, BFT bookkeeping and
//!    self-defense, alert accept/reject/ignore),
//! 2. pool validation (verify, or question the sender with a BFT message),
//! 3. payload emission when the node has a fresh sensor reading.

mod decision;
mod pool;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

pub use decision::{self_defense_response, DefenseInputs, DefenseResponse, SELF_DEFENSE_TABLE};
pub use pool::{MessagePool, PoolEntry};

use crate::error::{Error, Result};
use crate::filters::{
    AnySmoother, FilterSpec, Smoother, TriggerState, DEFAULT_COOLDOWN, DEFAULT_THRESHOLD_DB, DEFAULT_WARMUP,
};
use crate::localization::{candidate_cells, estimate_subject, matching_cell, Observer, PathLossModel, VerifyParams};
use crate::model::{
    location_key, AlertMessage, AlertObject, AlertType, BftMessage, BftRef, GridCell, Location, Message, NodeId,
    PayloadMessage, Rssi, SensorType, Tick, TrustScore,
};
use crate::topology::{BftObservation, LinkKey, PeerRecord, Source, TopologyStore, DEFAULT_HISTORY};
use crate::wire;

/// BFT-count threshold, absolute or relative to the peers currently in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Tau {
    Count(usize),
    Fraction(f64),
}

impl Tau {
    pub fn resolve(&self, in_range: usize) -> usize {
        match *self {
            Tau::Count(n) => n,
            Tau::Fraction(f) => (f * in_range as f64).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Trust below this means distrust.
    pub epsilon: f64,
    pub tau: Tau,
    pub trust_step: f64,
    pub initial_trust: f64,
    /// dB tolerance for claimed-vs-measured and history comparisons.
    pub consistency_tol: f64,
    /// Measured samples considered by the history check.
    pub history_window: usize,
    pub history_capacity: usize,
    pub pool_ttl: Tick,
    /// Window for counting BFT messages and peers in range.
    pub bft_window: Tick,
    /// Most BFT messages about one subject this node sends per `bft_window`.
    pub bft_budget: usize,
    /// Most alerts of one kind about one object this node sends per `bft_window`.
    pub alert_budget: usize,
    pub model: PathLossModel,
    pub verify: VerifyParams,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            epsilon: 0.3,
            tau: Tau::Fraction(0.5),
            trust_step: 0.1,
            initial_trust: 1.0,
            consistency_tol: 5.0,
            history_window: 32,
            history_capacity: DEFAULT_HISTORY,
            pool_ttl: 120,
            bft_window: 120,
            bft_budget: 2,
            alert_budget: 1,
            model: PathLossModel::default(),
            verify: VerifyParams::default(),
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad.push(format!("epsilon must be in (0, 1), got {}", self.epsilon));
        }
        match self.tau {
            Tau::Fraction(f) if !(f > 0.0 && f.is_finite()) => bad.push(format!("tau fraction must be > 0, got {f}")),
            Tau::Count(0) => bad.push("tau count must be > 0".into()),
            _ => {}
        }
        if !(self.trust_step > 0.0 && self.trust_step <= 1.0) {
            bad.push(format!("trust_step must be in (0, 1], got {}", self.trust_step));
        }
        if !(0.0..=1.0).contains(&self.initial_trust) {
            bad.push(format!("initial_trust must be in [0, 1], got {}", self.initial_trust));
        }
        if !(self.consistency_tol > 0.0) {
            bad.push("consistency_tol must be > 0".into());
        }
        if self.history_window == 0 || self.history_capacity == 0 {
            bad.push("history window and capacity must be > 0".into());
        }
        if self.pool_ttl == 0 || self.bft_window == 0 {
            bad.push("pool_ttl and bft_window must be > 0".into());
        }
        if self.bft_budget == 0 || self.alert_budget == 0 {
            bad.push("budgets must be > 0".into());
        }
        if let Err(e) = self.model.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.verify.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Grid cell of a fix and the bits of its search radius.
type FixMemo = Option<(GridCell, u64)>;

/// Per-link smoothing and trigger configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    pub smoother: FilterSpec,
    pub threshold: f64,
    pub cooldown: Tick,
    /// Samples a link must see before its trigger is armed.
    pub warmup: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            smoother: FilterSpec::default(),
            threshold: DEFAULT_THRESHOLD_DB,
            cooldown: DEFAULT_COOLDOWN,
            warmup: DEFAULT_WARMUP,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        self.smoother.build()?;
        TriggerState::new(self.threshold, self.cooldown)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum IgnoreReason {
    DecodeError(String),
    Malformed(String),
    /// A message claiming this node's own identity.
    OwnIdentity,
    Stale {
        sender: NodeId,
        seq: u64,
    },
    Duplicate {
        sender: NodeId,
        seq: u64,
    },
    Expired {
        sender: NodeId,
        seq: u64,
    },
    /// Self-defense found no actionable cause.
    BftUnexplained {
        sender: NodeId,
        inputs: DefenseInputs,
    },
    RateLimited {
        subject: NodeId,
    },
    AlertUndecided {
        sender: NodeId,
    },
    MeasurementAlert {
        sender: NodeId,
    },
    UnknownPeer(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Action {
    SendPayload(PayloadMessage),
    SendBft(BftMessage),
    SendAlert(AlertMessage),
    StoreTrusted(PayloadMessage),
    Ignore(IgnoreReason),
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::SendPayload(_) => "SendPayload",
            Action::SendBft(_) => "SendBft",
            Action::SendAlert(_) => "SendAlert",
            Action::StoreTrusted(_) => "StoreTrusted",
            Action::Ignore(_) => "Ignore",
        }
    }

    /// The message to broadcast, if this action sends one.
    pub fn outgoing(&self) -> Option<Message> {
        match self {
            Action::SendPayload(m) => Some(Message::Payload(m.clone())),
            Action::SendBft(m) => Some(Message::Bft(m.clone())),
            Action::SendAlert(m) => Some(Message::Alert(m.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AlertDecision {
    Accept,
    Reject,
    Ignore,
}

/// Smoothing state for one observed peer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFilter {
    smoother: AnySmoother,
    trigger: TriggerState,
    samples: usize,
    smoothed: Option<f64>,
}

impl LinkFilter {
    fn new(p: &FilterParams) -> Result<Self> {
        Ok(LinkFilter {
            smoother: p.smoother.build()?,
            trigger: TriggerState::new(p.threshold, p.cooldown)?,
            samples: 0,
            smoothed: None,
        })
    }

    pub fn smoothed(&self) -> Option<Rssi> {
        self.smoothed.map(Rssi::clamped)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

/// One raw reception and the smoothed value right after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiProbe {
    pub tick: Tick,
    pub sender: NodeId,
    pub raw: Rssi,
    pub smoothed: Rssi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub location: Location,
    pub sensor_type: SensorType,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub filter: FilterParams,
}

const TRUSTED_MEMORY: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    id: NodeId,
    location: Location,
    sensor_type: SensorType,
    params: ProtocolParams,
    filter: FilterParams,
    store: TopologyStore,
    pool: MessagePool,
    links: BTreeMap<NodeId, LinkFilter>,
    seq: u64,
    moved_until: Option<Tick>,
    last_heard: BTreeMap<NodeId, Tick>,
    bft_sent: BTreeMap<NodeId, VecDeque<Tick>>,
    alerts_sent: BTreeMap<(u8, NodeId), VecDeque<Tick>>,
    trusted: VecDeque<PayloadMessage>,
    trusted_total: u64,
    probes: Vec<RssiProbe>,
}

impl NodeState {
    pub fn new(cfg: NodeConfig) -> Result<Self> {
        cfg.params.validate()?;
        cfg.filter.validate()?;
        if !cfg.location.is_finite() {
            let l = cfg.location;
            return Err(Error::InvalidLocation { x: l.x, y: l.y, z: l.z });
        }
        Ok(NodeState {
            id: cfg.id,
            location: cfg.location,
            sensor_type: cfg.sensor_type,
            store: TopologyStore::new(cfg.params.history_capacity),
            pool: MessagePool::new(cfg.params.pool_ttl),
            params: cfg.params,
            filter: cfg.filter,
            links: BTreeMap::new(),
            seq: 0,
            moved_until: None,
            last_heard: BTreeMap::new(),
            bft_sent: BTreeMap::new(),
            alerts_sent: BTreeMap::new(),
            trusted: VecDeque::new(),
            trusted_total: 0,
            probes: Vec::new(),
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn store(&self) -> &TopologyStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TopologyStore {
        &mut self.store
    }

    pub fn pool(&self) -> &MessagePool {
        &self.pool
    }

    pub fn link(&self, peer: &NodeId) -> Option<&LinkFilter> {
        self.links.get(peer)
    }

    pub fn smoothed(&self, peer: &NodeId) -> Option<Rssi> {
        self.links.get(peer).and_then(|l| l.smoothed())
    }

    pub fn trusted_total(&self) -> u64 {
        self.trusted_total
    }

    pub fn trusted(&self) -> impl Iterator<Item = &PayloadMessage> {
        self.trusted.iter()
    }

    /// Registers a peer learned during network initialisation.
    pub fn introduce_peer(&mut self, id: NodeId, sensor_type: SensorType, location: Option<Location>) {
        if id == self.id {
            return;
        }
        let mut rec = PeerRecord::new(id, sensor_type, location);
        rec.trust = TrustScore::new(self.params.initial_trust);
        self.store.upsert_peer(rec);
    }

    pub fn trust(&self, peer: &NodeId) -> TrustScore {
        self.store.trust(peer).unwrap_or(TrustScore::new(self.params.initial_trust))
    }

    /// The node learns it was moved and adopts the new position.
    pub fn relocate(&mut self, to: Location, now: Tick) {
        self.location = to;
        self.moved_until = Some(now + self.params.bft_window);
    }

    pub fn moved_flag(&self, now: Tick) -> bool {
        self.moved_until.is_some_and(|t| now < t)
    }

    /// Drains the per-reception RSSI probes collected since the last call.
    pub fn take_probes(&mut self) -> Vec<RssiProbe> {
        std::mem::take(&mut self.probes)
    }

    /// Peers heard within the BFT window.
    pub fn peers_in_range(&self, now: Tick) -> usize {
        self.last_heard.values().filter(|&&t| now.saturating_sub(t) < self.params.bft_window).count()
    }

    pub fn tau(&self, now: Tick) -> usize {
        self.params.tau.resolve(self.peers_in_range(now))
    }

    /// `(trust < epsilon) or (distinct recent BFT senders about target > tau)`.
    pub fn distrust(&self, target: &NodeId, now: Tick) -> bool {
        self.trust(target).value() < self.params.epsilon
            || self.store.count_recent_bft(target, self.params.bft_window, now) > self.tau(now)
    }

    pub fn emit_payload(&mut self, sensor_value: Vec<u8>, now: Tick) -> Vec<Action> {
        self.seq += 1;
        let key = location_key(&self.location, &sensor_value, self.params.verify.grid)
            .expect("node location and grid are validated at construction");
        vec![Action::SendPayload(PayloadMessage {
            sender: self.id,
            seq: self.seq,
            sensor_type: self.sensor_type,
            payload: sensor_value,
            signed_payload: key,
            timestamp: now,
        })]
    }

    fn note_reception(&mut self, sender: NodeId, rssi: Rssi, now: Tick) {
        self.last_heard.insert(sender, now);
        if let Ok(link) = LinkKey::new(self.id, sender) {
            // several frames from one sender in a tick: the store keeps the first
            let _ = self.store.record_rssi(link, now, rssi, Source::Measured);
        }
        let filter = match self.links.get_mut(&sender) {
            Some(f) => f,
            None => {
                let f = LinkFilter::new(&self.filter).expect("filter params validated at construction");
                self.links.entry(sender).or_insert(f)
            }
        };
        let y = filter.smoother.step(rssi.value());
        filter.samples += 1;
        filter.smoothed = Some(y);
        self.probes.push(RssiProbe { tick: now, sender, raw: rssi, smoothed: Rssi::clamped(y) });
    }

    pub fn receive_payload(&mut self, msg: PayloadMessage, rssi: Rssi, now: Tick) -> Vec<Action> {
        if msg.sender == self.id {
            return vec![Action::Ignore(IgnoreReason::OwnIdentity)];
        }
        if now.saturating_sub(msg.timestamp) > self.params.pool_ttl {
            return vec![Action::Ignore(IgnoreReason::Stale { sender: msg.sender, seq: msg.seq })];
        }
        self.note_reception(msg.sender, rssi, now);
        if self.store.peer(&msg.sender).is_none() {
            self.introduce_peer(msg.sender, msg.sensor_type, None);
        }
        let (sender, seq) = (msg.sender, msg.seq);
        if self.pool.insert(msg, rssi, now) {
            Vec::new()
        } else {
            vec![Action::Ignore(IgnoreReason::Duplicate { sender, seq })]
        }
    }

    pub fn receive_bft(&mut self, msg: BftMessage, rssi: Rssi, now: Tick) -> Vec<Action> {
        if msg.subject == msg.sender {
            return vec![Action::Ignore(IgnoreReason::Malformed(format!("bft from {} about itself", msg.sender)))];
        }
        if msg.sender == self.id {
            return vec![Action::Ignore(IgnoreReason::OwnIdentity)];
        }
        // reported relation sender -> subject
        if let Ok(link) = LinkKey::new(msg.sender, msg.subject) {
            let _ = self.store.record_rssi(link, now, msg.measured_rssi, Source::Reported);
        }
        // measured relation self -> sender
        self.note_reception(msg.sender, rssi, now);
        match self.store.peer_mut(&msg.sender) {
            Some(p) => p.location = Some(msg.sender_location),
            None => {
                let mut rec = PeerRecord::new(msg.sender, SensorType::Generic, Some(msg.sender_location));
                rec.trust = TrustScore::new(self.params.initial_trust);
                self.store.upsert_peer(rec);
            }
        }
        self.store.observe_bft(BftObservation {
            sender: msg.sender,
            subject: msg.subject,
            sent_at: msg.timestamp,
            received_at: now,
        });
        if msg.subject == self.id {
            self.self_defense(&msg, now)
        } else {
            Vec::new()
        }
    }

    /// Evaluates the four self-defense predicates for a BFT about this node.
    pub fn defense_inputs(&self, msg: &BftMessage, now: Tick) -> DefenseInputs {
        let b = msg.sender;
        let tol = self.params.consistency_tol;
        let own = self.smoothed(&b);
        let claimed_consistent = own.is_none_or(|o| (msg.measured_rssi.value() - o.value()).abs() <= tol);
        let history_consistent = match (own, LinkKey::new(self.id, b)) {
            (Some(o), Ok(link)) => self.store.history_consistent(&link, o, self.params.history_window, tol),
            _ => true,
        };
        let distrust_self =
            self.store.count_recent_bft(&self.id, self.params.bft_window, now) > self.tau(now) || self.moved_flag(now);
        DefenseInputs { claimed_consistent, history_consistent, distrust_sender: self.distrust(&b, now), distrust_self }
    }

    pub fn self_defense(&mut self, msg: &BftMessage, now: Tick) -> Vec<Action> {
        if msg.subject != self.id {
            return Vec::new();
        }
        let b = msg.sender;
        let inputs = self.defense_inputs(msg, now);
        match self_defense_response(inputs) {
            DefenseResponse::Ignore => vec![Action::Ignore(IgnoreReason::BftUnexplained { sender: b, inputs })],
            DefenseResponse::BftAboutSender => match self.bft_about(b, None, now) {
                Some(bft) => vec![Action::SendBft(bft)],
                None => vec![Action::Ignore(IgnoreReason::RateLimited { subject: b })],
            },
            DefenseResponse::SelfDistrustAlert => self.alert(AlertType::SelfDistrust, self.id, None, now),
            DefenseResponse::DistrustAlert => self.alert(AlertType::Distrust, b, Some(msg.reference()), now),
        }
    }

    fn alert(&mut self, kind: AlertType, object: NodeId, ref_bft: Option<BftRef>, now: Tick) -> Vec<Action> {
        let window = self.params.bft_window;
        let sent = self.alerts_sent.entry((kind.code(), object)).or_default();
        sent.retain(|&t| now.saturating_sub(t) < window);
        if sent.len() >= self.params.alert_budget {
            return vec![Action::Ignore(IgnoreReason::RateLimited { subject: object })];
        }
        sent.push_back(now);
        vec![Action::SendAlert(AlertMessage {
            sender: self.id,
            alert_type: kind,
            object: AlertObject::Node(object),
            ref_bft,
            timestamp: now,
        })]
    }

    /// Builds a BFT message about `subject` if the per-subject limits allow it.
    fn bft_about(&mut self, subject: NodeId, ref_seq: Option<u64>, now: Tick) -> Option<BftMessage> {
        let measured = self.smoothed(&subject)?;
        let window = self.params.bft_window;
        let cooldown = self.filter.cooldown;
        let budget = self.params.bft_budget;
        let sent = self.bft_sent.entry(subject).or_default();
        sent.retain(|&t| now.saturating_sub(t) < window);
        if sent.len() >= budget || sent.back().is_some_and(|&t| now.saturating_sub(t) < cooldown) {
            return None;
        }
        sent.push_back(now);
        Some(BftMessage {
            sender: self.id,
            sender_location: self.location,
            subject,
            measured_rssi: measured,
            ref_seq,
            timestamp: now,
        })
    }

    pub fn classify_alert(&self, alert: &AlertMessage, now: Tick) -> AlertDecision {
        let (AlertType::Distrust, AlertObject::Node(b), Some(r)) = (alert.alert_type, alert.object, alert.ref_bft)
        else {
            return AlertDecision::Ignore;
        };
        let a = alert.sender;
        let tol = self.params.consistency_tol;
        let window = self.params.history_window;
        let link_consistent = |peer: NodeId| -> Option<bool> {
            let own = self.smoothed(&peer)?;
            let link = LinkKey::new(self.id, peer).ok()?;
            Some(self.store.history_consistent(&link, own, window, tol))
        };
        let seen = self.store.has_observed_bft(&r) && r.sender == b && r.subject == a;
        let a_consistent = link_consistent(a).unwrap_or(true);
        let a_distrusted = self.distrust(&a, now);
        if !seen || (!a_consistent && a_distrusted) {
            return AlertDecision::Reject;
        }
        let a_confirmed = a_consistent && !a_distrusted;
        let b_doubted = link_consistent(b) == Some(false) && self.distrust(&b, now);
        if a_confirmed && b_doubted {
            AlertDecision::Accept
        } else {
            AlertDecision::Ignore
        }
    }

    pub fn receive_alert(&mut self, alert: AlertMessage, now: Tick) -> Vec<Action> {
        let a = alert.sender;
        if a == self.id {
            return vec![Action::Ignore(IgnoreReason::OwnIdentity)];
        }
        let step = self.params.trust_step;
        match alert.alert_type {
            AlertType::MeasurementAlert => vec![Action::Ignore(IgnoreReason::MeasurementAlert { sender: a })],
            AlertType::SelfDistrust => {
                if alert.object != AlertObject::Node(a) {
                    return vec![Action::Ignore(IgnoreReason::Malformed("self-distrust about another node".into()))];
                }
                let Some(peer) = self.store.peer_mut(&a) else {
                    return vec![Action::Ignore(IgnoreReason::UnknownPeer(a))];
                };
                peer.location_verified = false;
                let _ = self.store.adjust_trust(&a, -step);
                Vec::new()
            }
            AlertType::Distrust => {
                let (AlertObject::Node(b), Some(r)) = (alert.object, alert.ref_bft) else {
                    return vec![Action::Ignore(IgnoreReason::Malformed(
                        "distrust alert without bft reference".into(),
                    ))];
                };
                if b == a || r.sender != b || r.subject != a {
                    return vec![Action::Ignore(IgnoreReason::Malformed("distrust alert reference mismatch".into()))];
                }
                match self.classify_alert(&alert, now) {
                    AlertDecision::Accept => {
                        let _ = self.store.adjust_trust(&b, -step);
                        Vec::new()
                    }
                    AlertDecision::Reject => {
                        let _ = self.store.adjust_trust(&a, -step);
                        let dissent = self.store.recent_bft_senders(&a, self.params.bft_window, now);
                        for x in dissent {
                            if x != a && x != self.id {
                                let _ = self.store.adjust_trust(&x, step);
                            }
                        }
                        Vec::new()
                    }
                    AlertDecision::Ignore => vec![Action::Ignore(IgnoreReason::AlertUndecided { sender: a })],
                }
            }
        }
    }

    /// Verifies pooled payloads and questions senders.
    ///
    /// A payload is trusted when its key matches the sender's stored
    /// location, or a cell around the multilateration estimate (which then
    /// becomes the stored location). A key that matches neither is
    /// contradicted. The sender is questioned when one of its payloads is
    /// contradicted or when the RSSI trigger on its link fires.
    pub fn validate_pool(&mut self, now: Tick) -> Vec<Action> {
        let mut actions: Vec<Action> = self
            .pool
            .expire(now)
            .into_iter()
            .map(|e| Action::Ignore(IgnoreReason::Expired { sender: e.msg.sender, seq: e.msg.seq }))
            .collect();
        let verify = self.params.verify;
        let grid = verify.grid;

        for subject in self.pool.senders() {
            let (smoothed, fired) = match self.links.get_mut(&subject) {
                Some(l) => {
                    let fired = match l.smoothed {
                        Some(y) if l.samples >= self.filter.warmup => l.trigger.check_settling(y, now),
                        _ => false,
                    };
                    (l.smoothed(), fired)
                }
                None => (None, false),
            };
            let stored = self.store.peer(&subject).and_then(|p| p.location).and_then(|l| GridCell::of(&l, grid).ok());
            let stored_cells = stored.map(|c| candidate_cells(&c.center(grid), verify.base_radius, grid));
            let observer = Observer { id: self.id, location: self.location, smoothed };
            // estimated lazily: only needed when the stored location fails
            let mut fix = None;
            let mut fix_cells: Option<(FixMemo, Vec<GridCell>)> = None;

            let mut contradicted = None;
            let mut relocated = None;
            let mut trusted_any = false;
            let mut keep = Vec::with_capacity(self.pool.len());
            for mut entry in std::mem::take(self.pool.entries_mut()) {
                if entry.msg.sender != subject {
                    keep.push(entry);
                    continue;
                }
                let at_stored = match (entry.stored_checked, stored) {
                    (Some((c, ok)), Some(s)) if c == s => ok,
                    (_, Some(s)) => {
                        let ok = matching_cell(&entry.msg, stored_cells.as_deref().unwrap_or(&[]), grid).is_some();
                        entry.stored_checked = Some((s, ok));
                        ok
                    }
                    (_, None) => false,
                };
                let hit = if at_stored {
                    Some(None)
                } else {
                    if fix.is_none() {
                        fix =
                            Some(estimate_subject(&subject, &self.store, &observer, &self.params.model, &verify, now));
                    }
                    match fix.as_ref().and_then(|f| f.as_ref()) {
                        Some(f) => {
                            let (memo, cells) = fix_cells.get_or_insert_with(|| {
                                let r = verify.radius(f);
                                let memo = GridCell::of(&f.location, grid).ok().map(|c| (c, r.to_bits()));
                                (memo, candidate_cells(&f.location, r, grid))
                            });
                            let found = match (entry.checked, *memo) {
                                (Some((c, r, found)), Some((mc, mr))) if c == mc && r == mr => found,
                                _ => {
                                    let found = matching_cell(&entry.msg, cells, grid);
                                    if let Some((c, r)) = *memo {
                                        entry.checked = Some((c, r, found));
                                    }
                                    found
                                }
                            };
                            found.map(Some)
                        }
                        None => None,
                    }
                };
                match hit {
                    Some(cell) => {
                        relocated = relocated.or(cell);
                        trusted_any = true;
                        self.remember_trusted(entry.msg.clone());
                        actions.push(Action::StoreTrusted(entry.msg));
                    }
                    None => {
                        if stored.is_some() || matches!(fix, Some(Some(_))) {
                            contradicted = contradicted.max(Some(entry.msg.seq));
                        }
                        keep.push(entry);
                    }
                }
            }
            *self.pool.entries_mut() = keep;
            if let Some(p) = self.store.peer_mut(&subject) {
                if let Some(cell) = relocated {
                    p.location = Some(cell.center(grid));
                }
                if trusted_any {
                    p.location_verified = true;
                }
            }
            if fired || contradicted.is_some() {
                let ref_seq = contradicted.or_else(|| {
                    self.pool.entries().iter().filter(|e| e.msg.sender == subject).map(|e| e.msg.seq).max()
                });
                if let Some(bft) = self.bft_about(subject, ref_seq, now) {
                    actions.push(Action::SendBft(bft));
                }
            }
        }
        actions
    }

    fn remember_trusted(&mut self, msg: PayloadMessage) {
        if self.trusted.len() == TRUSTED_MEMORY {
            self.trusted.pop_front();
        }
        self.trusted.push_back(msg);
        self.trusted_total += 1;
    }

    fn dispatch(&mut self, msg: Message, rssi: Rssi, now: Tick) -> Vec<Action> {
        match msg {
            Message::Payload(m) => self.receive_payload(m, rssi, now),
            Message::Bft(m) => self.receive_bft(m, rssi, now),
            Message::Alert(m) => {
                if m.sender != self.id {
                    self.note_reception(m.sender, rssi, now);
                }
                self.receive_alert(m, now)
            }
        }
    }

    /// One protocol round.
    pub fn tick(&mut self, inbox: Vec<(Message, Rssi)>, sensor_value: Option<Vec<u8>>, now: Tick) -> Vec<Action> {
        let mut actions = Vec::new();
        for (msg, rssi) in inbox {
            actions.extend(self.dispatch(msg, rssi, now));
        }
        actions.extend(self.validate_pool(now));
        if let Some(v) = sensor_value {
            actions.extend(self.emit_payload(v, now));
        }
        actions
    }

    /// Like [`NodeState::tick`] but decodes wire frames first.
    pub fn tick_frames(&mut self, frames: &[(Vec<u8>, Rssi)], sensor_value: Option<Vec<u8>>, now: Tick) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut inbox = Vec::with_capacity(frames.len());
        for (bytes, rssi) in frames {
            match wire::decode(bytes) {
                Ok(m) => inbox.push((m, *rssi)),
                Err(e) => actions.push(Action::Ignore(IgnoreReason::DecodeError(e.to_string()))),
            }
        }
        actions.extend(self.tick(inbox, sensor_value, now));
        actions
    }
}
