//! Per-node topology storage: directional RSSI histories between any pair of
//! nodes in range, peer identity attributes and locally held trust.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BftRef, Location, NodeId, Rssi, SensorType, Tick, TrustScore};

pub const DEFAULT_HISTORY: usize = 64;
const BFT_LOG_CAPACITY: usize = 4096;

/// Directional link: `observer` measured (or reported) the signal of `observed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkKey {
    observer: NodeId,
    observed: NodeId,
}

impl LinkKey {
    pub fn new(observer: NodeId, observed: NodeId) -> Result<Self> {
        if observer == observed {
            return Err(Error::SelfLink(observer));
        }
        Ok(LinkKey { observer, observed })
    }

    pub fn observer(&self) -> NodeId {
        self.observer
    }

    pub fn observed(&self) -> NodeId {
        self.observed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Measured by the store owner on reception.
    Measured,
    /// Extracted from another node's BFT message.
    Reported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub t: Tick,
    pub value: Rssi,
    pub source: Source,
}

/// Bounded, time-ordered ring of samples. Oldest entries are evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiHistory {
    capacity: usize,
    samples: VecDeque<RssiSample>,
}

impl RssiHistory {
    pub fn new(capacity: usize) -> Self {
        RssiHistory { capacity: capacity.max(1), samples: VecDeque::with_capacity(capacity.max(1)) }
    }

    fn push(&mut self, link: &LinkKey, sample: RssiSample) -> Result<()> {
        if let Some(last) = self.samples.back() {
            let clash = sample.t == last.t
                && self.samples.iter().rev().take_while(|s| s.t == sample.t).any(|s| s.source == sample.source);
            if sample.t < last.t || clash {
                return Err(Error::Ordering {
                    observer: link.observer,
                    observed: link.observed,
                    t: sample.t,
                    last: last.t,
                });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &RssiSample> {
        self.samples.iter()
    }

    pub fn latest(&self, source: Option<Source>) -> Option<&RssiSample> {
        self.samples.iter().rev().find(|s| source.is_none_or(|src| s.source == src))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub id: NodeId,
    pub sensor_type: SensorType,
    pub location: Option<Location>,
    /// Cleared when the peer concedes its identity may be compromised.
    #[serde(default = "yes")]
    pub location_verified: bool,
    pub trust: TrustScore,
}

fn yes() -> bool {
    true
}

impl PeerRecord {
    pub fn new(id: NodeId, sensor_type: SensorType, location: Option<Location>) -> Self {
        PeerRecord { id, sensor_type, location, location_verified: true, trust: TrustScore::INITIAL }
    }
}

/// One BFT message seen on air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BftObservation {
    pub sender: NodeId,
    pub subject: NodeId,
    /// The message's own timestamp (used to match alert references).
    pub sent_at: Tick,
    pub received_at: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyStore {
    capacity: usize,
    links: BTreeMap<LinkKey, RssiHistory>,
    peers: BTreeMap<NodeId, PeerRecord>,
    bft_log: VecDeque<BftObservation>,
}

impl Default for TopologyStore {
    fn default() -> Self {
        TopologyStore::new(DEFAULT_HISTORY)
    }
}

impl TopologyStore {
    pub fn new(history_capacity: usize) -> Self {
        TopologyStore {
            capacity: history_capacity.max(1),
            links: BTreeMap::new(),
            peers: BTreeMap::new(),
            bft_log: VecDeque::new(),
        }
    }

    pub fn history_capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a sample, creating the link on first use.
    pub fn record_rssi(&mut self, link: LinkKey, t: Tick, v: Rssi, source: Source) -> Result<()> {
        let cap = self.capacity;
        self.links.entry(link).or_insert_with(|| RssiHistory::new(cap)).push(&link, RssiSample { t, value: v, source })
    }

    pub fn history(&self, link: &LinkKey) -> Option<&RssiHistory> {
        self.links.get(link)
    }

    pub fn links(&self) -> impl Iterator<Item = (&LinkKey, &RssiHistory)> {
        self.links.iter()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn latest_rssi(&self, link: &LinkKey, source: Option<Source>) -> Option<Rssi> {
        self.latest_sample(link, source).map(|s| s.value)
    }

    pub fn latest_sample(&self, link: &LinkKey, source: Option<Source>) -> Option<RssiSample> {
        self.links.get(link)?.latest(source).copied()
    }

    /// Whether `candidate` agrees with the median of the last `window`
    /// measured values on `link`. No history means no contradiction.
    pub fn history_consistent(&self, link: &LinkKey, candidate: Rssi, window: usize, tol: f64) -> bool {
        let Some(h) = self.links.get(link) else {
            return true;
        };
        let mut recent: Vec<f64> = h
            .iter()
            .rev()
            .filter(|s| s.source == Source::Measured)
            .take(window.max(1))
            .map(|s| s.value.value())
            .collect();
        if recent.is_empty() {
            return true;
        }
        recent.sort_by(f64::total_cmp);
        let median = recent[(recent.len() - 1) / 2];
        (candidate.value() - median).abs() <= tol
    }

    pub fn upsert_peer(&mut self, record: PeerRecord) {
        self.peers.insert(record.id, record);
    }

    pub fn peer(&self, id: &NodeId) -> Option<&PeerRecord> {
        self.peers.get(id)
    }

    pub fn peer_mut(&mut self, id: &NodeId) -> Option<&mut PeerRecord> {
        self.peers.get_mut(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values()
    }

    pub fn trust(&self, id: &NodeId) -> Option<TrustScore> {
        self.peers.get(id).map(|p| p.trust)
    }

    pub fn adjust_trust(&mut self, peer: &NodeId, delta: f64) -> Result<TrustScore> {
        let rec = self.peers.get_mut(peer).ok_or(Error::MissingPeer(*peer))?;
        rec.trust = rec.trust.adjusted(delta);
        Ok(rec.trust)
    }

    pub fn observe_bft(&mut self, obs: BftObservation) {
        if self.bft_log.len() == BFT_LOG_CAPACITY {
            self.bft_log.pop_front();
        }
        self.bft_log.push_back(obs);
    }

    pub fn has_observed_bft(&self, r: &BftRef) -> bool {
        self.bft_log.iter().any(|o| o.sender == r.sender && o.subject == r.subject && o.sent_at == r.timestamp)
    }

    /// Distinct senders of BFT messages about `subject` received in `(now - window, now]`.
    pub fn recent_bft_senders(&self, subject: &NodeId, window: Tick, now: Tick) -> BTreeSet<NodeId> {
        self.bft_log
            .iter()
            .filter(|o| o.subject == *subject && in_window(o.received_at, window, now))
            .map(|o| o.sender)
            .collect()
    }

    pub fn count_recent_bft(&self, subject: &NodeId, window: Tick, now: Tick) -> usize {
        self.recent_bft_senders(subject, window, now).len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("store dump is always serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: StoreDump = serde_json::from_str(s).map_err(|e| Error::Decode(e.to_string()))?;
        TopologyStore::load(dump)
    }

    pub fn dump(&self) -> StoreDump {
        StoreDump {
            history_capacity: self.capacity,
            peers: self.peers.values().cloned().collect(),
            links: self
                .links
                .iter()
                .map(|(k, h)| LinkDump {
                    observer: k.observer,
                    observed: k.observed,
                    history: h.iter().copied().collect(),
                })
                .collect(),
            bft_log: self.bft_log.iter().copied().collect(),
        }
    }

    pub fn load(dump: StoreDump) -> Result<Self> {
        let mut store = TopologyStore::new(dump.history_capacity);
        for p in dump.peers {
            store.upsert_peer(p);
        }
        for l in dump.links {
            let key = LinkKey::new(l.observer, l.observed)?;
            for s in l.history {
                store.record_rssi(key, s.t, s.value, s.source)?;
            }
        }
        for o in dump.bft_log {
            store.observe_bft(o);
        }
        Ok(store)
    }
}

fn in_window(t: Tick, window: Tick, now: Tick) -> bool {
    t <= now && now - t < window
}

/// JSON form of a [`TopologyStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreDump {
    pub history_capacity: usize,
    pub peers: Vec<PeerRecord>,
    pub links: Vec<LinkDump>,
    #[serde(default)]
    pub bft_log: Vec<BftObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDump {
    pub observer: NodeId,
    pub observed: NodeId,
    pub history: Vec<RssiSample>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u16) -> NodeId {
        NodeId::from_index(i)
    }

    fn r(v: f64) -> Rssi {
        Rssi::new(v).unwrap()
    }

    fn link(a: u16, b: u16) -> LinkKey {
        LinkKey::new(n(a), n(b)).unwrap()
    }

    #[test]
    fn self_link_rejected() {
        assert_eq!(LinkKey::new(n(1), n(1)), Err(Error::SelfLink(n(1))));
    }

    #[test]
    fn first_record_creates_link() {
        let mut s = TopologyStore::default();
        s.record_rssi(link(1, 2), 0, r(-40.0), Source::Measured).unwrap();
        assert_eq!(s.link_count(), 1);
        assert_eq!(s.history(&link(1, 2)).unwrap().len(), 1);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut s = TopologyStore::new(4);
        for t in 0..5 {
            s.record_rssi(link(1, 2), t, r(-40.0 - t as f64), Source::Measured).unwrap();
        }
        let h = s.history(&link(1, 2)).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|x| x.value.value() != -40.0));
    }

    #[test]
    fn same_tick_distinct_sources_both_kept() {
        let mut s = TopologyStore::default();
        s.record_rssi(link(1, 2), 5, r(-40.0), Source::Measured).unwrap();
        s.record_rssi(link(1, 2), 5, r(-41.0), Source::Reported).unwrap();
        assert_eq!(s.history(&link(1, 2)).unwrap().len(), 2);
        assert!(matches!(s.record_rssi(link(1, 2), 5, r(-42.0), Source::Measured), Err(Error::Ordering { .. })));
        assert!(matches!(s.record_rssi(link(1, 2), 4, r(-42.0), Source::Reported), Err(Error::Ordering { .. })));
    }

    #[test]
    fn latest_rssi_cases() {
        let mut s = TopologyStore::default();
        assert_eq!(s.latest_rssi(&link(1, 2), None), None);
        s.record_rssi(link(1, 2), 1, r(-40.0), Source::Reported).unwrap();
        s.record_rssi(link(1, 2), 2, r(-46.0), Source::Reported).unwrap();
        assert_eq!(s.latest_rssi(&link(1, 2), None), Some(r(-46.0)));
        assert_eq!(s.latest_rssi(&link(1, 2), Some(Source::Measured)), None);
    }

    #[test]
    fn history_consistency() {
        let mut s = TopologyStore::default();
        assert!(s.history_consistent(&link(1, 2), r(-90.0), 3, 5.0));
        for (t, v) in [(0, -45.0), (1, -44.0), (2, -46.0)] {
            s.record_rssi(link(1, 2), t, r(v), Source::Measured).unwrap();
        }
        assert!(s.history_consistent(&link(1, 2), r(-45.0), 3, 5.0));
        assert!(!s.history_consistent(&link(1, 2), r(-60.0), 3, 5.0));
        // fewer values than the window: all are used
        assert!(s.history_consistent(&link(1, 2), r(-49.0), 10, 5.0));
    }

    #[test]
    fn trust_adjustment() {
        let mut s = TopologyStore::default();
        let mut p = PeerRecord::new(n(2), SensorType::Temperature, None);
        p.trust = TrustScore::new(0.5);
        s.upsert_peer(p);
        assert!((s.adjust_trust(&n(2), 0.1).unwrap().value() - 0.6).abs() < 1e-12);
        assert_eq!(s.adjust_trust(&n(9), 0.1), Err(Error::MissingPeer(n(9))));
        s.peer_mut(&n(2)).unwrap().trust = TrustScore::new(0.05);
        assert_eq!(s.adjust_trust(&n(2), -0.1).unwrap().value(), 0.0);
        assert_eq!(s.adjust_trust(&n(2), -0.1).unwrap().value(), 0.0);
        s.peer_mut(&n(2)).unwrap().trust = TrustScore::new(1.0);
        assert_eq!(s.adjust_trust(&n(2), 0.1).unwrap().value(), 1.0);
        assert_eq!(s.adjust_trust(&n(2), 0.1).unwrap().value(), 1.0);
    }

    fn bft(sender: u16, subject: u16, at: Tick) -> BftObservation {
        BftObservation { sender: n(sender), subject: n(subject), sent_at: at, received_at: at }
    }

    #[test]
    fn recent_bft_counts_distinct_senders() {
        let mut s = TopologyStore::default();
        assert_eq!(s.count_recent_bft(&n(1), 60, 100), 0);
        for o in [bft(2, 1, 90), bft(3, 1, 91), bft(2, 1, 92)] {
            s.observe_bft(o);
        }
        // oracle: set of senders in window
        let expected: BTreeSet<_> = [n(2), n(3)].into_iter().collect();
        assert_eq!(s.recent_bft_senders(&n(1), 60, 100), expected);
        assert_eq!(s.count_recent_bft(&n(1), 60, 100), 2);

        let mut old = TopologyStore::default();
        old.observe_bft(bft(2, 1, 10));
        old.observe_bft(bft(3, 1, 20));
        assert_eq!(old.count_recent_bft(&n(1), 60, 100), 0);
    }

    #[test]
    fn json_round_trip() {
        let mut s = TopologyStore::new(8);
        s.upsert_peer(PeerRecord::new(n(2), SensorType::Humidity, Some(Location::new(1.0, 2.0, 0.0).unwrap())));
        s.record_rssi(link(1, 2), 1, r(-50.0), Source::Measured).unwrap();
        s.record_rssi(link(3, 2), 1, r(-55.5), Source::Reported).unwrap();
        s.observe_bft(bft(3, 2, 1));
        let back = TopologyStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert!(TopologyStore::from_json(r#"{"history_capacity":4,"peers":[],"links":[],"bogus":1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn histories_stay_sorted_and_bounded(
                cap in 1usize..16,
                ops in proptest::collection::vec((0u16..4, 0u16..4, 0u64..50, -120.0f64..0.0, any::<bool>()), 0..200),
            ) {
                let mut s = TopologyStore::new(cap);
                for (a, b, t, v, measured) in ops {
                    let Ok(k) = LinkKey::new(n(a), n(b)) else { continue };
                    let src = if measured { Source::Measured } else { Source::Reported };
                    let _ = s.record_rssi(k, t, r(v), src);
                }
                for (k, h) in s.links() {
                    prop_assert_ne!(k.observer(), k.observed());
                    prop_assert!(h.len() <= cap);
                    let v: Vec<_> = h.iter().collect();
                    for w in v.windows(2) {
                        prop_assert!(w[0].t <= w[1].t);
                        if w[0].t == w[1].t {
                            prop_assert_ne!(w[0].source, w[1].source);
                        }
                    }
                }
            }
        }
    }
}
