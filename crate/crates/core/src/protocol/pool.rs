use std::collections::BTreeMap;

use crate::model::{GridCell, NodeId, PayloadMessage, Rssi, Tick};

/// A received payload awaiting location verification.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub msg: PayloadMessage,
    pub received_at: Tick,
    pub measured_rssi: Rssi,
    /// Last check against (region centre cell, radius bits): the matching cell, if any.
    pub(crate) checked: Option<(GridCell, u64, Option<GridCell>)>,
    /// Last check against the stored location's cell.
    pub(crate) stored_checked: Option<(GridCell, bool)>,
}

/// Unvalidated messages, deduplicated by `(sender, seq)` within the ttl.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePool {
    ttl: Tick,
    entries: Vec<PoolEntry>,
    seen: BTreeMap<(NodeId, u64), Tick>,
}

impl MessagePool {
    pub fn new(ttl: Tick) -> Self {
        MessagePool { ttl, entries: Vec::new(), seen: BTreeMap::new() }
    }

    pub fn ttl(&self) -> Tick {
        self.ttl
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut Vec<PoolEntry> {
        &mut self.entries
    }

    /// Returns false for a duplicate `(sender, seq)`.
    pub fn insert(&mut self, msg: PayloadMessage, rssi: Rssi, now: Tick) -> bool {
        let key = (msg.sender, msg.seq);
        if self.seen.contains_key(&key) {
            return false;
        }
        self.seen.insert(key, now);
        self.entries.push(PoolEntry {
            msg,
            received_at: now,
            measured_rssi: rssi,
            checked: None,
            stored_checked: None,
        });
        true
    }

    /// Removes and returns entries that have been waiting `ttl` ticks or more.
    pub fn expire(&mut self, now: Tick) -> Vec<PoolEntry> {
        let ttl = self.ttl;
        let (expired, kept): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.entries).into_iter().partition(|e| now.saturating_sub(e.received_at) >= ttl);
        self.entries = kept;
        // dedup memory spans twice the ttl so late replays are still caught
        self.seen.retain(|_, t| now.saturating_sub(*t) < 2 * ttl);
        expired
    }

    pub fn senders(&self) -> Vec<NodeId> {
        let mut s: Vec<NodeId> = self.entries.iter().map(|e| e.msg.sender).collect();
        s.sort();
        s.dedup();
        s
    }
}
