//! Simulated broadcast medium.
//!
//! RSSI on the ordered link `from -> to` is the path-loss value for the
//! current distance, plus a fixed per-link offset drawn once per run, plus
//! Gaussian noise drawn per reception.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::localization::PathLossModel;
use crate::model::{Location, NodeId, Rssi, Tick};

/// Hard bound on the per-link offset, so `|RSSI_AB - RSSI_BA| <= 5` before noise.
pub const MAX_ASYMMETRY: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub model: PathLossModel,
    /// Standard deviation of per-reception noise, dB.
    pub noise_sigma: f64,
    /// Half-width of the uniform per-link offset, dB.
    pub asymmetry_jitter: f64,
    /// Receptions beyond this distance (metres) are dropped.
    pub range: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { model: PathLossModel::default(), noise_sigma: 2.0, asymmetry_jitter: 1.5, range: 20.0, seed: 0 }
    }
}

impl ChannelConfig {
    /// No noise and no asymmetry.
    pub fn ideal(seed: u64) -> Self {
        ChannelConfig { noise_sigma: 0.0, asymmetry_jitter: 0.0, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..=MAX_ASYMMETRY).contains(&self.asymmetry_jitter) {
            return Err(Error::Config(format!(
                "asymmetry_jitter must be in [0, {MAX_ASYMMETRY}], got {}",
                self.asymmetry_jitter
            )));
        }
        if !(self.range > 0.0) {
            return Err(Error::Config(format!("range must be > 0, got {}", self.range)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    positions: BTreeMap<NodeId, Location>,
    jitter: BTreeMap<(NodeId, NodeId), f64>,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            positions: BTreeMap::new(),
            jitter: BTreeMap::new(),
            noise,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn register(&mut self, node: NodeId, at: Location) {
        self.positions.insert(node, at);
    }

    pub fn position(&self, node: &NodeId) -> Option<Location> {
        self.positions.get(node).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &Location)> {
        self.positions.iter()
    }

    pub fn move_node(&mut self, node: NodeId, to: Location, _now: Tick) -> Result<()> {
        match self.positions.get_mut(&node) {
            Some(p) => {
                *p = to;
                Ok(())
            }
            None => Err(Error::UnknownNode(node)),
        }
    }

    /// Fixed offset of the ordered link. Derived from the seed and the two
    /// ids alone, so it does not depend on broadcast order.
    pub fn link_jitter(&mut self, from: NodeId, to: NodeId) -> f64 {
        let half = self.cfg.asymmetry_jitter;
        if half == 0.0 {
            return 0.0;
        }
        let seed = self.cfg.seed;
        *self.jitter.entry((from, to)).or_insert_with(|| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(from.bytes());
            h.update(to.bytes());
            let digest: [u8; 32] = h.finalize().into();
            ChaCha8Rng::from_seed(digest).random_range(-half..=half)
        })
    }

    /// Noise-free RSSI of the ordered link, before clamping.
    pub fn mean_rssi(&mut self, from: NodeId, to: NodeId) -> Result<f64> {
        let a = self.positions.get(&from).ok_or(Error::UnknownNode(from))?;
        let b = self.positions.get(&to).ok_or(Error::UnknownNode(to))?;
        let d = a.distance(b);
        Ok(self.cfg.model.raw_rssi(d) + self.link_jitter(from, to))
    }

    /// Deliveries to every other registered node in range, ascending by id.
    pub fn broadcast(&mut self, from: NodeId, _now: Tick) -> Result<Vec<(NodeId, Rssi)>> {
        let origin = *self.positions.get(&from).ok_or(Error::UnknownNode(from))?;
        let targets: Vec<(NodeId, f64)> = self
            .positions
            .iter()
            .filter(|(id, _)| **id != from)
            .map(|(id, loc)| (*id, origin.distance(loc)))
            .filter(|(_, d)| *d <= self.cfg.range)
            .collect();
        let mut out = Vec::with_capacity(targets.len());
        for (to, d) in targets {
            let mean = self.cfg.model.raw_rssi(d) + self.link_jitter(from, to);
            let noise = if self.cfg.noise_sigma > 0.0 { self.noise.sample(&mut self.rng) } else { 0.0 };
            out.push((to, Rssi::clamped(mean + noise)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64, z: f64) -> Location {
        Location::new(x, y, z).unwrap()
    }

    fn ideal_pair(d: f64) -> (Channel, NodeId, NodeId) {
        let mut ch = Channel::new(ChannelConfig::ideal(1)).unwrap();
        let (a, b) = (NodeId::from_index(1), NodeId::from_index(2));
        ch.register(a, loc(0.0, 0.0, 0.0));
        ch.register(b, loc(d, 0.0, 0.0));
        (ch, a, b)
    }

    #[test]
    fn reference_distance_gives_p0() {
        let (mut ch, a, b) = ideal_pair(1.0);
        assert_eq!(ch.broadcast(a, 0).unwrap(), vec![(b, Rssi::new(-40.0).unwrap())]);
    }

    #[test]
    fn out_of_range_is_dropped() {
        let (mut ch, a, _) = ideal_pair(25.0);
        assert!(ch.broadcast(a, 0).unwrap().is_empty());
    }

    #[test]
    fn unknown_sender_and_mover_are_errors() {
        let (mut ch, _, _) = ideal_pair(1.0);
        let ghost = NodeId::from_index(9);
        assert_eq!(ch.broadcast(ghost, 0), Err(Error::UnknownNode(ghost)));
        assert!(ch.move_node(ghost, loc(0.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn doubling_distance_drops_six_db() {
        let (mut ch, a, b) = ideal_pair(1.5);
        let before = ch.broadcast(a, 0).unwrap()[0].1.value();
        ch.move_node(b, loc(3.0, 0.0, 0.0), 1).unwrap();
        let after = ch.broadcast(a, 1).unwrap()[0].1.value();
        // 10 * 2 * log10(2)
        assert!((before - after - 6.020_599_913_279_624).abs() < 1e-9);
        ch.move_node(b, loc(3.0, 0.0, 0.0), 2).unwrap();
        assert_eq!(ch.broadcast(a, 2).unwrap()[0].1.value(), after);
    }

    #[test]
    fn same_seed_same_deliveries() {
        let run = || {
            let mut ch = Channel::new(ChannelConfig { seed: 42, ..Default::default() }).unwrap();
            for i in 0..5u16 {
                ch.register(NodeId::from_index(i), loc(i as f64, (i * i) as f64 * 0.3, 0.0));
            }
            (0..50)
                .flat_map(|t| (0..5u16).map(move |i| (t, i)))
                .map(|(t, i)| ch.broadcast(NodeId::from_index(i), t).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn jitter_is_bounded_and_order_independent() {
        let mut a = Channel::new(ChannelConfig { seed: 3, asymmetry_jitter: 2.5, ..Default::default() }).unwrap();
        let mut b = a.clone();
        let ids: Vec<NodeId> = (0..8).map(NodeId::from_index).collect();
        let mut fwd = Vec::new();
        for x in &ids {
            for y in &ids {
                if x != y {
                    fwd.push(a.link_jitter(*x, *y));
                }
            }
        }
        let mut rev = Vec::new();
        for x in ids.iter().rev() {
            for y in ids.iter().rev() {
                if x != y {
                    rev.push(b.link_jitter(*x, *y));
                }
            }
        }
        rev.reverse();
        assert_eq!(fwd, rev);
        assert!(fwd.iter().all(|j| j.abs() <= MAX_ASYMMETRY));
        assert!(fwd.iter().any(|j| *j != 0.0));
    }

    #[test]
    fn symmetry_bound_without_noise() {
        let mut ch =
            Channel::new(ChannelConfig { noise_sigma: 0.0, asymmetry_jitter: 2.5, seed: 11, ..Default::default() })
                .unwrap();
        let ids: Vec<NodeId> = (0..6).map(NodeId::from_index).collect();
        for (i, id) in ids.iter().enumerate() {
            ch.register(*id, loc(i as f64 * 0.7, (i % 3) as f64, (i % 2) as f64));
        }
        for x in &ids {
            for y in &ids {
                if x < y {
                    let d = ch.mean_rssi(*x, *y).unwrap() - ch.mean_rssi(*y, *x).unwrap();
                    assert!(d.abs() <= 5.0);
                }
            }
        }
    }

    #[test]
    fn greater_distance_lower_rssi() {
        let mut ch = Channel::new(ChannelConfig::ideal(0)).unwrap();
        let a = NodeId::from_index(0);
        ch.register(a, loc(0.0, 0.0, 0.0));
        for i in 1..10u16 {
            ch.register(NodeId::from_index(i), loc(i as f64, 0.0, 0.0));
        }
        let r: Vec<f64> = ch.broadcast(a, 0).unwrap().iter().map(|(_, r)| r.value()).collect();
        assert!(r.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ChannelConfig { noise_sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(ChannelConfig { asymmetry_jitter: 3.0, ..Default::default() }.validate().is_err());
        assert!(ChannelConfig { range: 0.0, ..Default::default() }.validate().is_err());
    }
}
