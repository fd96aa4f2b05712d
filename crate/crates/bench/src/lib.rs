//! Fixtures shared by the benchmarks.

use pol_core::localization::{AnchorObservation, PathLossModel};
use pol_core::{Location, Rssi};

/// Exact forward-model observations of `target` from four corner anchors.
pub fn anchor_observations(target: Location, model: &PathLossModel) -> Vec<AnchorObservation> {
    [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (0.0, 10.0, 0.0), (0.0, 0.0, 10.0)]
        .into_iter()
        .map(|(x, y, z)| {
            let anchor = Location::new(x, y, z).expect("finite");
            AnchorObservation { anchor, rssi: Rssi::clamped(model.raw_rssi(anchor.distance(&target))) }
        })
        .collect()
}

/// A deterministic noisy RSSI stream around -55 dB with a spike every 37 samples.
pub fn rssi_stream(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let wobble = ((i * 7919) % 13) as f64 / 6.0 - 1.0;
            let spike = if i % 37 == 0 { -20.0 } else { 0.0 };
            -55.0 + wobble + spike
        })
        .collect()
}
