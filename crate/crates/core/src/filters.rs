//! RSSI smoothing filters and the BFT trigger.
//!
//! The node pipeline is a median filter feeding a scalar Kalman filter.
//! The other smoothers exist for offline comparison over recorded traces.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Rssi, Tick};

pub const DEFAULT_MEDIAN_WINDOW: usize = 5;
pub const DEFAULT_KALMAN_Q: f64 = 0.01;
pub const DEFAULT_KALMAN_R: f64 = 4.0;
pub const DEFAULT_THRESHOLD_DB: f64 = 6.0;
pub const DEFAULT_COOLDOWN: Tick = 30;
pub const DEFAULT_WARMUP: usize = 30;

/// A causal, stateful scalar smoother.
pub trait Smoother {
    fn step(&mut self, v: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianState {
    window: usize,
    buf: VecDeque<f64>,
}

impl MedianState {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::Config(format!("median window must be odd and >= 1, got {window}")));
        }
        Ok(MedianState { window, buf: VecDeque::with_capacity(window) })
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl Smoother for MedianState {
    /// Lower-middle element while the buffer holds an even count.
    fn step(&mut self, v: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        let mut sorted: Vec<f64> = self.buf.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        sorted[(sorted.len() - 1) / 2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    q: f64,
    r: f64,
    estimate: Option<(f64, f64)>,
}

impl KalmanState {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) || !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("kalman needs q >= 0 and r > 0, got q={q} r={r}")));
        }
        Ok(KalmanState { q, r, estimate: None })
    }

    /// Starts from a given estimate and variance instead of the first sample.
    pub fn with_estimate(q: f64, r: f64, x: f64, p: f64) -> Result<Self> {
        let mut k = KalmanState::new(q, r)?;
        if !(p > 0.0) {
            return Err(Error::Config(format!("kalman variance must be > 0, got {p}")));
        }
        k.estimate = Some((x, p));
        Ok(k)
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate.map(|(x, _)| x)
    }

    pub fn variance(&self) -> Option<f64> {
        self.estimate.map(|(_, p)| p)
    }
}

impl Smoother for KalmanState {
    fn step(&mut self, z: f64) -> f64 {
        let (x, p) = match self.estimate {
            None => (z, self.r),
            Some((x, p)) => {
                let p = p + self.q;
                let gain = p / (p + self.r);
                (x + gain * (z - x), (1.0 - gain) * p)
            }
        };
        self.estimate = Some((x, p));
        x
    }
}

/// Median filter followed by a Kalman filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub median: MedianState,
    pub kalman: KalmanState,
}

impl Cascade {
    pub fn new(window: usize, q: f64, r: f64) -> Result<Self> {
        Ok(Cascade { median: MedianState::new(window)?, kalman: KalmanState::new(q, r)? })
    }
}

impl Default for Cascade {
    fn default() -> Self {
        Cascade::new(DEFAULT_MEDIAN_WINDOW, DEFAULT_KALMAN_Q, DEFAULT_KALMAN_R)
            .expect("default filter parameters are valid")
    }
}

impl Smoother for Cascade {
    fn step(&mut self, v: f64) -> f64 {
        let m = self.median.step(v);
        self.kalman.step(m)
    }
}

pub fn median_step(state: &mut MedianState, v: Rssi) -> Rssi {
    Rssi::clamped(state.step(v.value()))
}

pub fn kalman_step(state: &mut KalmanState, z: Rssi) -> Rssi {
    Rssi::clamped(state.step(z.value()))
}

pub fn cascade_step(median: &mut MedianState, kalman: &mut KalmanState, raw: Rssi) -> Rssi {
    kalman_step(kalman, median_step(median, raw))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("moving average window must be >= 1".into()));
        }
        Ok(MovingAverage { window, buf: VecDeque::with_capacity(window) })
    }
}

impl Smoother for MovingAverage {
    fn step(&mut self, v: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        self.buf.iter().sum::<f64>() / self.buf.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpSmoothing {
    alpha: f64,
    y: Option<f64>,
}

impl ExpSmoothing {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {alpha}")));
        }
        Ok(ExpSmoothing { alpha, y: None })
    }
}

impl Smoother for ExpSmoothing {
    fn step(&mut self, v: f64) -> f64 {
        let y = match self.y {
            None => v,
            Some(y) => self.alpha * v + (1.0 - self.alpha) * y,
        };
        self.y = Some(y);
        y
    }
}

/// Moving average with an adaptive window.
///
/// The window halves (down to 1) whenever a sample deviates from the last
/// output by more than `threshold`, and grows by one (up to `max_window`)
/// otherwise. Starts at `max_window`. This adaptation rule is a placeholder:
/// no reference definition of the filter exists.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMovingAverage {
    max_window: usize,
    threshold: f64,
    current: usize,
    buf: VecDeque<f64>,
    y: Option<f64>,
}

impl DynamicMovingAverage {
    pub fn new(max_window: usize, threshold: f64) -> Result<Self> {
        if max_window == 0 {
            return Err(Error::Config("dynamic moving average window must be >= 1".into()));
        }
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("threshold must be > 0, got {threshold}")));
        }
        Ok(DynamicMovingAverage {
            max_window,
            threshold,
            current: max_window,
            buf: VecDeque::with_capacity(max_window),
            y: None,
        })
    }

    pub fn current_window(&self) -> usize {
        self.current
    }
}

impl Smoother for DynamicMovingAverage {
    fn step(&mut self, v: f64) -> f64 {
        if let Some(y) = self.y {
            self.current = if (v - y).abs() > self.threshold {
                (self.current / 2).max(1)
            } else {
                (self.current + 1).min(self.max_window)
            };
        }
        if self.buf.len() == self.max_window {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        let n = self.current.min(self.buf.len());
        let y = self.buf.iter().rev().take(n).sum::<f64>() / n as f64;
        self.y = Some(y);
        y
    }
}

/// Gaussian-weighted mean over the last `window` samples, kernel centred on
/// the middle of the available samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFilter {
    window: usize,
    sigma: f64,
    buf: VecDeque<f64>,
}

impl GaussianFilter {
    pub fn new(window: usize, sigma: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("gaussian window must be >= 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(GaussianFilter { window, sigma, buf: VecDeque::with_capacity(window) })
    }
}

impl Smoother for GaussianFilter {
    fn step(&mut self, v: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        let centre = (self.buf.len() - 1) as f64 / 2.0;
        let (mut num, mut den) = (0.0, 0.0);
        for (i, x) in self.buf.iter().enumerate() {
            let d = i as f64 - centre;
            let w = (-(d * d) / (2.0 * self.sigma * self.sigma)).exp();
            num += w * x;
            den += w;
        }
        num / den
    }
}

/// Pass-through, useful as a baseline in sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Identity;

impl Smoother for Identity {
    fn step(&mut self, v: f64) -> f64 {
        v
    }
}

/// Serializable description of a smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FilterSpec {
    Raw,
    Median { window: usize },
    Kalman { q: f64, r: f64 },
    MedianKalman { window: usize, q: f64, r: f64 },
    MovingAverage { window: usize },
    ExpSmoothing { alpha: f64 },
    DynamicMovingAverage { max_window: usize, threshold: f64 },
    Gaussian { window: usize, sigma: f64 },
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec::MedianKalman { window: DEFAULT_MEDIAN_WINDOW, q: DEFAULT_KALMAN_Q, r: DEFAULT_KALMAN_R }
    }
}

impl FilterSpec {
    pub const NAMES: [&'static str; 8] = [
        "raw",
        "median",
        "kalman",
        "median-kalman",
        "moving-average",
        "exp-smoothing",
        "dynamic-moving-average",
        "gaussian",
    ];

    /// Default parameters for a filter name.
    pub fn default_for(name: &str) -> Option<FilterSpec> {
        Some(match name {
            "raw" => FilterSpec::Raw,
            "median" => FilterSpec::Median { window: DEFAULT_MEDIAN_WINDOW },
            "kalman" => FilterSpec::Kalman { q: DEFAULT_KALMAN_Q, r: DEFAULT_KALMAN_R },
            "median-kalman" => FilterSpec::default(),
            "moving-average" => FilterSpec::MovingAverage { window: 10 },
            "exp-smoothing" => FilterSpec::ExpSmoothing { alpha: 0.1 },
            "dynamic-moving-average" => FilterSpec::DynamicMovingAverage { max_window: 20, threshold: 6.0 },
            "gaussian" => FilterSpec::Gaussian { window: 11, sigma: 3.0 },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterSpec::Raw => "raw",
            FilterSpec::Median { .. } => "median",
            FilterSpec::Kalman { .. } => "kalman",
            FilterSpec::MedianKalman { .. } => "median-kalman",
            FilterSpec::MovingAverage { .. } => "moving-average",
            FilterSpec::ExpSmoothing { .. } => "exp-smoothing",
            FilterSpec::DynamicMovingAverage { .. } => "dynamic-moving-average",
            FilterSpec::Gaussian { .. } => "gaussian",
        }
    }

    pub fn build(&self) -> Result<AnySmoother> {
        Ok(match *self {
            FilterSpec::Raw => AnySmoother::Raw(Identity),
            FilterSpec::Median { window } => AnySmoother::Median(MedianState::new(window)?),
            FilterSpec::Kalman { q, r } => AnySmoother::Kalman(KalmanState::new(q, r)?),
            FilterSpec::MedianKalman { window, q, r } => AnySmoother::MedianKalman(Cascade::new(window, q, r)?),
            FilterSpec::MovingAverage { window } => AnySmoother::MovingAverage(MovingAverage::new(window)?),
            FilterSpec::ExpSmoothing { alpha } => AnySmoother::ExpSmoothing(ExpSmoothing::new(alpha)?),
            FilterSpec::DynamicMovingAverage { max_window, threshold } => {
                AnySmoother::DynamicMovingAverage(DynamicMovingAverage::new(max_window, threshold)?)
            }
            FilterSpec::Gaussian { window, sigma } => AnySmoother::Gaussian(GaussianFilter::new(window, sigma)?),
        })
    }
}

/// Concrete smoother chosen at runtime from a [`FilterSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum AnySmoother {
    Raw(Identity),
    Median(MedianState),
    Kalman(KalmanState),
    MedianKalman(Cascade),
    MovingAverage(MovingAverage),
    ExpSmoothing(ExpSmoothing),
    DynamicMovingAverage(DynamicMovingAverage),
    Gaussian(GaussianFilter),
}

impl Smoother for AnySmoother {
    fn step(&mut self, v: f64) -> f64 {
        match self {
            AnySmoother::Raw(f) => f.step(v),
            AnySmoother::Median(f) => f.step(v),
            AnySmoother::Kalman(f) => f.step(v),
            AnySmoother::MedianKalman(f) => f.step(v),
            AnySmoother::MovingAverage(f) => f.step(v),
            AnySmoother::ExpSmoothing(f) => f.step(v),
            AnySmoother::DynamicMovingAverage(f) => f.step(v),
            AnySmoother::Gaussian(f) => f.step(v),
        }
    }
}

/// Decides when a smoothed link value has drifted far enough to report.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    threshold: f64,
    cooldown: Tick,
    last_reported: Option<f64>,
    last_fire: Option<Tick>,
}

impl TriggerState {
    pub fn new(threshold: f64, cooldown: Tick) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Config(format!("trigger threshold must be > 0, got {threshold}")));
        }
        Ok(TriggerState { threshold, cooldown, last_reported: None, last_fire: None })
    }

    pub fn last_reported(&self) -> Option<f64> {
        self.last_reported
    }

    pub fn last_fire(&self) -> Option<Tick> {
        self.last_fire
    }

    /// Moves the baseline without firing.
    pub fn rebase(&mut self, smoothed: f64) {
        self.last_reported = Some(smoothed);
    }

    /// True while the cooldown after the last fire is running.
    pub fn cooling(&self, now: Tick) -> bool {
        self.last_fire.is_some_and(|f| now.saturating_sub(f) < self.cooldown)
    }

    /// The first call only records a baseline.
    pub fn check(&mut self, smoothed: f64, now: Tick) -> bool {
        let Some(last) = self.last_reported else {
            self.last_reported = Some(smoothed);
            return false;
        };
        let cooled = self.last_fire.is_none_or(|f| now.saturating_sub(f) >= self.cooldown);
        if (smoothed - last).abs() > self.threshold && cooled {
            self.last_reported = Some(smoothed);
            self.last_fire = Some(now);
            true
        } else {
            false
        }
    }
}

impl TriggerState {
    /// [`TriggerState::check`], except that during the cooldown after a fire
    /// the baseline follows the signal instead, so it ends where the change
    /// settled rather than where it crossed the threshold.
    pub fn check_settling(&mut self, smoothed: f64, now: Tick) -> bool {
        if self.cooling(now) {
            self.rebase(smoothed);
            false
        } else {
            self.check(smoothed, now)
        }
    }
}

pub fn bft_trigger(state: &mut TriggerState, smoothed: Rssi, now: Tick) -> bool {
    state.check(smoothed.value(), now)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(f: &mut dyn Smoother, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| f.step(x)).collect()
    }

    #[test]
    fn median_warm_up_uses_lower_middle() {
        let mut m = MedianState::new(3).unwrap();
        assert_eq!(run(&mut m, &[-40.0, -90.0, -41.0]), vec![-40.0, -90.0, -41.0]);
    }

    #[test]
    fn median_constant_and_full_window() {
        let mut m = MedianState::new(3).unwrap();
        assert_eq!(run(&mut m, &[-45.0; 3])[2], -45.0);
        let mut m = MedianState::new(5).unwrap();
        assert_eq!(*run(&mut m, &[-40.0, -42.0, -41.0, -90.0, -43.0]).last().unwrap(), -42.0);
    }

    #[test]
    fn median_rejects_even_window() {
        assert!(MedianState::new(4).is_err());
        assert!(MedianState::new(0).is_err());
    }

    #[test]
    fn kalman_first_sample_initializes() {
        let mut k = KalmanState::new(0.01, 4.0).unwrap();
        assert_eq!(k.step(-40.0), -40.0);
        assert_eq!(k.variance(), Some(4.0));
    }

    #[test]
    fn kalman_single_step_arithmetic() {
        let mut k = KalmanState::with_estimate(0.0, 4.0, -40.0, 1.0).unwrap();
        let x = k.step(-46.0);
        assert!((x - -41.2).abs() < 1e-12);
        assert!((k.variance().unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn kalman_converges_on_constant_input() {
        // independent recursion
        let (q, r) = (0.01, 4.0);
        let (mut x, mut p) = (-40.0f64, r);
        for _ in 0..200 {
            p += q;
            let g = p / (p + r);
            x += g * (-50.0 - x);
            p *= 1.0 - g;
        }
        let mut k = KalmanState::with_estimate(q, r, -40.0, r).unwrap();
        let mut out = 0.0;
        for _ in 0..200 {
            out = k.step(-50.0);
        }
        assert!((out - x).abs() < 1e-12);
        assert!((out - -50.0).abs() < 0.5, "got {out}");
    }

    #[test]
    fn kalman_rejects_bad_params() {
        assert!(KalmanState::new(-0.1, 1.0).is_err());
        assert!(KalmanState::new(0.1, 0.0).is_err());
    }

    #[test]
    fn cascade_suppresses_spike() {
        let mut c = Cascade::new(3, 0.01, 4.0).unwrap();
        let mut stream = vec![-45.0; 40];
        stream[20] = -90.0;
        for v in run(&mut c, &stream) {
            assert!((v - -45.0).abs() <= 1.0);
        }
    }

    #[test]
    fn cascade_tracks_step() {
        let mut c = Cascade::default();
        let mut last = 0.0;
        for _ in 0..50 {
            last = c.step(-45.0);
        }
        assert!((last - -45.0).abs() < 1e-9);
        // oracle: median(5) of a clean step lags 2 samples, then plain kalman
        let (q, r) = (DEFAULT_KALMAN_Q, DEFAULT_KALMAN_R);
        let mut oracle = KalmanState::new(q, r).unwrap();
        let mut med = MedianState::new(5).unwrap();
        for _ in 0..50 {
            oracle.step(med.step(-45.0));
        }
        for _ in 0..50 {
            last = c.step(-60.0);
        }
        let mut expect = 0.0;
        for _ in 0..50 {
            expect = oracle.step(med.step(-60.0));
        }
        assert_eq!(last, expect);
        assert!((last - -60.0).abs() <= 2.0, "got {last}");
    }

    #[test]
    fn other_filters_basic() {
        let mut ma = MovingAverage::new(2).unwrap();
        assert_eq!(run(&mut ma, &[-40.0, -50.0])[1], -45.0);
        let xs = [-40.0, -55.0, -47.5, -60.0];
        let mut es = ExpSmoothing::new(1.0).unwrap();
        assert_eq!(run(&mut es, &xs), xs.to_vec());
        let mut g = GaussianFilter::new(1, 2.0).unwrap();
        assert_eq!(run(&mut g, &xs), xs.to_vec());
    }

    #[test]
    fn other_filters_reject_bad_params() {
        assert!(MovingAverage::new(0).is_err());
        assert!(ExpSmoothing::new(0.0).is_err());
        assert!(ExpSmoothing::new(1.5).is_err());
        assert!(GaussianFilter::new(3, 0.0).is_err());
        assert!(GaussianFilter::new(0, 1.0).is_err());
        assert!(DynamicMovingAverage::new(0, 1.0).is_err());
    }

    #[test]
    fn dynamic_window_adapts() {
        let mut d = DynamicMovingAverage::new(8, 3.0).unwrap();
        for _ in 0..10 {
            d.step(-50.0);
        }
        assert_eq!(d.current_window(), 8);
        d.step(-70.0);
        assert_eq!(d.current_window(), 4);
        d.step(-70.0);
        assert_eq!(d.current_window(), 2);
    }

    #[test]
    fn trigger_rules() {
        let mut t = TriggerState::new(6.0, 30).unwrap();
        assert!(!t.check(-45.0, 0));
        assert!(t.check(-52.0, 1));
        let mut t = TriggerState::new(6.0, 30).unwrap();
        t.check(-45.0, 0);
        assert!(!t.check(-48.0, 1));
        let mut t = TriggerState::new(6.0, 30).unwrap();
        t.check(-45.0, 0);
        assert!(t.check(-52.0, 10));
        assert!(!t.check(-60.0, 11));
        assert!(t.check(-60.0, 40));
        assert!(t.cooling(69) && !t.cooling(70));
        t.rebase(-63.0);
        assert_eq!(t.last_reported(), Some(-63.0));
        assert_eq!(t.last_fire(), Some(40));
        assert!(TriggerState::new(0.0, 1).is_err());
    }

    #[test]
    fn settling_baseline_follows_ramp() {
        // 9 dB ramp down, then 8 dB back up. The plain check keeps the
        // baseline where the ramp crossed 6 dB (-51.3) and misses the return.
        let ramp: Vec<f64> = (0..=30).map(|i| -45.0 - 0.3 * i as f64).collect();
        let back: Vec<f64> = (0..=30).map(|i| -54.0 + 8.0 * i as f64 / 30.0).collect();
        let fires = |settling: bool| {
            let mut t = TriggerState::new(6.0, 30).unwrap();
            let mut out = Vec::new();
            for (i, y) in [vec![-45.0; 10], ramp.clone(), vec![-54.0; 60], back.clone(), vec![-46.0; 60]]
                .concat()
                .into_iter()
                .enumerate()
            {
                let fired = if settling { t.check_settling(y, i as Tick) } else { t.check(y, i as Tick) };
                if fired {
                    out.push(i);
                }
            }
            out
        };
        assert_eq!(fires(true).len(), 2);
        assert_eq!(fires(false).len(), 1);
    }

    #[test]
    fn spec_names_round_trip() {
        for name in FilterSpec::NAMES {
            let spec = FilterSpec::default_for(name).unwrap();
            assert_eq!(spec.name(), name);
            spec.build().unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<FilterSpec>(&json).unwrap(), spec);
        }
        assert!(FilterSpec::default_for("butterworth").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stream() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-110.0f64..-10.0, 1..120)
        }

        fn within(outs: &[f64], lo: f64, hi: f64) -> bool {
            outs.iter().all(|&y| y >= lo - 1e-9 && y <= hi + 1e-9)
        }

        proptest! {
            #[test]
            fn window_filters_stay_within_input_range(xs in stream(), w in 1usize..12, sigma in 0.2f64..5.0) {
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut filters: Vec<Box<dyn Smoother>> = vec![
                    Box::new(MedianState::new(2 * w - 1).unwrap()),
                    Box::new(MovingAverage::new(w).unwrap()),
                    Box::new(GaussianFilter::new(w, sigma).unwrap()),
                    Box::new(DynamicMovingAverage::new(w, 3.0).unwrap()),
                ];
                for f in filters.iter_mut() {
                    prop_assert!(within(&run(f.as_mut(), &xs), lo, hi));
                }
            }

            #[test]
            fn recursive_filters_stay_within_range_with_start(
                xs in stream(), x0 in -110.0f64..-10.0, q in 0.0f64..1.0, r in 0.01f64..10.0, alpha in 0.01f64..1.0,
            ) {
                let lo = xs.iter().cloned().fold(x0, f64::min);
                let hi = xs.iter().cloned().fold(x0, f64::max);
                let mut k = KalmanState::with_estimate(q, r, x0, r).unwrap();
                prop_assert!(within(&run(&mut k, &xs), lo, hi));
                prop_assert!(k.variance().unwrap() > 0.0);
                let mut e = ExpSmoothing::new(alpha).unwrap();
                e.step(x0);
                prop_assert!(within(&run(&mut e, &xs), lo, hi));
            }

            #[test]
            fn median_window_one_is_identity(xs in stream()) {
                let mut m = MedianState::new(1).unwrap();
                prop_assert_eq!(run(&mut m, &xs), xs);
            }

            #[test]
            fn kalman_tiny_r_tracks_input(xs in stream()) {
                let mut k = KalmanState::new(0.01, 1e-9).unwrap();
                for (x, y) in xs.iter().zip(run(&mut k, &xs)) {
                    prop_assert!((x - y).abs() < 1e-4);
                }
            }
        }
    }
}
