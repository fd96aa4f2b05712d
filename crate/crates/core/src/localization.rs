//! RSSI/distance conversion, multilateration and location-key verification.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{location_key_for_cell, GridCell, Location, NodeId, PayloadMessage, Rssi, Tick};
use crate::topology::{Source, TopologyStore};

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-9;

/// Log-distance path loss: `rssi(d) = p0 - 10 n log10(d / d0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    pub p0: f64,
    pub n: f64,
    #[serde(default = "one")]
    pub d0: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel { p0: -40.0, n: 2.0, d0: 1.0 }
    }
}

impl PathLossModel {
    pub fn new(p0: f64, n: f64, d0: f64) -> Result<Self> {
        let m = PathLossModel { p0, n, d0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n > 0.0 && self.n.is_finite()) || !(self.d0 > 0.0 && self.d0.is_finite()) || !self.p0.is_finite() {
            return Err(Error::Config(format!("path loss needs n > 0 and d0 > 0, got n={} d0={}", self.n, self.d0)));
        }
        Ok(())
    }

    /// Unclamped model value in dB.
    pub fn raw_rssi(&self, d: f64) -> f64 {
        self.p0 - 10.0 * self.n * (d / self.d0).log10()
    }

    pub fn rssi_from_distance(&self, d: f64) -> Result<Rssi> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("distance must be > 0, got {d}")));
        }
        Ok(Rssi::clamped(self.raw_rssi(d)))
    }

    pub fn distance_from_rssi(&self, r: Rssi) -> f64 {
        self.distance_from_db(r.value())
    }

    pub fn distance_from_db(&self, db: f64) -> f64 {
        self.d0 * 10f64.powf((self.p0 - db) / (10.0 * self.n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorObservation {
    pub anchor: Location,
    pub rssi: Rssi,
}

/// Position estimate from multilateration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub location: Location,
    /// RMS of range residuals, metres.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nonlinear least squares over `sum (|x - a_i| - d_i)^2`, Gauss-Newton from
/// the anchor centroid.
///
/// Four or more anchors solve in 3-D. With exactly three, `planar_z` fixes
/// the height and the solve runs in the horizontal plane.
pub fn multilaterate(obs: &[AnchorObservation], model: &PathLossModel, planar_z: Option<f64>) -> Result<Fix> {
    match (obs.len(), planar_z) {
        (n, _) if n >= 4 => Ok(solve_3d(obs, model)),
        (3, Some(z)) => Ok(solve_planar(obs, model, z)),
        (n, _) => Err(Error::InsufficientAnchors { have: n, need: if planar_z.is_some() { 3 } else { 4 } }),
    }
}

fn ranges(obs: &[AnchorObservation], model: &PathLossModel) -> Vec<(Vector3<f64>, f64)> {
    obs.iter()
        .map(|o| {
            let a = o.anchor;
            (Vector3::new(a.x, a.y, a.z), model.distance_from_rssi(o.rssi))
        })
        .collect()
}

fn cost(x: &Vector3<f64>, rs: &[(Vector3<f64>, f64)]) -> f64 {
    rs.iter().map(|(a, d)| ((x - a).norm() - d).powi(2)).sum()
}

fn centroid(rs: &[(Vector3<f64>, f64)]) -> Vector3<f64> {
    rs.iter().fold(Vector3::zeros(), |acc, (a, _)| acc + a) / rs.len() as f64
}

fn unit_towards(x: &Vector3<f64>, a: &Vector3<f64>) -> Vector3<f64> {
    let diff = x - a;
    let n = diff.norm();
    if n < 1e-12 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        diff / n
    }
}

fn finish(x: Vector3<f64>, rs: &[(Vector3<f64>, f64)], iterations: usize, converged: bool) -> Fix {
    Fix {
        location: Location { x: x[0], y: x[1], z: x[2] },
        residual: (cost(&x, rs) / rs.len() as f64).sqrt(),
        iterations,
        converged,
    }
}

fn solve_3d(obs: &[AnchorObservation], model: &PathLossModel) -> Fix {
    let rs = ranges(obs, model);
    let mut x = centroid(&rs);
    for it in 1..=MAX_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (a, d) in &rs {
            let u = unit_towards(&x, a);
            let r = (x - a).norm() - d;
            jtj += u * u.transpose();
            jtr += u * r;
        }
        let step = match jtj.cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => {
                // rank-deficient geometry: damp the normal equations
                let damped = jtj + Matrix3::identity() * 1e-9 * (1.0 + jtj.trace());
                match damped.try_inverse() {
                    Some(inv) => -(inv * jtr),
                    None => return finish(x, &rs, it, false),
                }
            }
        };
        let (next, taken) = line_search(&x, &step, &rs);
        x = next;
        if taken.norm() < STEP_TOLERANCE {
            return finish(x, &rs, it, true);
        }
    }
    finish(x, &rs, MAX_ITERATIONS, false)
}

fn solve_planar(obs: &[AnchorObservation], model: &PathLossModel, z: f64) -> Fix {
    let rs = ranges(obs, model);
    let c = centroid(&rs);
    let mut x = Vector3::new(c[0], c[1], z);
    for it in 1..=MAX_ITERATIONS {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (a, d) in &rs {
            let u3 = unit_towards(&x, a);
            let u = Vector2::new(u3[0], u3[1]);
            let r = (x - a).norm() - d;
            jtj += u * u.transpose();
            jtr += u * r;
        }
        let Some(inv) = jtj.try_inverse() else {
            return finish(x, &rs, it, false);
        };
        let s2 = -(inv * jtr);
        let step = Vector3::new(s2[0], s2[1], 0.0);
        let (next, taken) = line_search(&x, &step, &rs);
        x = next;
        if taken.norm() < STEP_TOLERANCE {
            return finish(x, &rs, it, true);
        }
    }
    finish(x, &rs, MAX_ITERATIONS, false)
}

/// Halves the step until the cost does not increase.
fn line_search(x: &Vector3<f64>, step: &Vector3<f64>, rs: &[(Vector3<f64>, f64)]) -> (Vector3<f64>, Vector3<f64>) {
    let c0 = cost(x, rs);
    let mut s = *step;
    for _ in 0..20 {
        let cand = x + s;
        if cost(&cand, rs) <= c0 {
            return (cand, s);
        }
        s *= 0.5;
    }
    (*x, Vector3::zeros())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verification {
    Verified,
    Contradicted,
    InsufficientData,
}

/// How a node turns an estimate into a location-key check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    pub grid: f64,
    /// Search radius around the estimate with perfectly consistent ranges.
    pub base_radius: f64,
    /// Added radius per metre of RMS range residual.
    pub residual_gain: f64,
    pub max_radius: f64,
    /// Reported values older than this are not used as anchors.
    pub anchor_max_age: Tick,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            grid: crate::model::DEFAULT_GRID,
            base_radius: crate::model::DEFAULT_GRID,
            residual_gain: 2.0,
            max_radius: 2.0,
            anchor_max_age: 60,
        }
    }
}

impl VerifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid > 0.0)
            || !(self.base_radius >= 0.0)
            || !(self.residual_gain >= 0.0)
            || !(self.max_radius >= self.base_radius)
        {
            return Err(Error::Config(format!("invalid verification parameters {self:?}")));
        }
        Ok(())
    }

    pub fn radius(&self, fix: &Fix) -> f64 {
        (self.base_radius + self.residual_gain * fix.residual).min(self.max_radius)
    }
}

/// The node doing the verification and its own smoothed view of the subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observer {
    pub id: NodeId,
    pub location: Location,
    pub smoothed: Option<Rssi>,
}

/// Own measurement plus every fresh report about `subject` from a peer with
/// a known location.
pub fn gather_anchors(
    subject: &NodeId,
    store: &TopologyStore,
    observer: &Observer,
    now: Tick,
    max_age: Tick,
) -> Vec<AnchorObservation> {
    let mut out = Vec::new();
    if let Some(rssi) = observer.smoothed {
        out.push(AnchorObservation { anchor: observer.location, rssi });
    }
    for (link, history) in store.links() {
        let reporter = link.observer();
        if link.observed() != *subject || reporter == observer.id {
            continue;
        }
        let Some(sample) = history.latest(Some(Source::Reported)) else {
            continue;
        };
        if now.saturating_sub(sample.t) >= max_age {
            continue;
        }
        if let Some(loc) = store.peer(&reporter).and_then(|p| p.location) {
            out.push(AnchorObservation { anchor: loc, rssi: sample.value });
        }
    }
    out
}

/// Estimates the subject's position, or `None` with too few anchors.
pub fn estimate_subject(
    subject: &NodeId,
    store: &TopologyStore,
    observer: &Observer,
    model: &PathLossModel,
    params: &VerifyParams,
    now: Tick,
) -> Option<Fix> {
    let anchors = gather_anchors(subject, store, observer, now, params.anchor_max_age);
    let planar_z = (anchors.len() == 3).then(|| {
        store
            .peer(subject)
            .and_then(|p| p.location)
            .map(|l| l.z)
            .unwrap_or_else(|| anchors.iter().map(|a| a.anchor.z).sum::<f64>() / 3.0)
    });
    multilaterate(&anchors, model, planar_z).ok()
}

/// Grid cells whose centres lie within `radius` of `estimate`, nearest first.
pub fn candidate_cells(estimate: &Location, radius: f64, grid: f64) -> Vec<GridCell> {
    let Ok(centre) = GridCell::of(estimate, grid) else {
        return Vec::new();
    };
    let span = (radius / grid).ceil() as i64 + 1;
    let mut cells: Vec<(f64, GridCell)> = Vec::new();
    for dx in -span..=span {
        for dy in -span..=span {
            for dz in -span..=span {
                let c = GridCell([centre.0[0] + dx, centre.0[1] + dy, centre.0[2] + dz]);
                let d = c.center(grid).distance(estimate);
                if d <= radius + 1e-12 {
                    cells.push((d, c));
                }
            }
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cells.into_iter().map(|(_, c)| c).collect()
}

/// First candidate cell whose key matches the message.
pub fn matching_cell(msg: &PayloadMessage, cells: &[GridCell], grid: f64) -> Option<GridCell> {
    cells.iter().copied().find(|c| location_key_for_cell(*c, grid, &msg.payload) == msg.signed_payload)
}

/// Checks the message key against every candidate cell.
pub fn verify_against_cells(msg: &PayloadMessage, cells: &[GridCell], grid: f64) -> Verification {
    match matching_cell(msg, cells, grid) {
        Some(_) => Verification::Verified,
        None => Verification::Contradicted,
    }
}

pub fn locate_and_verify(
    subject: &NodeId,
    store: &TopologyStore,
    msg: &PayloadMessage,
    observer: &Observer,
    model: &PathLossModel,
    params: &VerifyParams,
    now: Tick,
) -> Verification {
    match estimate_subject(subject, store, observer, model, params, now) {
        None => Verification::InsufficientData,
        Some(fix) => {
            let cells = candidate_cells(&fix.location, params.radius(&fix), params.grid);
            verify_against_cells(msg, &cells, params.grid)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64, z: f64) -> Location {
        Location::new(x, y, z).unwrap()
    }

    fn m() -> PathLossModel {
        PathLossModel::default()
    }

    #[test]
    fn forward_model_values() {
        assert_eq!(m().rssi_from_distance(1.0).unwrap().value(), -40.0);
        assert!((m().rssi_from_distance(10.0).unwrap().value() - -60.0).abs() < 1e-12);
        // -40 - 20 log10(2) to 4 decimals
        assert!((m().rssi_from_distance(2.0).unwrap().value() - -46.0206).abs() < 5e-5);
        assert!(m().rssi_from_distance(0.0).is_err());
        assert!(m().rssi_from_distance(-1.0).is_err());
    }

    #[test]
    fn inverse_model_values() {
        let r = |v| Rssi::new(v).unwrap();
        assert!((m().distance_from_rssi(r(-40.0)) - 1.0).abs() < 1e-12);
        assert!((m().distance_from_rssi(r(-60.0)) - 10.0).abs() < 1e-12);
        let rt = m().distance_from_rssi(m().rssi_from_distance(3.7).unwrap());
        assert!((rt - 3.7).abs() < 1e-9);
    }

    #[test]
    fn model_params_validated() {
        assert!(PathLossModel::new(-40.0, 0.0, 1.0).is_err());
        assert!(PathLossModel::new(-40.0, 2.0, 0.0).is_err());
    }

    fn exact(anchors: &[Location], target: Location) -> Vec<AnchorObservation> {
        anchors
            .iter()
            .map(|a| AnchorObservation { anchor: *a, rssi: m().rssi_from_distance(a.distance(&target)).unwrap() })
            .collect()
    }

    #[test]
    fn recovers_3d_target() {
        let anchors = [loc(0., 0., 0.), loc(4., 0., 0.), loc(0., 4., 0.), loc(0., 0., 4.)];
        let fix = multilaterate(&exact(&anchors, loc(1., 1., 1.)), &m(), None).unwrap();
        assert!(fix.location.distance(&loc(1., 1., 1.)) < 1e-6, "{fix:?}");
        assert!(fix.residual < 1e-6);
        assert!(fix.converged);
    }

    #[test]
    fn recovers_planar_target() {
        let anchors = [loc(0., 0., 0.), loc(4., 0., 0.), loc(0., 4., 0.)];
        let fix = multilaterate(&exact(&anchors, loc(2., 1., 0.)), &m(), Some(0.0)).unwrap();
        assert!(fix.location.distance(&loc(2., 1., 0.)) < 1e-6, "{fix:?}");
    }

    #[test]
    fn too_few_anchors() {
        let anchors = [loc(0., 0., 0.), loc(4., 0., 0.)];
        assert_eq!(
            multilaterate(&exact(&anchors, loc(1., 1., 0.)), &m(), Some(0.0)),
            Err(Error::InsufficientAnchors { have: 2, need: 3 })
        );
        let three = [loc(0., 0., 0.), loc(4., 0., 0.), loc(0., 4., 0.)];
        assert!(multilaterate(&exact(&three, loc(1., 1., 0.)), &m(), None).is_err());
    }

    #[test]
    fn candidate_cells_nearest_first() {
        let cells = candidate_cells(&loc(1.0, 2.0, 0.0), 0.5, 0.5);
        assert_eq!(cells[0], GridCell([2, 4, 0]));
        // centre plus its six face neighbours
        assert_eq!(cells.len(), 7);
    }

    #[test]
    fn rssi_monotone_in_distance() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let v = m().raw_rssi(i as f64 * 0.1);
            assert!(v < prev);
            prev = v;
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exact_ranges_recover_targets_in_hull(
                a in 0.05f64..1.0, b in 0.05f64..1.0, c in 0.05f64..1.0,
            ) {
                let anchors = [loc(0., 0., 0.), loc(6., 0., 0.), loc(0., 6., 0.), loc(0., 0., 6.)];
                // barycentric point strictly inside the tetrahedron
                let s = a + b + c + 0.05;
                let target = loc(6.0 * a / s, 6.0 * b / s, 6.0 * c / s);
                let fix = multilaterate(&exact(&anchors, target), &m(), None).unwrap();
                prop_assert!(fix.location.distance(&target) < 1e-6);
            }

            #[test]
            fn distance_strictly_decreasing_in_rssi(x in -119.0f64..-1.0, dx in 0.01f64..1.0) {
                let lo = m().distance_from_rssi(Rssi::new(x).unwrap());
                let hi = m().distance_from_rssi(Rssi::new(x + dx).unwrap());
                prop_assert!(hi < lo);
            }
        }
    }
}
