//! Built-in scenarios.
//!
//! All four share one layout: five nodes on three height levels. Nodes 2, 3
//! and 5 share a level, node 1 sits one metre below and node 4 one metre
//! above. Plane distances between nodes stay between 0.5 and about 2 m.

use crate::error::{Error, Result};
use crate::model::{Location, NodeId, SensorType};
use crate::sim::scenario::{AttackKind, AttackSpec, Movement, NodeSpec, Scenario};

pub const BUILTIN_NAMES: [&str; 4] = ["paper-fig7", "static-honest", "spoof-attack", "malicious-bft"];

pub const FIG7_POSITIONS: [[f64; 3]; 5] =
    [[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.5, 0.0], [2.0, 1.0, 1.0], [1.0, 2.0, 0.0]];

/// Where node 5 is carried in `paper-fig7`.
pub const FIG7_AWAY: [f64; 3] = [1.0, 6.0, 0.0];

fn at(p: [f64; 3]) -> Location {
    Location::new(p[0], p[1], p[2]).expect("finite constant")
}

fn layout() -> Vec<NodeSpec> {
    const SENSORS: [SensorType; 5] = [
        SensorType::Temperature,
        SensorType::Humidity,
        SensorType::Pressure,
        SensorType::Acceleration,
        SensorType::Temperature,
    ];
    FIG7_POSITIONS
        .iter()
        .zip(SENSORS)
        .enumerate()
        .map(|(i, (p, sensor_type))| NodeSpec {
            id: format!("N{}", i + 1),
            mac: NodeId::from_index(i as u16 + 1),
            position: at(*p),
            sensor_type,
            payload_period: 1,
        })
        .collect()
}

fn base(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed: 1,
        duration: 900,
        tick_ms: 100,
        nodes: layout(),
        movements: Vec::new(),
        attacks: Vec::new(),
        channel: Default::default(),
        filter: Default::default(),
        protocol: Default::default(),
    }
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let mut s = base(name);
    match name {
        "paper-fig7" => {
            s.movements = vec![
                Movement { node: "N5".into(), at: 300, to: at(FIG7_AWAY), announce: true },
                Movement { node: "N5".into(), at: 600, to: at(FIG7_POSITIONS[4]), announce: true },
            ];
        }
        "static-honest" => {}
        "spoof-attack" => {
            s.attacks = vec![AttackSpec {
                kind: AttackKind::IdentitySpoof,
                at: 400,
                params: serde_json::json!({
                    "victim": "N1",
                    "position": [-4.0, -3.0, -1.0],
                    "rate": 3,
                }),
            }];
        }
        "malicious-bft" => {
            s.attacks = vec![AttackSpec {
                kind: AttackKind::MaliciousBft,
                at: 300,
                params: serde_json::json!({
                    "attacker": "N4",
                    "victim": "N2",
                    "fabricated_rssi": -90.0,
                    "period": 10,
                }),
            }];
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    }
    Ok(s)
}

/// Checks the height levels and plane distances of the shared layout.
pub fn layout_violations(nodes: &[NodeSpec]) -> Vec<String> {
    let mut bad = Vec::new();
    if nodes.len() != 5 {
        bad.push(format!("expected 5 nodes, got {}", nodes.len()));
        return bad;
    }
    let z: Vec<f64> = nodes.iter().map(|n| n.position.z).collect();
    let level = z[1];
    if z[2] != level || z[4] != level {
        bad.push("nodes 2, 3 and 5 must share a height level".into());
    }
    if z[0] != level - 1.0 {
        bad.push("node 1 must be one metre below the shared level".into());
    }
    if z[3] != level + 1.0 {
        bad.push("node 4 must be one metre above the shared level".into());
    }
    for i in 0..5 {
        for j in i + 1..5 {
            let (a, b) = (nodes[i].position, nodes[j].position);
            let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
            if !(0.5..=2.3).contains(&d) {
                bad.push(format!("plane distance {}-{} is {d:.3} m", nodes[i].id, nodes[j].id));
            }
        }
    }
    bad
}
