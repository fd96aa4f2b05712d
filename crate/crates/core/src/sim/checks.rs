//! Pass/fail checks derived from what a scenario contains.

use serde::Serialize;

use crate::sim::harness::RunOutput;
use crate::sim::metrics::{ATTACK_WINDOW, DETECTION_WINDOW};
use crate::sim::scenario::{AttackKind, Scenario};

/// Most BFT messages one observer may send about a moved node per detection window.
pub const MAX_BFT_PER_MOVE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), pass, detail: detail.into() }
    }
}

/// * trace and metrics agree;
/// * no BFT outside movement and attack windows;
/// * a network without movements or attacks stays silent;
/// * every other node questions a moved node 1 to 2 times within the
///   detection window;
/// * an identity spoof is questioned by more than tau honest nodes and
///   distrusted by at least one;
/// * a lone malicious reporter does not get its victim distrusted.
pub fn check_run(sc: &Scenario, out: &RunOutput) -> Vec<CheckResult> {
    let m = &out.metrics;
    let mut res = Vec::new();
    let diff = m.cross_check(&out.trace.events);
    res.push(CheckResult::new("trace-matches-metrics", diff.is_empty(), diff.join("; ")));
    res.push(CheckResult::new(
        "no-static-false-positives",
        m.static_false_positives == 0,
        format!("{} BFT outside movement/attack windows", m.static_false_positives),
    ));
    if sc.movements.is_empty() && sc.attacks.is_empty() {
        let (b, a) = (m.total_bft(), m.total_alerts());
        res.push(CheckResult::new("quiet-network", b == 0 && a == 0, format!("{b} BFT, {a} alerts")));
    }
    for mv in &m.movements {
        let bad: Vec<String> = mv
            .bft_in_window
            .iter()
            .filter(|(_, &n)| !(1..=MAX_BFT_PER_MOVE).contains(&n))
            .map(|(who, n)| format!("{who}={n}"))
            .collect();
        let counts: Vec<String> = mv.bft_in_window.iter().map(|(w, n)| format!("{w}={n}")).collect();
        res.push(CheckResult::new(
            format!("movement-{}@{}", mv.node, mv.at),
            bad.is_empty(),
            format!("BFT about {} within {DETECTION_WINDOW} ticks: {}", mv.node, counts.join(" ")),
        ));
    }
    for a in &m.attacks {
        match a.kind {
            AttackKind::IdentitySpoof => {
                let tau = a.tau.values().copied().max().unwrap_or(0);
                let pass = a.bft_senders.len() > tau && !a.distrusting.is_empty();
                res.push(CheckResult::new(
                    format!("spoof-{}@{}", a.victim, a.at),
                    pass,
                    format!(
                        "{} honest BFT senders within {ATTACK_WINDOW} ticks (tau {tau}); distrusted by [{}]",
                        a.bft_senders.len(),
                        a.distrusting.join(",")
                    ),
                ));
            }
            AttackKind::MaliciousBft => {
                let eps = sc.protocol.epsilon;
                let pass = a.distrusting.is_empty() && a.victim_trust.values().all(|&v| v >= eps);
                res.push(CheckResult::new(
                    format!("malicious-bft-{}@{}", a.victim, a.at),
                    pass,
                    format!("victim distrusted by [{}]", a.distrusting.join(",")),
                ));
            }
            AttackKind::Replay => {}
        }
    }
    res
}
