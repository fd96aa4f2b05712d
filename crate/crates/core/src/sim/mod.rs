//! Scenario-driven network simulation.

pub mod builtin;
pub mod checks;
pub mod harness;
pub mod metrics;
pub mod scenario;
pub mod trace;

pub use builtin::{builtin_scenario, BUILTIN_NAMES};
pub use checks::{check_run, CheckResult};
pub use harness::{run, RunOutput};
pub use metrics::RunMetrics;
pub use scenario::{Attack, AttackKind, AttackSpec, Movement, NodeSpec, Scenario};
pub use trace::{Event, RssiFormat, RssiRow, Trace};
