//! Deterministic single-host attack/defense simulator.
//!
//! Scripted attackers execute CAPEC-style self-preservation attacks against
//! protected host attributes while a catalog of guard strategies detects,
//! resists, and restores them. A scenario is a pure function of its spec
//! and seed: runs replay bit-exactly from their event logs.

#![forbid(unsafe_code)]

pub mod attack;
pub mod engine;
pub mod gen;
pub mod guard;
pub mod host;
pub mod log;
pub mod report;
pub mod rules;
pub mod scenario;

pub use engine::{replay, replay_until, run_scenario, ReplayError, ScenarioReport, ScenarioSpec};
pub use host::{build_host, HostSpec, HostState, SpecError};
pub use report::{render_report, ReportFormat};
pub use scenario::{parse_scenario, ScenarioError, ScenarioFile};
