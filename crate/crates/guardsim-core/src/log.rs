//! Structured event log: every mutation, verification check, and rule
//! activation in a run, in execution order with provenance.

use serde::{Deserialize, Serialize};

use crate::host::{AttributeValue, Mutation, MutationOutcome};

/// Protocol phase an entry was recorded in. Within a tick, preemptive
/// guards log before the attack phase; all other guards log after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Setup,
    PreTest,
    AttackPhase,
    GuardPhase,
    RulePhase,
    PostTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogBody {
    Mutation(Mutation),
    Check {
        attribute: String,
        desired: AttributeValue,
        actual: AttributeValue,
    },
    Activation {
        rule: String,
        guard: String,
        effective_tick: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogOutcome {
    Applied,
    Blocked { reason: String },
    NoOp,
    /// The mutation did not resolve (e.g. re-adding a startup entry whose
    /// target file is gone).
    Error { message: String },
    Pass,
    Fail,
    Activated,
}

impl From<MutationOutcome> for LogOutcome {
    fn from(outcome: MutationOutcome) -> Self {
        match outcome {
            MutationOutcome::Applied => LogOutcome::Applied,
            MutationOutcome::Blocked { reason } => LogOutcome::Blocked { reason },
            MutationOutcome::NoOp => LogOutcome::NoOp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub phase: Phase,
    /// Canonical attribute string the entry acts on, for rule globs and
    /// human inspection (e.g. `service:firewall`).
    pub target: String,
    pub body: LogBody,
    pub outcome: LogOutcome,
}

impl LogEntry {
    /// The mutation, if this entry records one.
    pub fn mutation(&self) -> Option<&Mutation> {
        match &self.body {
            LogBody::Mutation(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_applied_mutation(&self) -> bool {
        self.mutation().is_some() && self.outcome == LogOutcome::Applied
    }
}

/// Ordered run log. `ticks` records the scheduled run length so a replay
/// can reproduce the final clock even when late ticks were quiet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub ticks: u64,
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn new(ticks: u64) -> Self {
        Self {
            ticks,
            entries: Vec::new(),
        }
    }

    pub fn applied_mutations(&self) -> impl Iterator<Item = &Mutation> {
        self.entries
            .iter()
            .filter(|e| e.outcome == LogOutcome::Applied)
            .filter_map(|e| e.mutation())
    }
}
