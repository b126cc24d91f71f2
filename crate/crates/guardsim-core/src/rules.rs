//! Rule-based countermeasure selection: declarative condition/action pairs
//! that match recent attack events and activate dormant guards.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::host::MutationSource;
use crate::log::{LogBody, LogEntry};

/// Closed predicate over recent attack events. All present clauses must
/// hold; counting is over events matching the vector and target clauses
/// within the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    /// Attack vector ids to match; `None` matches any vector.
    pub vectors: Option<BTreeSet<String>>,
    /// Glob over the canonical target string (`*` wildcards), e.g.
    /// `service:*`; `None` matches any target.
    pub target: Option<String>,
    /// Minimum matching events within the window.
    pub min_count: usize,
    /// Window size in ticks, ending at the evaluation tick. Must be >= 1.
    pub window: u64,
}

impl Condition {
    fn event_matches(&self, entry: &LogEntry) -> bool {
        // Guard-sourced events never satisfy attack conditions.
        let LogBody::Mutation(mutation) = &entry.body else {
            return false;
        };
        let MutationSource::Attack(vector_id) = &mutation.source else {
            return false;
        };
        if let Some(vectors) = &self.vectors {
            if !vectors.contains(vector_id) {
                return false;
            }
        }
        if let Some(pattern) = &self.target {
            if !glob_match(pattern, &entry.target) {
                return false;
            }
        }
        true
    }

    /// Evaluate over the slice of events already limited to this rule's
    /// window.
    pub fn holds(&self, window: &[LogEntry]) -> bool {
        window.iter().filter(|e| self.event_matches(e)).count() >= self.min_count
    }
}

/// Condition/action pair. Higher priority evaluates first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub condition: Condition,
    /// Guard to activate when the condition holds.
    pub activate: String,
    /// Optional replacement parameters applied to the guard on activation.
    /// Must be the same guard kind; validated at scenario compile time.
    pub overrides: Option<crate::guard::GuardBehavior>,
    pub priority: i64,
}

/// Rules in declaration order; evaluation sorts by descending priority with
/// declaration order breaking ties.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rulebook {
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub rule_id: String,
    pub guard_id: String,
    pub overrides: Option<crate::guard::GuardBehavior>,
}

/// Return activations for every rule whose condition holds against the
/// window and whose guard is not already active. Pure and deterministic.
pub fn evaluate_rules(
    rulebook: &Rulebook,
    tick: u64,
    window: &[LogEntry],
    active_guards: &BTreeSet<String>,
) -> Vec<Activation> {
    let mut order: Vec<usize> = (0..rulebook.rules.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(rulebook.rules[i].priority), i));

    let mut activations = Vec::new();
    let mut activated: BTreeSet<&str> = BTreeSet::new();
    for i in order {
        let rule = &rulebook.rules[i];
        if active_guards.contains(&rule.activate) || activated.contains(rule.activate.as_str()) {
            continue;
        }
        let window_start = tick.saturating_sub(rule.condition.window - 1);
        let rule_window: Vec<LogEntry> = window
            .iter()
            .filter(|e| e.tick >= window_start && e.tick <= tick)
            .cloned()
            .collect();
        if rule.condition.holds(&rule_window) {
            activated.insert(&rule.activate);
            activations.push(Activation {
                rule_id: rule.rule_id.clone(),
                guard_id: rule.activate.clone(),
                overrides: rule.overrides.clone(),
            });
        }
    }
    activations
}

/// `*`-wildcard match; no other metacharacters.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    if !pattern.contains('*') {
        return pattern == text;
    }
    let parts: Vec<&str> = pattern.split('*').collect();
    let mut pos = 0usize;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        if i == 0 {
            if !text.starts_with(part) {
                return false;
            }
            pos = part.len();
        } else if i == parts.len() - 1 && !pattern.ends_with('*') {
            let rest = &text[pos..];
            if !rest.ends_with(part) {
                return false;
            }
            // The suffix must not overlap an earlier segment.
            if rest.len() < part.len() {
                return false;
            }
            return true;
        } else {
            match text[pos..].find(part) {
                Some(found) => pos += found + part.len(),
                None => return false,
            }
        }
    }
    true
}
