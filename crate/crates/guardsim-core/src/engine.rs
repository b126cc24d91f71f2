//! Deterministic tick loop: pre-test verification, interleaved
//! attacker/guard execution, rule evaluation, post-test verification, and
//! full event logging.
//!
//! Per tick: (1) preemptive guards run on end-of-previous-tick state,
//! (2) attackers run on the malware-visible view, (3) rules match the
//! tick's attack events and activate guards (effective next tick, unless
//! the guard runs preemptively, in which case it may act this tick),
//! (4) remaining active guards run, also observing end-of-previous-tick
//! state, (5) protected attributes are sampled for downtime accounting.
//! The entire run is a pure function of the spec, seed included.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{attacker_step, AttackScript};
use crate::guard::{
    guard_step, GuardBehavior, GuardObservation, GuardRunState, GuardStrategy, Trigger,
};
use crate::host::{
    build_host, Actor, AttrRef, AttributeValue, HostError, HostSpec, HostState, Mutation,
    MutationKind, ProcessId, SpecError,
};
use crate::log::{EventLog, LogBody, LogEntry, LogOutcome, Phase};
use crate::report::{assess_risk, control_state, ControlState, RiskAssessment};
use crate::rules::{evaluate_rules, Rulebook};

pub const REPORT_SCHEMA_VERSION: &str = "guardsim.report.v1";

/// One attribute the scenario promises to keep in a desired state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedAttribute {
    /// Scenario-file reference string, used as the report key.
    pub label: String,
    pub attr: AttrRef,
    pub desired: AttributeValue,
}

/// A scripted attacker, optionally embodied as a host process. If the
/// process dies, the script stops executing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerRun {
    pub name: String,
    pub process: Option<ProcessId>,
    pub script: AttackScript,
}

/// Fully resolved scenario: host definition, attackers, guard set,
/// rulebook, protected attributes, run length, and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub host: HostSpec,
    pub attackers: Vec<AttackerRun>,
    pub guards: Vec<GuardStrategy>,
    pub rulebook: Rulebook,
    pub protected: Vec<ProtectedAttribute>,
    pub run_length: u64,
    pub seed: u64,
    pub control_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardDefeat {
    pub guard_id: String,
    pub tick: u64,
    pub reason: String,
}

/// Outcome of one run: verdicts, latencies, control score, risk
/// assessment, and the full log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: String,
    pub seed: u64,
    pub run_length: u64,
    pub pretest: std::collections::BTreeMap<String, bool>,
    pub posttest: std::collections::BTreeMap<String, bool>,
    /// Per attribute: (tick of the break, tick the guard restored it).
    pub restoration_latencies: std::collections::BTreeMap<String, Vec<(u64, u64)>>,
    /// Per attribute: sampling points spent out of the desired state.
    pub downtime_ticks: std::collections::BTreeMap<String, u64>,
    pub guard_defeats: Vec<GuardDefeat>,
    /// Fraction of protected attributes in desired state at run end.
    pub control_score: f64,
    pub control: ControlState,
    pub risk: RiskAssessment,
    /// SHA-256 of the final host state; the replay comparison anchor.
    pub final_state_digest: String,
    pub log: EventLog,
}

impl ScenarioReport {
    pub fn posttest_all_pass(&self) -> bool {
        self.posttest.values().all(|pass| *pass)
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay diverged at tick {tick}: {detail}")]
    Divergence { tick: u64, detail: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Per-run mutable state for one configured guard.
struct GuardRuntime {
    strategy: GuardStrategy,
    state: GuardRunState,
    activated_at: Option<u64>,
    /// Rule-activated preemptive guard gets one post-attack run on its
    /// activation tick, then moves to the preemptive phase.
    pending_first_run: bool,
    next_poll: u64,
    iterations_left: Option<u64>,
    fired: bool,
    last_log_index: usize,
}

impl GuardRuntime {
    fn new(strategy: GuardStrategy) -> Self {
        let activated_at = if strategy.initially_active {
            match strategy.trigger {
                Trigger::Preemptive => Some(0),
                Trigger::Manual(tick) => Some(tick),
                Trigger::AutomaticOnEvent => Some(0),
            }
        } else {
            None
        };
        let mut runtime = Self {
            strategy,
            state: GuardRunState::default(),
            activated_at: None,
            pending_first_run: false,
            next_poll: 0,
            iterations_left: None,
            fired: false,
            last_log_index: 0,
        };
        if let Some(tick) = activated_at {
            runtime.arm(tick, false);
        }
        runtime
    }

    /// Latch activation effective at `tick` and reset cadence state.
    fn arm(&mut self, tick: u64, pending_first_run: bool) {
        self.activated_at = Some(tick);
        self.pending_first_run = pending_first_run;
        self.next_poll = tick;
        self.fired = false;
        if let GuardBehavior::RegistrySentinel { iterations, .. } = &self.strategy.behavior {
            self.iterations_left = *iterations;
        }
    }

    fn is_active(&self, tick: u64) -> bool {
        self.activated_at.is_some_and(|at| tick >= at)
            && self.strategy.deactivate_at.is_none_or(|until| tick < until)
    }

    fn runs_in_preemptive_phase(&self, tick: u64) -> bool {
        self.strategy.trigger == Trigger::Preemptive
            && self.is_active(tick)
            && !self.pending_first_run
    }

    fn runs_in_guard_phase(&self, tick: u64) -> bool {
        self.is_active(tick)
            && (self.strategy.trigger != Trigger::Preemptive || self.pending_first_run)
    }

    fn cadence_due(&self, tick: u64) -> bool {
        match &self.strategy.behavior {
            GuardBehavior::RegistrySentinel { .. } => {
                self.iterations_left != Some(0) && tick >= self.next_poll
            }
            GuardBehavior::ProcessRandomizer { .. } => !self.fired,
            _ => true,
        }
    }

    fn consume_cadence(&mut self, tick: u64) {
        match &self.strategy.behavior {
            GuardBehavior::RegistrySentinel { poll_period, .. } => {
                self.next_poll = tick + poll_period.max(&1);
                if let Some(left) = &mut self.iterations_left {
                    *left = left.saturating_sub(1);
                }
            }
            GuardBehavior::ProcessRandomizer { .. } => {
                self.fired = true;
            }
            _ => {}
        }
    }
}

struct RunContext {
    host: HostState,
    log: EventLog,
    rng: ChaCha8Rng,
    defeats: Vec<GuardDefeat>,
}

impl RunContext {
    fn apply_and_log(&mut self, tick: u64, phase: Phase, mutation: Mutation) -> LogOutcome {
        let target = self.host.mutation_target(&mutation.kind);
        let outcome: LogOutcome = match self.host.apply_mutation(&mutation) {
            Ok(outcome) => outcome.into(),
            Err(HostError::UnknownTarget(what)) => LogOutcome::Error {
                message: format!("unknown target: {what}"),
            },
        };
        self.log.entries.push(LogEntry {
            tick,
            phase,
            target,
            body: LogBody::Mutation(mutation),
            outcome: outcome.clone(),
        });
        outcome
    }

    fn run_guard(&mut self, guard: &mut GuardRuntime, tick: u64, view_snapshot: &crate::host::HostView) {
        let step_result = {
            let obs = GuardObservation {
                tick,
                events: &self.log.entries[guard.last_log_index.min(self.log.entries.len())..],
                view: view_snapshot,
            };
            guard_step(&guard.strategy, &mut guard.state, &obs, &mut self.rng)
        };
        guard.consume_cadence(tick);
        match step_result {
            Ok(mutations) => {
                let randomizer =
                    matches!(guard.strategy.behavior, GuardBehavior::ProcessRandomizer { .. });
                for mutation in mutations {
                    let spawn = matches!(mutation.kind, MutationKind::SpawnProcess { .. });
                    let next_pid = self.host.peek_next_pid();
                    let outcome = self.apply_and_log(tick, Phase::GuardPhase, mutation);
                    if randomizer && spawn && outcome == LogOutcome::Applied {
                        guard.state.tracked_pid = Some(next_pid);
                    }
                }
            }
            Err(err) => {
                self.defeats.push(GuardDefeat {
                    guard_id: guard.strategy.id.clone(),
                    tick,
                    reason: err.to_string(),
                });
            }
        }
        guard.last_log_index = self.log.entries.len();
    }

    fn check_attributes(
        &mut self,
        tick: u64,
        phase: Phase,
        protected: &[ProtectedAttribute],
    ) -> std::collections::BTreeMap<String, bool> {
        let mut results = std::collections::BTreeMap::new();
        for attr in protected {
            let actual = self
                .host
                .query_attribute(&attr.attr)
                .unwrap_or(AttributeValue::ProcessAlive(false));
            let pass = actual == attr.desired;
            self.log.entries.push(LogEntry {
                tick,
                phase,
                target: attr.label.clone(),
                body: LogBody::Check {
                    attribute: attr.label.clone(),
                    desired: attr.desired.clone(),
                    actual,
                },
                outcome: if pass { LogOutcome::Pass } else { LogOutcome::Fail },
            });
            results.insert(attr.label.clone(), pass);
        }
        results
    }
}

/// Execute the full protocol for one scenario.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioReport, SpecError> {
    if spec.run_length == 0 {
        return Err(SpecError::Invalid {
            what: "run length".into(),
            detail: "must be at least 1 tick".into(),
        });
    }
    let host = build_host(&spec.host)?;
    for attr in &spec.protected {
        host.query_attribute(&attr.attr).map_err(|e| SpecError::Invalid {
            what: format!("protected attribute {}", attr.label),
            detail: e.to_string(),
        })?;
    }

    let mut ctx = RunContext {
        host,
        log: EventLog::new(spec.run_length),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        defeats: Vec::new(),
    };
    let mut guards: Vec<GuardRuntime> = spec
        .guards
        .iter()
        .cloned()
        .map(GuardRuntime::new)
        .collect();
    let mut latched: BTreeSet<String> = guards
        .iter()
        .filter(|g| g.activated_at.is_some())
        .map(|g| g.strategy.id.clone())
        .collect();

    let pretest = ctx.check_attributes(0, Phase::PreTest, &spec.protected);

    let mut samples: Vec<Vec<bool>> = Vec::with_capacity(spec.run_length as usize);
    for tick in 0..spec.run_length {
        ctx.host.advance_tick(tick);
        // Both guard phases observe the host as of the end of the previous
        // tick; restoration therefore lags detection by at least one tick.
        let guard_view = ctx.host.visible_view(Actor::Organization);

        for guard in guards.iter_mut() {
            if guard.runs_in_preemptive_phase(tick) && guard.cadence_due(tick) {
                ctx.run_guard(guard, tick, &guard_view);
            }
        }

        let attack_view = ctx.host.visible_view(Actor::Malware);
        for attacker in &spec.attackers {
            if let Some(pid) = attacker.process {
                if !ctx.host.processes.get(&pid).map(|p| p.alive).unwrap_or(false) {
                    continue;
                }
            }
            for mutation in attacker_step(&attacker.script, tick, &attack_view) {
                ctx.apply_and_log(tick, Phase::AttackPhase, mutation);
            }
        }

        let activations = evaluate_rules(&spec.rulebook, tick, &ctx.log.entries, &latched);
        for activation in activations {
            let Some(guard) = guards
                .iter_mut()
                .find(|g| g.strategy.id == activation.guard_id)
            else {
                continue;
            };
            if let Some(overrides) = activation.overrides {
                guard.strategy.behavior = overrides;
            }
            // Detection costs a tick unless the guard runs preemptively.
            let preemptive = guard.strategy.trigger == Trigger::Preemptive;
            let effective = if preemptive { tick } else { tick + 1 };
            guard.arm(effective, preemptive);
            latched.insert(guard.strategy.id.clone());
            ctx.log.entries.push(LogEntry {
                tick,
                phase: Phase::RulePhase,
                target: format!("guard:{}", activation.guard_id),
                body: LogBody::Activation {
                    rule: activation.rule_id,
                    guard: activation.guard_id,
                    effective_tick: effective,
                },
                outcome: LogOutcome::Activated,
            });
        }

        for guard in guards.iter_mut() {
            if guard.runs_in_guard_phase(tick) && guard.cadence_due(tick) {
                ctx.run_guard(guard, tick, &guard_view);
                guard.pending_first_run = false;
            }
        }

        let tick_sample: Vec<bool> = spec
            .protected
            .iter()
            .map(|attr| {
                ctx.host
                    .query_attribute(&attr.attr)
                    .map(|actual| actual == attr.desired)
                    .unwrap_or(false)
            })
            .collect();
        samples.push(tick_sample);
    }

    let final_tick = spec.run_length - 1;
    let posttest = ctx.check_attributes(final_tick, Phase::PostTest, &spec.protected);

    let mut restoration_latencies = std::collections::BTreeMap::new();
    let mut downtime_ticks = std::collections::BTreeMap::new();
    for (idx, attr) in spec.protected.iter().enumerate() {
        let timeline: Vec<bool> = samples.iter().map(|row| row[idx]).collect();
        let mut episodes = Vec::new();
        let mut open_break: Option<u64> = None;
        for (tick, ok) in timeline.iter().enumerate() {
            let tick = tick as u64;
            let was_ok = if tick == 0 {
                pretest.get(&attr.label).copied().unwrap_or(true)
            } else {
                timeline[(tick - 1) as usize]
            };
            if open_break.is_none() && was_ok && !ok {
                open_break = Some(tick);
            } else if let Some(broke_at) = open_break {
                if *ok {
                    episodes.push((broke_at, tick));
                    open_break = None;
                }
            }
        }
        restoration_latencies.insert(attr.label.clone(), episodes);
        downtime_ticks.insert(
            attr.label.clone(),
            timeline.iter().filter(|ok| !**ok).count() as u64,
        );
    }

    let control_score = if spec.protected.is_empty() {
        1.0
    } else {
        posttest.values().filter(|pass| **pass).count() as f64 / spec.protected.len() as f64
    };
    let control = control_state(control_score, spec.control_threshold);
    let risk = assess_risk(&control);

    Ok(ScenarioReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        seed: spec.seed,
        run_length: spec.run_length,
        pretest,
        posttest,
        restoration_latencies,
        downtime_ticks,
        guard_defeats: ctx.defeats,
        control_score,
        control,
        risk,
        final_state_digest: ctx.host.digest(),
        log: ctx.log,
    })
}

/// Re-apply a log against a fresh host, verifying every recorded outcome.
/// Returns the reconstructed final state; any mismatch is a divergence.
pub fn replay(log: &EventLog, host_spec: &HostSpec) -> Result<HostState, ReplayError> {
    let mut host = build_host(host_spec)?;
    for entry in &log.entries {
        if entry.tick < host.tick {
            return Err(ReplayError::Divergence {
                tick: entry.tick,
                detail: format!("entry tick went backwards from {}", host.tick),
            });
        }
        host.advance_tick(entry.tick);
        let LogBody::Mutation(mutation) = &entry.body else {
            continue;
        };
        let outcome: LogOutcome = match host.apply_mutation(mutation) {
            Ok(outcome) => outcome.into(),
            Err(HostError::UnknownTarget(what)) => LogOutcome::Error {
                message: format!("unknown target: {what}"),
            },
        };
        if outcome != entry.outcome {
            return Err(ReplayError::Divergence {
                tick: entry.tick,
                detail: format!(
                    "recorded outcome {:?} but replay produced {:?} for {}",
                    entry.outcome, outcome, entry.target
                ),
            });
        }
    }
    if log.ticks > 0 && host.tick < log.ticks - 1 {
        host.advance_tick(log.ticks - 1);
    }
    Ok(host)
}

/// Replay a log up to and including `tick`, for state inspection at a
/// point in time. Outcome verification applies along the way.
pub fn replay_until(
    log: &EventLog,
    host_spec: &HostSpec,
    tick: u64,
) -> Result<HostState, ReplayError> {
    let truncated = EventLog {
        ticks: tick.saturating_add(1).min(log.ticks),
        entries: log
            .entries
            .iter()
            .filter(|e| e.tick <= tick)
            .cloned()
            .collect(),
    };
    replay(&truncated, host_spec)
}
