//! Guard strategies: resilience patterns reused from malware self-defense.
//!
//! Each kind is a pure step function from a host observation to a mutation
//! list carrying `actor = Organization`. Internal run state (sentinel poll
//! phase, remaining iterations, the randomizer's current pid) is owned by
//! the engine and passed in, so guards stay reusable across runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::ProcessMatcher;
use crate::host::{
    Actor, AttrRef, EntryId, FilePath, HostView, KeyPath, Mutation, MutationKind, MutationSource,
    ProcessId, Scalar, ServiceId, ToolId, ToolStatus,
};
use crate::log::LogEntry;

pub const RANDOM_NAME_LEN: usize = 12;
const RANDOM_NAME_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// Passive guards resist without acting; active guards take actions of
/// their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Posture {
    Passive,
    Active,
}

/// Generic guards resist any attacker; targeted guards act against known
/// adversaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Generic,
    Targeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub posture: Posture,
    pub scope: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardKind {
    ServiceRestorer,
    RegistrySentinel,
    ProcessRandomizer,
    RedundantStartup,
    AdversaryTerminator,
    AttributeLocker,
    Hider,
    SupportToolDisabler,
}

impl GuardKind {
    pub const ALL: [GuardKind; 8] = [
        GuardKind::ServiceRestorer,
        GuardKind::RegistrySentinel,
        GuardKind::ProcessRandomizer,
        GuardKind::RedundantStartup,
        GuardKind::AdversaryTerminator,
        GuardKind::AttributeLocker,
        GuardKind::Hider,
        GuardKind::SupportToolDisabler,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GuardKind::ServiceRestorer => "service-restorer",
            GuardKind::RegistrySentinel => "registry-sentinel",
            GuardKind::ProcessRandomizer => "process-randomizer",
            GuardKind::RedundantStartup => "redundant-startup",
            GuardKind::AdversaryTerminator => "adversary-terminator",
            GuardKind::AttributeLocker => "attribute-locker",
            GuardKind::Hider => "hider",
            GuardKind::SupportToolDisabler => "support-tool-disabler",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            GuardKind::ServiceRestorer => "restart a protected service when it stops",
            GuardKind::RegistrySentinel => "poll a registry key, recreate and reset it on change",
            GuardKind::ProcessRandomizer => {
                "copy the guarded executable under a random name and respawn"
            }
            GuardKind::RedundantStartup => "keep k redundant startup entries present",
            GuardKind::AdversaryTerminator => "kill known malicious processes before they act",
            GuardKind::AttributeLocker => "lock attributes against malware manipulation",
            GuardKind::Hider => "hide assets from the malware's view",
            GuardKind::SupportToolDisabler => "disable support tools malware could use",
        }
    }
}

/// Fixed taxonomy assignment per kind.
pub fn classify(kind: GuardKind) -> Classification {
    let posture = match kind {
        GuardKind::Hider | GuardKind::AttributeLocker => Posture::Passive,
        _ => Posture::Active,
    };
    let scope = match kind {
        GuardKind::AdversaryTerminator => Scope::Targeted,
        _ => Scope::Generic,
    };
    Classification { posture, scope }
}

/// When a guard becomes eligible to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    /// Active from tick 0 and runs before the attacker each tick.
    Preemptive,
    /// Activated at a fixed tick by the operator; runs after the attacker.
    Manual(u64),
    /// Dormant until a rule activates it; runs after the attacker.
    AutomaticOnEvent,
}

/// Startup entry template for the redundancy guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartupTemplate {
    pub entry: EntryId,
    pub target: FilePath,
}

/// Kind-specific configuration. One variant per Table-2-derived pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardBehavior {
    ServiceRestorer {
        service: ServiceId,
    },
    RegistrySentinel {
        key: KeyPath,
        desired: Scalar,
        /// Ticks between polls (the pseudo-real-time pause).
        poll_period: u64,
        /// Number of polls before the sentinel stops; `None` = unbounded.
        iterations: Option<u64>,
    },
    ProcessRandomizer {
        process: ProcessId,
    },
    RedundantStartup {
        entries: Vec<StartupTemplate>,
    },
    AdversaryTerminator {
        blocklist: Vec<ProcessMatcher>,
    },
    AttributeLocker {
        targets: Vec<AttrRef>,
    },
    Hider {
        targets: Vec<AttrRef>,
    },
    SupportToolDisabler {
        tools: Vec<ToolId>,
    },
}

impl GuardBehavior {
    pub fn kind(&self) -> GuardKind {
        match self {
            GuardBehavior::ServiceRestorer { .. } => GuardKind::ServiceRestorer,
            GuardBehavior::RegistrySentinel { .. } => GuardKind::RegistrySentinel,
            GuardBehavior::ProcessRandomizer { .. } => GuardKind::ProcessRandomizer,
            GuardBehavior::RedundantStartup { .. } => GuardKind::RedundantStartup,
            GuardBehavior::AdversaryTerminator { .. } => GuardKind::AdversaryTerminator,
            GuardBehavior::AttributeLocker { .. } => GuardKind::AttributeLocker,
            GuardBehavior::Hider { .. } => GuardKind::Hider,
            GuardBehavior::SupportToolDisabler { .. } => GuardKind::SupportToolDisabler,
        }
    }
}

/// A configured resilience pattern instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardStrategy {
    pub id: String,
    pub behavior: GuardBehavior,
    pub trigger: Trigger,
    /// Guards normally self-activate per their trigger; set false to leave
    /// a guard dormant until a rule activates it.
    pub initially_active: bool,
    /// Latching activation ends here if set.
    pub deactivate_at: Option<u64>,
}

impl GuardStrategy {
    pub fn classification(&self) -> Classification {
        classify(self.behavior.kind())
    }
}

/// What a guard sees when it runs: the organization-side view as of the end
/// of the previous tick, plus the log slice since its last run.
pub struct GuardObservation<'a> {
    pub tick: u64,
    pub events: &'a [LogEntry],
    pub view: &'a HostView,
}

/// Mutable per-run state for one guard instance, owned by the engine.
#[derive(Debug, Clone, Default)]
pub struct GuardRunState {
    /// Current head of the randomizer's process lineage.
    pub tracked_pid: Option<ProcessId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error("guard {guard}: target {target} no longer resolves")]
    UnknownTarget { guard: String, target: String },
}

fn guard_mutation(guard_id: &str, kind: MutationKind) -> Mutation {
    Mutation {
        kind,
        actor: Actor::Organization,
        source: MutationSource::Guard(guard_id.to_string()),
    }
}

/// Restart the service if the view shows it stopped.
pub fn service_restorer_step(
    guard_id: &str,
    service: &ServiceId,
    view: &HostView,
) -> Result<Vec<Mutation>, GuardError> {
    let Some(entry) = view.services.get(service) else {
        return Err(GuardError::UnknownTarget {
            guard: guard_id.to_string(),
            target: format!("service:{service}"),
        });
    };
    if entry.running {
        Ok(vec![])
    } else {
        Ok(vec![guard_mutation(
            guard_id,
            MutationKind::SetServiceRunning {
                service: service.clone(),
                running: true,
            },
        )])
    }
}

/// One sentinel poll: recreate the key if it is gone, then reset the value
/// if it differs from the desired flag.
pub fn registry_sentinel_step(
    guard_id: &str,
    key: &KeyPath,
    desired: &Scalar,
    view: &HostView,
) -> Vec<Mutation> {
    let set = guard_mutation(
        guard_id,
        MutationKind::SetRegistryValue {
            key: key.clone(),
            value: desired.clone(),
        },
    );
    match view.registry.get(key) {
        Some(entry) if entry.exists => {
            if entry.value.as_ref() == Some(desired) {
                vec![]
            } else {
                vec![set]
            }
        }
        _ => vec![
            guard_mutation(guard_id, MutationKind::CreateRegistryKey { key: key.clone() }),
            set,
        ],
    }
}

/// Copy the guarded executable under a fresh random name in the same
/// directory, spawn the copy, then exit the original process. Exactly one
/// descendant stays alive.
pub fn process_randomizer_step(
    guard_id: &str,
    current_pid: ProcessId,
    view: &HostView,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Mutation>, GuardError> {
    let Some(process) = view.processes.get(&current_pid).filter(|p| p.alive) else {
        // The guard was killed before it could trigger: a recorded defeat.
        return Err(GuardError::UnknownTarget {
            guard: guard_id.to_string(),
            target: format!("process:{current_pid}"),
        });
    };
    let Some(image) = process.image_path.clone() else {
        return Err(GuardError::UnknownTarget {
            guard: guard_id.to_string(),
            target: format!("process:{} (no image file)", process.name),
        });
    };
    if !view.files.contains_key(&image) {
        // Never exit the original without a viable copy source.
        return Err(GuardError::UnknownTarget {
            guard: guard_id.to_string(),
            target: format!("file:{image}"),
        });
    }

    let dir = image.directory().to_string();
    let new_name = loop {
        let candidate = random_name(rng);
        let candidate_path = FilePath::join(&dir, &candidate);
        let name_taken = view.processes.values().any(|p| p.name == candidate);
        let path_taken = view.files.contains_key(&candidate_path);
        if !name_taken && !path_taken {
            break candidate;
        }
    };
    let new_path = FilePath::join(&dir, &new_name);

    Ok(vec![
        guard_mutation(
            guard_id,
            MutationKind::CopyFile {
                src: image,
                dest: new_path.clone(),
            },
        ),
        guard_mutation(
            guard_id,
            MutationKind::SpawnProcess {
                name: new_name,
                image_path: Some(new_path),
                hidden: process.hidden,
                locked: process.locked,
                owner: process.owner,
                lineage_root: Some(process.lineage_root),
            },
        ),
        guard_mutation(guard_id, MutationKind::KillProcess { pid: current_pid }),
    ])
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    (0..RANDOM_NAME_LEN)
        .map(|_| RANDOM_NAME_ALPHABET[rng.gen_range(0..RANDOM_NAME_ALPHABET.len())] as char)
        .collect()
}

/// Re-add every missing startup entry among the templates. Templates whose
/// target file is gone are still emitted; the choke-point records the
/// failure.
pub fn redundant_startup_step(
    guard_id: &str,
    templates: &[StartupTemplate],
    view: &HostView,
) -> Vec<Mutation> {
    templates
        .iter()
        .filter(|t| !view.startup_entries.contains_key(&t.entry))
        .map(|t| {
            guard_mutation(
                guard_id,
                MutationKind::AddStartupEntry {
                    entry: t.entry.clone(),
                    target: t.target.clone(),
                    locked: false,
                },
            )
        })
        .collect()
}

/// Kill every live malware-owned process matching the blocklist.
/// Organization-owned matches are never killed.
pub fn adversary_terminator_step(
    guard_id: &str,
    blocklist: &[ProcessMatcher],
    view: &HostView,
) -> Vec<Mutation> {
    view.processes
        .values()
        .filter(|p| {
            p.alive
                && p.owner == Actor::Malware
                && blocklist
                    .iter()
                    .any(|m| m.matches(&p.name, p.image_path.as_ref()))
        })
        .map(|p| guard_mutation(guard_id, MutationKind::KillProcess { pid: p.pid }))
        .collect()
}

fn attr_is_locked(view: &HostView, target: &AttrRef) -> Option<bool> {
    match target {
        AttrRef::Service(id) => view.services.get(id).map(|e| e.locked),
        AttrRef::Registry(key) => view.registry.get(key).map(|e| e.locked),
        AttrRef::Process(pid) => view.processes.get(pid).map(|e| e.locked),
        AttrRef::File(path) => view.files.get(path).map(|e| e.locked),
        AttrRef::Startup(id) => view.startup_entries.get(id).map(|e| e.locked),
        _ => None,
    }
}

fn attr_is_hidden(view: &HostView, target: &AttrRef) -> Option<bool> {
    match target {
        AttrRef::Process(pid) => view.processes.get(pid).map(|e| e.hidden),
        AttrRef::File(path) => view.files.get(path).map(|e| e.hidden),
        _ => None,
    }
}

/// Lock each target not already locked. Idempotent.
pub fn locker_step(guard_id: &str, targets: &[AttrRef], view: &HostView) -> Vec<Mutation> {
    targets
        .iter()
        .filter(|t| attr_is_locked(view, t) == Some(false))
        .map(|t| {
            guard_mutation(
                guard_id,
                MutationKind::SetLocked {
                    target: t.clone(),
                    locked: true,
                },
            )
        })
        .collect()
}

/// Hide each target not already hidden. Idempotent.
pub fn hider_step(guard_id: &str, targets: &[AttrRef], view: &HostView) -> Vec<Mutation> {
    targets
        .iter()
        .filter(|t| attr_is_hidden(view, t) == Some(false))
        .map(|t| {
            guard_mutation(
                guard_id,
                MutationKind::SetHidden {
                    target: t.clone(),
                    hidden: true,
                },
            )
        })
        .collect()
}

/// Disable each tool still enabled. Idempotent.
pub fn support_tool_disabler_step(
    guard_id: &str,
    tools: &[ToolId],
    view: &HostView,
) -> Vec<Mutation> {
    tools
        .iter()
        .filter(|t| view.support_tools.get(*t) == Some(&ToolStatus::Enabled))
        .map(|t| {
            guard_mutation(
                guard_id,
                MutationKind::SetToolStatus {
                    tool: t.clone(),
                    status: ToolStatus::Disabled,
                },
            )
        })
        .collect()
}

/// Dispatch one guard run. A guard whose target is already in the desired
/// state emits an empty list.
pub fn guard_step(
    guard: &GuardStrategy,
    state: &mut GuardRunState,
    obs: &GuardObservation<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Mutation>, GuardError> {
    match &guard.behavior {
        GuardBehavior::ServiceRestorer { service } => {
            service_restorer_step(&guard.id, service, obs.view)
        }
        GuardBehavior::RegistrySentinel { key, desired, .. } => {
            Ok(registry_sentinel_step(&guard.id, key, desired, obs.view))
        }
        GuardBehavior::ProcessRandomizer { process } => {
            let current = state.tracked_pid.unwrap_or(*process);
            process_randomizer_step(&guard.id, current, obs.view, rng)
        }
        GuardBehavior::RedundantStartup { entries } => {
            Ok(redundant_startup_step(&guard.id, entries, obs.view))
        }
        GuardBehavior::AdversaryTerminator { blocklist } => {
            Ok(adversary_terminator_step(&guard.id, blocklist, obs.view))
        }
        GuardBehavior::AttributeLocker { targets } => {
            Ok(locker_step(&guard.id, targets, obs.view))
        }
        GuardBehavior::Hider { targets } => Ok(hider_step(&guard.id, targets, obs.view)),
        GuardBehavior::SupportToolDisabler { tools } => {
            Ok(support_tool_disabler_step(&guard.id, tools, obs.view))
        }
    }
}
