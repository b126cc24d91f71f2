//! CAPEC-mapped attack vectors and the scripted attacker that schedules them.
//!
//! Vectors are pure functions over the malware-visible host projection:
//! a vector whose target is absent from the view emits nothing (the attack
//! misses), it never errors. That miss behavior is what obfuscation guards
//! exploit.

use serde::{Deserialize, Serialize};

use crate::host::{
    Actor, EntryId, FilePath, HostView, KeyPath, Mutation, MutationKind, MutationSource, Scalar,
    ServiceId, ToolId, ToolStatus,
};

pub const VECTOR_DISABLE_GUARD_LOGIC: &str = "capec-56-disable-guard-logic";
pub const VECTOR_MANIPULATE_REGISTRY: &str = "capec-203-manipulate-registry";
pub const VECTOR_TERMINATE_EXECUTABLE: &str = "capec-17-terminate-executable";
pub const VECTOR_DISABLE_SUPPORT_TOOL: &str = "disable-support-tool";
pub const VECTOR_REMOVE_STARTUP_ENTRY: &str = "remove-startup-entry";
pub const VECTOR_DELETE_FILE: &str = "delete-file";

/// Catalog entry for `list-attacks`: (vector id, CAPEC tag, summary).
pub const VECTOR_CATALOG: [(&str, &str, &str); 6] = [
    (
        VECTOR_DISABLE_GUARD_LOGIC,
        "CAPEC-56",
        "stop a protective service (short-circuit guard logic)",
    ),
    (
        VECTOR_MANIPULATE_REGISTRY,
        "CAPEC-203",
        "overwrite or delete an application registry value",
    ),
    (
        VECTOR_TERMINATE_EXECUTABLE,
        "CAPEC-17",
        "kill every visible process matching a pattern",
    ),
    (
        VECTOR_DISABLE_SUPPORT_TOOL,
        "-",
        "disable a support tool the defender relies on",
    ),
    (
        VECTOR_REMOVE_STARTUP_ENTRY,
        "-",
        "remove a persistence/startup entry",
    ),
    (VECTOR_DELETE_FILE, "-", "delete a visible file"),
];

/// How a terminate vector decides that a process is its target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessMatcher {
    ByExactName(String),
    ByNamePrefix(String),
    /// Matches the exact image path, or any image inside the given
    /// directory. This is the residual risk left open by name
    /// randomization: the copy lands in the same directory.
    ByImagePath(String),
}

impl ProcessMatcher {
    pub fn pattern(&self) -> &str {
        match self {
            ProcessMatcher::ByExactName(p)
            | ProcessMatcher::ByNamePrefix(p)
            | ProcessMatcher::ByImagePath(p) => p,
        }
    }

    pub fn matches(&self, name: &str, image_path: Option<&FilePath>) -> bool {
        match self {
            ProcessMatcher::ByExactName(pattern) => name == pattern,
            ProcessMatcher::ByNamePrefix(pattern) => name.starts_with(pattern.as_str()),
            ProcessMatcher::ByImagePath(pattern) => image_path.is_some_and(|path| {
                path.as_str() == pattern || path.as_str().starts_with(&format!("{pattern}/"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegistryAttack {
    SetValue(Scalar),
    DeleteKey,
}

/// One offensive action, parameterized. Ids follow [`VECTOR_CATALOG`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackVector {
    DisableGuardLogic { service: ServiceId },
    ManipulateRegistry { key: KeyPath, action: RegistryAttack },
    TerminateExecutable { matcher: ProcessMatcher },
    DisableSupportTool { tool: ToolId },
    RemoveStartupEntry { entry: EntryId },
    DeleteFile { path: FilePath },
}

impl AttackVector {
    pub fn vector_id(&self) -> &'static str {
        match self {
            AttackVector::DisableGuardLogic { .. } => VECTOR_DISABLE_GUARD_LOGIC,
            AttackVector::ManipulateRegistry { .. } => VECTOR_MANIPULATE_REGISTRY,
            AttackVector::TerminateExecutable { .. } => VECTOR_TERMINATE_EXECUTABLE,
            AttackVector::DisableSupportTool { .. } => VECTOR_DISABLE_SUPPORT_TOOL,
            AttackVector::RemoveStartupEntry { .. } => VECTOR_REMOVE_STARTUP_ENTRY,
            AttackVector::DeleteFile { .. } => VECTOR_DELETE_FILE,
        }
    }
}

/// Seeded, tick-scheduled attack sequence. Stands in for the offensive tool
/// driving the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScript {
    pub steps: Vec<(u64, AttackVector)>,
    /// Cyclic re-execution period: a step at tick `t` also fires at
    /// `t + repeat`, `t + 2*repeat`, ...
    pub repeat: Option<u64>,
}

impl AttackScript {
    pub fn new(mut steps: Vec<(u64, AttackVector)>, repeat: Option<u64>) -> Self {
        steps.sort_by_key(|(tick, _)| *tick);
        Self { steps, repeat }
    }

    fn fires_at(&self, step_tick: u64, tick: u64) -> bool {
        if tick == step_tick {
            return true;
        }
        match self.repeat {
            Some(period) if period > 0 && tick > step_tick => {
                (tick - step_tick) % period == 0
            }
            _ => false,
        }
    }
}

/// Expand one vector against the malware-visible view into mutations.
pub fn execute_vector(vector: &AttackVector, view: &HostView) -> Vec<Mutation> {
    let attack = |kind: MutationKind| Mutation {
        kind,
        actor: Actor::Malware,
        source: MutationSource::Attack(vector.vector_id().to_string()),
    };

    match vector {
        AttackVector::DisableGuardLogic { service } => {
            if view.services.contains_key(service) {
                vec![attack(MutationKind::SetServiceRunning {
                    service: service.clone(),
                    running: false,
                })]
            } else {
                vec![]
            }
        }
        AttackVector::ManipulateRegistry { key, action } => {
            // Deleted keys are absent from the malware view: nothing to hit.
            if !view.registry.contains_key(key) {
                return vec![];
            }
            match action {
                RegistryAttack::SetValue(value) => vec![attack(MutationKind::SetRegistryValue {
                    key: key.clone(),
                    value: value.clone(),
                })],
                RegistryAttack::DeleteKey => {
                    vec![attack(MutationKind::DeleteRegistryKey { key: key.clone() })]
                }
            }
        }
        AttackVector::TerminateExecutable { matcher } => view
            .processes
            .values()
            .filter(|p| p.alive && matcher.matches(&p.name, p.image_path.as_ref()))
            .map(|p| attack(MutationKind::KillProcess { pid: p.pid }))
            .collect(),
        AttackVector::DisableSupportTool { tool } => {
            if view.support_tools.contains_key(tool) {
                vec![attack(MutationKind::SetToolStatus {
                    tool: tool.clone(),
                    status: ToolStatus::Disabled,
                })]
            } else {
                vec![]
            }
        }
        AttackVector::RemoveStartupEntry { entry } => {
            if view.startup_entries.contains_key(entry) {
                vec![attack(MutationKind::RemoveStartupEntry {
                    entry: entry.clone(),
                })]
            } else {
                vec![]
            }
        }
        AttackVector::DeleteFile { path } => {
            if view.files.contains_key(path) {
                vec![attack(MutationKind::DeleteFile { path: path.clone() })]
            } else {
                vec![]
            }
        }
    }
}

/// All mutations the script emits at `tick`, in step order.
pub fn attacker_step(script: &AttackScript, tick: u64, view: &HostView) -> Vec<Mutation> {
    script
        .steps
        .iter()
        .filter(|(step_tick, _)| script.fires_at(*step_tick, tick))
        .flat_map(|(_, vector)| execute_vector(vector, view))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::{build_host, FileSpec, HostSpec, ProcessSpec, ServiceSpec};

    fn view_with_firewall() -> HostView {
        let spec = HostSpec {
            services: vec![ServiceSpec {
                id: "firewall".into(),
                running: true,
                locked: false,
                desired_running: None,
            }],
            ..Default::default()
        };
        build_host(&spec).unwrap().visible_view(Actor::Malware)
    }

    fn view_with_process(name: &str) -> HostView {
        let spec = HostSpec {
            processes: vec![ProcessSpec {
                name: name.into(),
                image: Some(format!("c/apps/{name}")),
                hidden: false,
                locked: false,
                owner: Actor::Organization,
            }],
            files: vec![FileSpec {
                path: format!("c/apps/{name}"),
                content: "v1".into(),
                hidden: false,
                locked: false,
            }],
            ..Default::default()
        };
        build_host(&spec).unwrap().visible_view(Actor::Malware)
    }

    #[test]
    fn capec56_disables_running_firewall() {
        let vector = AttackVector::DisableGuardLogic {
            service: "firewall".into(),
        };
        let muts = execute_vector(&vector, &view_with_firewall());
        assert_eq!(muts.len(), 1);
        assert_eq!(
            muts[0].kind,
            MutationKind::SetServiceRunning {
                service: "firewall".into(),
                running: false,
            }
        );
        assert_eq!(muts[0].actor, Actor::Malware);
        assert_eq!(
            muts[0].source,
            MutationSource::Attack(VECTOR_DISABLE_GUARD_LOGIC.into())
        );
    }

    #[test]
    fn exact_name_kill_misses_renamed_process() {
        // The guard renamed itself; the stale name no longer matches.
        let vector = AttackVector::TerminateExecutable {
            matcher: ProcessMatcher::ByExactName("guardapp".into()),
        };
        let muts = execute_vector(&vector, &view_with_process("q3x8p1z6m2r4"));
        assert!(muts.is_empty());
    }

    #[test]
    fn registry_delete_misses_absent_key() {
        let vector = AttackVector::ManipulateRegistry {
            key: "hklm/acme/flag".into(),
            action: RegistryAttack::DeleteKey,
        };
        let muts = execute_vector(&vector, &view_with_firewall());
        assert!(muts.is_empty());
    }

    #[test]
    fn matcher_modes() {
        let image = FilePath::from("c/apps/guardapp");
        assert!(ProcessMatcher::ByExactName("guardapp".into()).matches("guardapp", None));
        assert!(!ProcessMatcher::ByExactName("guardapp".into()).matches("guardapp2", None));
        assert!(ProcessMatcher::ByNamePrefix("guard".into()).matches("guardapp", None));
        assert!(!ProcessMatcher::ByNamePrefix("guard".into()).matches("app", None));
        assert!(ProcessMatcher::ByImagePath("c/apps".into()).matches("anything", Some(&image)));
        assert!(
            ProcessMatcher::ByImagePath("c/apps/guardapp".into()).matches("x", Some(&image))
        );
        assert!(!ProcessMatcher::ByImagePath("c/app".into()).matches("x", Some(&image)));
        assert!(!ProcessMatcher::ByImagePath("c/apps".into()).matches("x", None));
    }

    #[test]
    fn scheduled_step_fires_only_on_its_tick() {
        let script = AttackScript::new(
            vec![(
                3,
                AttackVector::DisableGuardLogic {
                    service: "firewall".into(),
                },
            )],
            None,
        );
        let view = view_with_firewall();
        assert_eq!(attacker_step(&script, 3, &view).len(), 1);
        assert!(attacker_step(&script, 2, &view).is_empty());
        assert!(attacker_step(&script, 4, &view).is_empty());
    }

    #[test]
    fn repeat_period_expands_firing_set() {
        // Step at tick 1 with period 4 fires at 1, 5, 9, ...
        let script = AttackScript::new(
            vec![(
                1,
                AttackVector::DisableGuardLogic {
                    service: "firewall".into(),
                },
            )],
            Some(4),
        );
        let view = view_with_firewall();
        let fired: Vec<u64> = (0..=12)
            .filter(|t| !attacker_step(&script, *t, &view).is_empty())
            .collect();
        assert_eq!(fired, vec![1, 5, 9]);
    }

    #[test]
    fn attacker_step_is_deterministic() {
        let script = AttackScript::new(
            vec![(
                0,
                AttackVector::TerminateExecutable {
                    matcher: ProcessMatcher::ByNamePrefix("guard".into()),
                },
            )],
            None,
        );
        let view = view_with_process("guardapp");
        assert_eq!(
            attacker_step(&script, 0, &view),
            attacker_step(&script, 0, &view)
        );
    }

    #[test]
    fn all_emitted_mutations_are_malware_actor() {
        let view = view_with_process("guardapp");
        let vectors = [
            AttackVector::TerminateExecutable {
                matcher: ProcessMatcher::ByNamePrefix(String::from("guard")),
            },
            AttackVector::DeleteFile {
                path: "c/apps/guardapp".into(),
            },
        ];
        for vector in &vectors {
            for m in execute_vector(vector, &view) {
                assert_eq!(m.actor, Actor::Malware);
            }
        }
    }
}
