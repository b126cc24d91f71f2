//! Seeded scenario generator over the vector and guard catalogs.
//!
//! Produces structurally valid scenarios for determinism, soundness, and
//! replay sweeps: same seed, same scenario. Generated documents go through
//! the regular scenario compiler, so the sweep also exercises parsing and
//! resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::ScenarioSpec;
use crate::scenario::{
    AttackerSpec, BehaviorSpec, ConditionSpec, GuardSpec, ProtectedSpec, RuleSpec, RunSpec,
    ScenarioFile, StartupTemplateSpec, StepSpec, VectorSpec,
};
use crate::attack::ProcessMatcher;
use crate::guard::Trigger;
use crate::host::{
    FileSpec, HostSpec, ProcessSpec, RegistryKeySpec, Scalar, ServiceSpec, StartupSpec, ToolSpec,
};

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOptions {
    /// Emit attacker scripts; disable for quiescence sweeps.
    pub attacks: bool,
    /// Preset posture-guard targets (locked/hidden/disabled) so posture
    /// guards start satisfied.
    pub align_postures: bool,
    /// Allow the process randomizer, which acts even without an attack.
    pub include_randomizer: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            attacks: true,
            align_postures: false,
            include_randomizer: true,
        }
    }
}

/// Generate the scenario document for `seed`.
pub fn random_scenario_file(seed: u64, opts: &GeneratorOptions) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let file_count = rng.gen_range(2..=4usize);
    let mut files: Vec<FileSpec> = (0..file_count)
        .map(|i| FileSpec {
            path: format!("c/apps/app{i}"),
            content: format!("v{i}"),
            hidden: rng.gen_bool(0.2),
            locked: rng.gen_bool(0.2),
        })
        .collect();

    let org_count = rng.gen_range(1..=3usize);
    let mut processes: Vec<ProcessSpec> = (0..org_count)
        .map(|i| ProcessSpec {
            name: format!("orgproc{i}"),
            image: Some(files[i % files.len()].path.clone()),
            hidden: rng.gen_bool(0.2),
            locked: rng.gen_bool(0.2),
            owner: crate::host::Actor::Organization,
        })
        .collect();
    // Aligned hosts leave nothing for a terminator to do.
    let malware_count = if opts.align_postures {
        0
    } else {
        rng.gen_range(0..=2usize)
    };
    for i in 0..malware_count {
        processes.push(ProcessSpec {
            name: format!("malproc{i}"),
            image: None,
            hidden: rng.gen_bool(0.2),
            locked: false,
            owner: crate::host::Actor::Malware,
        });
    }

    let mut services: Vec<ServiceSpec> = (0..rng.gen_range(1..=3usize))
        .map(|i| ServiceSpec {
            id: format!("svc{i}"),
            running: true,
            locked: rng.gen_bool(0.2),
            desired_running: Some(true),
        })
        .collect();

    let registry: Vec<RegistryKeySpec> = (0..rng.gen_range(1..=3usize))
        .map(|i| RegistryKeySpec {
            path: format!("hklm/acme/key{i}"),
            value: Scalar::Bool(true),
            locked: rng.gen_bool(0.2),
            desired: None,
        })
        .collect();

    let startup: Vec<StartupSpec> = (0..rng.gen_range(0..=2usize))
        .map(|i| StartupSpec {
            id: format!("boot{i}"),
            target: files[i % files.len()].path.clone(),
            locked: rng.gen_bool(0.2),
        })
        .collect();

    let mut tools: Vec<ToolSpec> = (0..rng.gen_range(0..=2usize))
        .map(|i| ToolSpec {
            id: format!("tool{i}"),
            enabled: true,
        })
        .collect();

    let run_length = rng.gen_range(8..=14u64);

    let mut guards = Vec::new();
    let mut guard_kinds: Vec<u8> = (0..8).collect();
    shuffle(&mut guard_kinds, &mut rng);
    let guard_count = rng.gen_range(0..=3usize);
    for kind in guard_kinds.into_iter().take(guard_count) {
        let trigger = if rng.gen_bool(0.5) {
            Trigger::Preemptive
        } else {
            Trigger::Manual(rng.gen_range(0..=2))
        };
        let id = format!("guard-{}", guards.len());
        let behavior = match kind {
            0 => BehaviorSpec::ServiceRestorer {
                service: services[rng.gen_range(0..services.len())].id.clone(),
            },
            1 => BehaviorSpec::RegistrySentinel {
                key: registry[rng.gen_range(0..registry.len())].path.clone(),
                desired: Scalar::Bool(true),
                poll_period: rng.gen_range(1..=3),
                iterations: if rng.gen_bool(0.8) {
                    None
                } else {
                    Some(rng.gen_range(3..=8))
                },
            },
            2 => {
                if !opts.include_randomizer {
                    continue;
                }
                BehaviorSpec::ProcessRandomizer {
                    process: processes[rng.gen_range(0..org_count)].name.clone(),
                }
            }
            3 => {
                if startup.is_empty() {
                    continue;
                }
                BehaviorSpec::RedundantStartup {
                    entries: startup
                        .iter()
                        .map(|s| StartupTemplateSpec {
                            id: s.id.clone(),
                            target: s.target.clone(),
                        })
                        .collect(),
                }
            }
            4 => {
                if malware_count == 0 {
                    continue;
                }
                BehaviorSpec::AdversaryTerminator {
                    blocklist: vec![ProcessMatcher::ByNamePrefix("malproc".into())],
                }
            }
            5 => {
                let target = rng.gen_range(0..services.len());
                if opts.align_postures {
                    services[target].locked = true;
                }
                BehaviorSpec::AttributeLocker {
                    targets: vec![format!("service:{}", services[target].id)],
                }
            }
            6 => {
                let index = rng.gen_range(0..files.len());
                if opts.align_postures {
                    files[index].hidden = true;
                }
                BehaviorSpec::Hider {
                    targets: vec![format!("file:{}", files[index].path)],
                }
            }
            _ => {
                if tools.is_empty() {
                    continue;
                }
                if opts.align_postures {
                    for tool in &mut tools {
                        tool.enabled = false;
                    }
                }
                BehaviorSpec::SupportToolDisabler {
                    tools: tools.iter().map(|t| t.id.clone()).collect(),
                }
            }
        };
        guards.push(GuardSpec {
            id,
            trigger,
            initially_active: None,
            deactivate_at: None,
            kind: behavior,
        });
    }

    let mut attackers = Vec::new();
    if opts.attacks {
        for a in 0..rng.gen_range(1..=2usize) {
            let steps = (0..rng.gen_range(1..=3usize))
                .map(|_| {
                    let tick = rng.gen_range(0..run_length.saturating_sub(2).max(1));
                    let vector = match rng.gen_range(0..6u8) {
                        0 => VectorSpec::DisableGuardLogic {
                            service: services[rng.gen_range(0..services.len())].id.clone(),
                        },
                        1 => {
                            let key = registry[rng.gen_range(0..registry.len())].path.clone();
                            if rng.gen_bool(0.5) {
                                VectorSpec::ManipulateRegistry {
                                    key,
                                    value: Some(Scalar::Bool(false)),
                                    delete: false,
                                }
                            } else {
                                VectorSpec::ManipulateRegistry {
                                    key,
                                    value: None,
                                    delete: true,
                                }
                            }
                        }
                        2 => {
                            let matcher = match rng.gen_range(0..3u8) {
                                0 => ProcessMatcher::ByExactName(
                                    processes[rng.gen_range(0..org_count)].name.clone(),
                                ),
                                1 => ProcessMatcher::ByNamePrefix("orgproc".into()),
                                _ => ProcessMatcher::ByImagePath("c/apps".into()),
                            };
                            VectorSpec::TerminateExecutable { matcher }
                        }
                        3 if !tools.is_empty() => VectorSpec::DisableSupportTool {
                            tool: tools[rng.gen_range(0..tools.len())].id.clone(),
                        },
                        4 if !startup.is_empty() => VectorSpec::RemoveStartupEntry {
                            entry: startup[rng.gen_range(0..startup.len())].id.clone(),
                        },
                        _ => VectorSpec::DeleteFile {
                            path: files[rng.gen_range(0..files.len())].path.clone(),
                        },
                    };
                    StepSpec { tick, vector }
                })
                .collect();
            let process = if malware_count > 0 && rng.gen_bool(0.3) {
                Some(format!("malproc{}", rng.gen_range(0..malware_count)))
            } else {
                None
            };
            attackers.push(AttackerSpec {
                name: Some(format!("attacker-{a}")),
                process,
                repeat: if rng.gen_bool(0.2) {
                    Some(rng.gen_range(3..=5))
                } else {
                    None
                },
                steps,
            });
        }
    }

    let mut rules = Vec::new();
    if !guards.is_empty() && rng.gen_bool(0.3) {
        let target = &mut guards[0];
        target.initially_active = Some(false);
        rules.push(RuleSpec {
            id: "deploy-0".into(),
            priority: rng.gen_range(0..10),
            when: ConditionSpec {
                vectors: None,
                target: None,
                min_count: 1,
                window: rng.gen_range(1..=4),
            },
            activate: target.id.clone(),
            overrides: None,
        });
    }

    let mut protected = Vec::new();
    protected.push(ProtectedSpec {
        attr: format!("service:{}", services[0].id),
        desired: serde_json::Value::Bool(true),
    });
    if rng.gen_bool(0.7) {
        protected.push(ProtectedSpec {
            attr: format!("registry:{}", registry[0].path),
            desired: serde_json::Value::Bool(true),
        });
    }
    if rng.gen_bool(0.5) {
        protected.push(ProtectedSpec {
            attr: "process-lineage:orgproc0".into(),
            desired: serde_json::Value::Bool(true),
        });
    }
    if !startup.is_empty() && rng.gen_bool(0.5) {
        protected.push(ProtectedSpec {
            attr: format!("startup:{}", startup[0].id),
            desired: serde_json::Value::Bool(true),
        });
    }

    ScenarioFile {
        host: HostSpec {
            processes,
            services,
            registry,
            files,
            startup,
            tools,
        },
        attackers,
        guards,
        rules,
        protected,
        run: RunSpec {
            length: run_length,
            seed: rng.gen(),
            control_threshold: 0.5,
        },
    }
}

/// Generate and compile the scenario for `seed`.
pub fn random_scenario(seed: u64, opts: &GeneratorOptions) -> ScenarioSpec {
    random_scenario_file(seed, opts)
        .compile()
        .expect("generated scenarios are structurally valid")
}

fn shuffle(values: &mut [u8], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.gen_range(0..=i);
        values.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let opts = GeneratorOptions::default();
        for seed in 0..20 {
            let a = random_scenario_file(seed, &opts);
            let b = random_scenario_file(seed, &opts);
            assert_eq!(a, b, "seed {seed}");
            a.compile().expect("generated scenario compiles");
        }
    }

    #[test]
    fn quiet_generation_has_no_attackers() {
        let opts = GeneratorOptions {
            attacks: false,
            align_postures: true,
            include_randomizer: false,
        };
        for seed in 0..20 {
            let file = random_scenario_file(seed, &opts);
            assert!(file.attackers.is_empty());
            file.compile().expect("generated scenario compiles");
        }
    }
}
