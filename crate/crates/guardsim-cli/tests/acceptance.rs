//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Run with `cargo test -p guardsim-cli --test acceptance -- --nocapture`.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use guardsim_core::attack::{AttackScript, AttackVector, ProcessMatcher, RegistryAttack};
use guardsim_core::engine::{
    replay, replay_until, run_scenario, AttackerRun, ProtectedAttribute, ScenarioSpec,
};
use guardsim_core::gen::{random_scenario, GeneratorOptions};
use guardsim_core::guard::{GuardBehavior, GuardStrategy, StartupTemplate, Trigger};
use guardsim_core::host::{
    build_host, Actor, AttrRef, AttributeValue, FileSpec, HostSpec, MutationKind,
    MutationOutcome, ProcessSpec, RegistryKeySpec, Scalar, ServiceSpec, StartupSpec, ToolSpec,
};
use guardsim_core::log::{LogOutcome, Phase};
use guardsim_core::report::{assess_risk, control_state, RiskLevel};
use guardsim_core::rules::Rulebook;
use guardsim_core::scenario::parse_scenario;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load_scenario(name: &str) -> guardsim_core::ScenarioFile {
    let path = scenario_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    parse_scenario(&text).unwrap_or_else(|e| panic!("parse {name}: {e}"))
}

fn criterion(number: u32, name: &str, run: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(run) {
        Ok(()) => println!("[PASS] criterion {number}: {name}"),
        Err(payload) => {
            println!("[FAIL] criterion {number}: {name}");
            std::panic::resume_unwind(payload);
        }
    }
}

#[test]
fn criterion_1_experiment1_reproduction() {
    criterion(1, "experiment 1: firewall disabled by CAPEC-56 and restored", || {
        let start = Instant::now();
        let spec = load_scenario("experiment1.json").compile().unwrap();
        let report = run_scenario(&spec).unwrap();

        assert!(report.pretest["service:firewall"], "pre-test must pass");

        let firewall = AttrRef::Service("firewall".into());
        let after_attack = replay_until(&report.log, &spec.host, 3).unwrap();
        assert_eq!(
            after_attack.query_attribute(&firewall).unwrap(),
            AttributeValue::ServiceRunning(false),
            "firewall must read stopped immediately after the attack tick"
        );
        let after_restore = replay_until(&report.log, &spec.host, 4).unwrap();
        assert_eq!(
            after_restore.query_attribute(&firewall).unwrap(),
            AttributeValue::ServiceRunning(true),
            "firewall must be running again by tick 4"
        );
        assert!(report.posttest["service:firewall"], "post-test must pass");
        assert_eq!(
            report.restoration_latencies["service:firewall"],
            vec![(3, 4)]
        );
        assert!(
            start.elapsed() < Duration::from_secs(1),
            "experiment 1 must finish in under a second"
        );
    });
}

#[test]
fn criterion_2_experiment2_reproduction() {
    criterion(2, "experiment 2: registry flag flipped and deleted, sentinel restores", || {
        let start = Instant::now();
        let file = load_scenario("experiment2.json");
        let spec = file.compile().unwrap();

        let GuardBehavior::RegistrySentinel {
            poll_period,
            iterations,
            ..
        } = &spec.guards[0].behavior
        else {
            panic!("experiment 2 must configure a registry sentinel");
        };
        assert_eq!(*poll_period, 2, "poll period models the two-second pause");
        assert_eq!(*iterations, Some(5), "iteration budget is five polls");

        let report = run_scenario(&spec).unwrap();
        let label = "registry:hklm/software/acme/realtime-protection";
        assert!(report.pretest[label]);
        assert!(report.posttest[label], "flag must read true at post-test");

        let episodes = &report.restoration_latencies[label];
        assert_eq!(episodes.len(), 2, "one restoration per attack variant");
        assert_eq!(episodes[0].0, 3, "value flip lands at tick 3");
        assert_eq!(episodes[1].0, 6, "key deletion lands at tick 6");
        for (broke, restored) in episodes {
            assert!(
                restored - broke <= *poll_period,
                "restoration within the poll period: broke {broke}, restored {restored}"
            );
        }

        // The deletion variant recreates the key before setting it.
        let recreate = report.log.entries.iter().any(|e| {
            matches!(
                e.mutation().map(|m| &m.kind),
                Some(MutationKind::CreateRegistryKey { .. })
            ) && e.outcome == LogOutcome::Applied
        });
        assert!(recreate, "sentinel must recreate the deleted key");
        assert!(start.elapsed() < Duration::from_secs(1));
    });
}

#[test]
fn criterion_3_experiment3_reproduction() {
    criterion(3, "experiment 3: exact-name kill defeated by name randomization", || {
        let binary = env!("CARGO_BIN_EXE_guardsim");

        // Phase 1: without the randomizer the kill lands (exit 1).
        let unguarded = Command::new(binary)
            .arg("run")
            .arg(scenario_dir().join("experiment3-noguard.json"))
            .output()
            .unwrap();
        assert_eq!(
            unguarded.status.code(),
            Some(1),
            "unguarded phase must exit 1 (guard defeat)"
        );

        // Phase 2: randomizer triggered before the attack (exit 0).
        let guarded = Command::new(binary)
            .arg("run")
            .arg(scenario_dir().join("experiment3.json"))
            .output()
            .unwrap();
        assert_eq!(
            guarded.status.code(),
            Some(0),
            "guarded phase must exit 0: {}",
            String::from_utf8_lossy(&guarded.stderr)
        );

        let spec = load_scenario("experiment3.json").compile().unwrap();
        let report = run_scenario(&spec).unwrap();
        // The attack missed: no malware kill was ever emitted, let alone
        // applied.
        let malware_kills = report
            .log
            .entries
            .iter()
            .filter(|e| {
                e.phase == Phase::AttackPhase
                    && matches!(
                        e.mutation().map(|m| &m.kind),
                        Some(MutationKind::KillProcess { .. })
                    )
            })
            .count();
        assert_eq!(malware_kills, 0, "randomized process must not be found");

        // Exactly one live descendant at post-test.
        let final_state = replay(&report.log, &spec.host).unwrap();
        let root = final_state.pid_by_name("guardapp").err().map(|_| ()).map_or_else(
            || final_state.processes.values().find(|p| p.name == "guardapp").unwrap().pid,
            |_| guardsim_core::host::ProcessId(1),
        );
        let alive = final_state
            .processes
            .values()
            .filter(|p| p.lineage_root == root && p.alive)
            .count();
        assert_eq!(alive, 1, "exactly one descendant guard process survives");
        assert!(report.posttest["process-lineage:guardapp"]);
    });
}

fn restoration_host() -> HostSpec {
    HostSpec {
        services: vec![ServiceSpec {
            id: "svc".into(),
            running: true,
            locked: false,
            desired_running: Some(true),
        }],
        registry: vec![RegistryKeySpec {
            path: "hklm/acme/flag".into(),
            value: Scalar::Bool(true),
            locked: false,
            desired: None,
        }],
        files: vec![FileSpec {
            path: "c/apps/app".into(),
            content: "v1".into(),
            hidden: false,
            locked: false,
        }],
        startup: (0..3)
            .map(|i| StartupSpec {
                id: format!("boot{i}"),
                target: "c/apps/app".into(),
                locked: false,
            })
            .collect(),
        ..Default::default()
    }
}

/// Run one restoration sweep case and assert the bound: the attribute is
/// back in the desired state at every tick >= attack + poll_period + 1.
fn assert_restoration_bound(
    guard: GuardStrategy,
    poll_period: u64,
    attack: AttackVector,
    attack_tick: u64,
    protected: ProtectedAttribute,
) {
    let run_length = attack_tick + poll_period + 6;
    let spec = ScenarioSpec {
        host: restoration_host(),
        attackers: vec![AttackerRun {
            name: "attacker".into(),
            process: None,
            script: AttackScript::new(vec![(attack_tick, attack)], None),
        }],
        guards: vec![guard],
        rulebook: Rulebook::default(),
        protected: vec![protected.clone()],
        run_length,
        seed: 5,
        control_threshold: 0.5,
    };
    let report = run_scenario(&spec).unwrap();
    for tick in (attack_tick + poll_period + 1)..run_length {
        let state = replay_until(&report.log, &spec.host, tick).unwrap();
        let value = state.query_attribute(&protected.attr).unwrap();
        assert_eq!(
            value, protected.desired,
            "attribute {} not restored by tick {tick} (attack {attack_tick}, period {poll_period})",
            protected.label
        );
    }
    assert!(report.posttest[&protected.label]);
}

#[test]
fn criterion_4_restoration_latency_sweep() {
    criterion(4, "restoration bound holds across guards, attack ticks, and phases", || {
        let start = Instant::now();

        for attack_tick in 0..=20 {
            assert_restoration_bound(
                GuardStrategy {
                    id: "restorer".into(),
                    behavior: GuardBehavior::ServiceRestorer {
                        service: "svc".into(),
                    },
                    trigger: Trigger::Manual(0),
                    initially_active: true,
                    deactivate_at: None,
                },
                1,
                AttackVector::DisableGuardLogic {
                    service: "svc".into(),
                },
                attack_tick,
                ProtectedAttribute {
                    label: "service:svc".into(),
                    attr: AttrRef::Service("svc".into()),
                    desired: AttributeValue::ServiceRunning(true),
                },
            );
        }

        for poll_period in 1..=3u64 {
            for phase_offset in 0..poll_period {
                for attack_tick in 0..=20 {
                    for delete in [false, true] {
                        let action = if delete {
                            RegistryAttack::DeleteKey
                        } else {
                            RegistryAttack::SetValue(Scalar::Bool(false))
                        };
                        assert_restoration_bound(
                            GuardStrategy {
                                id: "sentinel".into(),
                                behavior: GuardBehavior::RegistrySentinel {
                                    key: "hklm/acme/flag".into(),
                                    desired: Scalar::Bool(true),
                                    poll_period,
                                    iterations: None,
                                },
                                trigger: Trigger::Manual(phase_offset),
                                initially_active: true,
                                deactivate_at: None,
                            },
                            poll_period,
                            AttackVector::ManipulateRegistry {
                                key: "hklm/acme/flag".into(),
                                action,
                            },
                            attack_tick,
                            ProtectedAttribute {
                                label: "registry:hklm/acme/flag".into(),
                                attr: AttrRef::Registry("hklm/acme/flag".into()),
                                desired: AttributeValue::RegistryValue(Some(Scalar::Bool(true))),
                            },
                        );
                    }
                }
            }
        }

        for attack_tick in 0..=20 {
            assert_restoration_bound(
                GuardStrategy {
                    id: "redundant".into(),
                    behavior: GuardBehavior::RedundantStartup {
                        entries: (0..3)
                            .map(|i| StartupTemplate {
                                entry: format!("boot{i}").as_str().into(),
                                target: "c/apps/app".into(),
                            })
                            .collect(),
                    },
                    trigger: Trigger::Manual(0),
                    initially_active: true,
                    deactivate_at: None,
                },
                1,
                AttackVector::RemoveStartupEntry {
                    entry: "boot1".into(),
                },
                attack_tick,
                ProtectedAttribute {
                    label: "startup:boot1".into(),
                    attr: AttrRef::Startup("boot1".into()),
                    desired: AttributeValue::StartupPresent(true),
                },
            );
        }

        assert!(
            start.elapsed() < Duration::from_secs(30),
            "sweep must finish in under thirty seconds"
        );
    });
}

#[test]
fn criterion_5_determinism_and_replay() {
    criterion(5, "100 random scenarios: byte-identical reports, exact replays", || {
        let opts = GeneratorOptions::default();
        for seed in 0..100u64 {
            let spec = random_scenario(seed, &opts);
            let first = run_scenario(&spec).unwrap();
            let second = run_scenario(&spec).unwrap();
            let bytes_a = serde_json::to_vec(&first).unwrap();
            let bytes_b = serde_json::to_vec(&second).unwrap();
            assert_eq!(bytes_a, bytes_b, "seed {seed}: reports差 must be byte-identical");
            let replayed = replay(&first.log, &spec.host)
                .unwrap_or_else(|e| panic!("seed {seed}: replay failed: {e}"));
            assert_eq!(
                replayed.digest(),
                first.final_state_digest,
                "seed {seed}: replay must reproduce the final state"
            );
        }
    });
}

#[test]
fn criterion_6_lock_and_visibility_soundness() {
    criterion(6, "locks stop malware writes; hidden targets are unreachable", || {
        use guardsim_core::attack::execute_vector;

        // (vector, lockable, hideable) for every destructive vector kind.
        struct Case {
            vector: AttackVector,
            hideable: bool,
        }
        let cases = |locked: bool, hidden: bool| -> (HostSpec, Vec<Case>) {
            let host = HostSpec {
                services: vec![ServiceSpec {
                    id: "svc".into(),
                    running: true,
                    locked,
                    desired_running: Some(true),
                }],
                registry: vec![RegistryKeySpec {
                    path: "hklm/k".into(),
                    value: Scalar::Bool(true),
                    locked,
                    desired: None,
                }],
                processes: vec![ProcessSpec {
                    name: "proc".into(),
                    image: Some("c/f".into()),
                    hidden,
                    locked,
                    owner: Actor::Organization,
                }],
                files: vec![FileSpec {
                    path: "c/f".into(),
                    content: "v".into(),
                    hidden,
                    locked,
                }],
                startup: vec![StartupSpec {
                    id: "boot".into(),
                    target: "c/f".into(),
                    locked,
                }],
                tools: vec![ToolSpec {
                    id: "tool".into(),
                    enabled: true,
                }],
            };
            let cases = vec![
                Case {
                    vector: AttackVector::DisableGuardLogic {
                        service: "svc".into(),
                    },
                    hideable: false,
                },
                Case {
                    vector: AttackVector::ManipulateRegistry {
                        key: "hklm/k".into(),
                        action: RegistryAttack::SetValue(Scalar::Bool(false)),
                    },
                    hideable: false,
                },
                Case {
                    vector: AttackVector::ManipulateRegistry {
                        key: "hklm/k".into(),
                        action: RegistryAttack::DeleteKey,
                    },
                    hideable: false,
                },
                Case {
                    vector: AttackVector::TerminateExecutable {
                        matcher: ProcessMatcher::ByExactName("proc".into()),
                    },
                    hideable: true,
                },
                Case {
                    vector: AttackVector::RemoveStartupEntry {
                        entry: "boot".into(),
                    },
                    hideable: false,
                },
                Case {
                    vector: AttackVector::DeleteFile { path: "c/f".into() },
                    hideable: true,
                },
            ];
            (host, cases)
        };

        let mut violations = 0usize;
        for locked in [false, true] {
            for hidden in [false, true] {
                let (host_spec, case_list) = cases(locked, hidden);
                for case in case_list {
                    let mut host = build_host(&host_spec).unwrap();
                    let view = host.visible_view(Actor::Malware);
                    let mutations = execute_vector(&case.vector, &view);
                    if hidden && case.hideable {
                        if !mutations.is_empty() {
                            violations += 1;
                        }
                        continue;
                    }
                    for m in &mutations {
                        let outcome = host.apply_mutation(m).unwrap();
                        if locked && outcome == MutationOutcome::Applied {
                            violations += 1;
                        }
                        if !locked && matches!(outcome, MutationOutcome::Blocked { .. }) {
                            violations += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(violations, 0, "lock/visibility enumeration found violations");
    });
}

#[test]
fn criterion_7_residual_risk_demonstration() {
    criterion(7, "post-randomization: name match misses, directory match still kills", || {
        let spec = load_scenario("residual-risk.json").compile().unwrap();
        let report = run_scenario(&spec).unwrap();

        let kills_at = |tick: u64| {
            report
                .log
                .entries
                .iter()
                .filter(|e| {
                    e.tick == tick
                        && e.phase == Phase::AttackPhase
                        && matches!(
                            e.mutation().map(|m| &m.kind),
                            Some(MutationKind::KillProcess { .. })
                        )
                })
                .count()
        };
        assert_eq!(kills_at(3), 0, "exact-name attack at tick 3 must miss");
        assert!(kills_at(5) >= 1, "image-path attack at tick 5 must land");

        let lineage = AttrRef::ProcessLineage(guardsim_core::host::ProcessId(1));
        let mid = replay_until(&report.log, &spec.host, 4).unwrap();
        assert_eq!(
            mid.query_attribute(&lineage).unwrap(),
            AttributeValue::LineageAlive(true),
            "lineage survives the name-based attack"
        );
        let end = replay(&report.log, &spec.host).unwrap();
        assert_eq!(
            end.query_attribute(&lineage).unwrap(),
            AttributeValue::LineageAlive(false),
            "lineage falls to the directory-based attack"
        );
        assert!(!report.posttest["process-lineage:guardapp"]);
    });
}

#[test]
fn criterion_8_risk_table_fidelity() {
    criterion(8, "risk assessment carries the exact control-risk narratives", || {
        let org = assess_risk(&control_state(1.0, 0.5));
        assert_eq!(
            org.confidentiality.narrative,
            "Reduces data leakage Protects confidentiality"
        );
        assert_eq!(
            org.integrity.narrative,
            "Improves security posture Improves reliability of IT assets"
        );
        assert_eq!(
            org.availability.narrative,
            "Improves resiliency Enhances business continuity"
        );
        assert!(
            [&org.confidentiality, &org.integrity, &org.availability]
                .iter()
                .all(|e| e.level == RiskLevel::Reduced)
        );

        let malware = assess_risk(&control_state(0.0, 0.5));
        assert_eq!(
            malware.confidentiality.narrative,
            "Increases data leakage Losses confidentiality"
        );
        assert_eq!(
            malware.integrity.narrative,
            "Degrades security posture Degrades reliability of IT assets"
        );
        assert_eq!(
            malware.availability.narrative,
            "Degrades resiliency Affects business continuity"
        );
        assert!(
            [&malware.confidentiality, &malware.integrity, &malware.availability]
                .iter()
                .all(|e| e.level == RiskLevel::Elevated)
        );

        // Sanity: the catalog is total over the two-element domain.
        let holders: BTreeSet<String> = [org, malware]
            .iter()
            .map(|r| r.confidentiality.narrative.clone())
            .collect();
        assert_eq!(holders.len(), 2);
    });
}
