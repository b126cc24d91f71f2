//! Scenario file schema (strict JSON) and compilation into a resolved
//! [`ScenarioSpec`]. Unknown keys are rejected so misspelled guard
//! parameters cannot be silently ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackScript, AttackVector, ProcessMatcher, RegistryAttack, VECTOR_CATALOG};
use crate::engine::{AttackerRun, ProtectedAttribute, ScenarioSpec};
use crate::guard::{GuardBehavior, GuardStrategy, StartupTemplate, Trigger};
use crate::host::{
    build_host, AttrRef, AttributeValue, HostSpec, HostState, Scalar, SpecError, ToolStatus,
};
use crate::rules::{Condition, Rule, Rulebook};

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Malformed JSON or schema violation; message carries the offending
    /// key and location.
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Top-level scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub host: HostSpec,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub guards: Vec<GuardSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub protected: Vec<ProtectedSpec>,
    pub run: RunSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub length: u64,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub control_threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Host process embodying this attacker; killing it stops the script.
    #[serde(default)]
    pub process: Option<String>,
    #[serde(default)]
    pub repeat: Option<u64>,
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub tick: u64,
    pub vector: VectorSpec,
}

/// Attack vector declaration, keyed by catalog id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum VectorSpec {
    #[serde(rename = "capec-56-disable-guard-logic")]
    DisableGuardLogic { service: String },
    #[serde(rename = "capec-203-manipulate-registry")]
    ManipulateRegistry {
        key: String,
        #[serde(default)]
        value: Option<Scalar>,
        #[serde(default)]
        delete: bool,
    },
    #[serde(rename = "capec-17-terminate-executable")]
    TerminateExecutable { matcher: ProcessMatcher },
    DisableSupportTool { tool: String },
    RemoveStartupEntry { entry: String },
    DeleteFile { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardSpec {
    pub id: String,
    pub trigger: Trigger,
    /// Defaults true for preemptive/manual triggers, false for
    /// automatic-on-event; override to make any guard rule-activated.
    #[serde(default)]
    pub initially_active: Option<bool>,
    #[serde(default)]
    pub deactivate_at: Option<u64>,
    pub kind: BehaviorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum BehaviorSpec {
    ServiceRestorer {
        service: String,
    },
    RegistrySentinel {
        key: String,
        desired: Scalar,
        #[serde(default = "default_poll")]
        poll_period: u64,
        #[serde(default)]
        iterations: Option<u64>,
    },
    ProcessRandomizer {
        process: String,
    },
    RedundantStartup {
        entries: Vec<StartupTemplateSpec>,
    },
    AdversaryTerminator {
        blocklist: Vec<ProcessMatcher>,
    },
    AttributeLocker {
        targets: Vec<String>,
    },
    Hider {
        targets: Vec<String>,
    },
    SupportToolDisabler {
        tools: Vec<String>,
    },
}

fn default_poll() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartupTemplateSpec {
    pub id: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub id: String,
    #[serde(default)]
    pub priority: i64,
    pub when: ConditionSpec,
    pub activate: String,
    #[serde(default)]
    pub overrides: Option<BehaviorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default)]
    pub vectors: Option<Vec<String>>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default = "default_count")]
    pub min_count: usize,
    #[serde(default = "default_poll")]
    pub window: u64,
}

fn default_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedSpec {
    /// Reference string, e.g. `service:firewall`, `registry:hklm/x/flag`,
    /// `process-lineage:guardapp`, `startup:boot-1`, `tool:task-manager`.
    pub attr: String,
    pub desired: serde_json::Value,
}

/// Parse a scenario document from JSON text.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    Ok(serde_json::from_str(text)?)
}

fn invalid(what: impl Into<String>, detail: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        what: what.into(),
        detail: detail.into(),
    }
}

/// Parse an attribute reference string against the setup host. Process
/// references use display names and resolve to pids.
pub fn parse_attr_ref(text: &str, host: &HostState) -> Result<AttrRef, SpecError> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| invalid(format!("attribute reference {text}"), "expected kind:name"))?;
    if rest.is_empty() {
        return Err(invalid(format!("attribute reference {text}"), "empty name"));
    }
    match kind {
        "service" => Ok(AttrRef::Service(rest.into())),
        "registry" => Ok(AttrRef::Registry(rest.into())),
        "process" => Ok(AttrRef::Process(host.pid_by_name(rest)?)),
        "process-lineage" => Ok(AttrRef::ProcessLineage(host.pid_by_name(rest)?)),
        "file" => Ok(AttrRef::File(rest.into())),
        "startup" => Ok(AttrRef::Startup(rest.into())),
        "tool" => Ok(AttrRef::Tool(rest.into())),
        other => Err(invalid(
            format!("attribute reference {text}"),
            format!("unknown kind {other}"),
        )),
    }
}

fn parse_desired(attr: &AttrRef, value: &serde_json::Value, label: &str) -> Result<AttributeValue, SpecError> {
    let as_bool = || {
        value.as_bool().ok_or_else(|| {
            invalid(
                format!("protected attribute {label}"),
                "desired value must be a boolean",
            )
        })
    };
    match attr {
        AttrRef::Service(_) => Ok(AttributeValue::ServiceRunning(as_bool()?)),
        AttrRef::Process(_) => Ok(AttributeValue::ProcessAlive(as_bool()?)),
        AttrRef::ProcessLineage(_) => Ok(AttributeValue::LineageAlive(as_bool()?)),
        AttrRef::File(_) => Ok(AttributeValue::FilePresent(as_bool()?)),
        AttrRef::Startup(_) => Ok(AttributeValue::StartupPresent(as_bool()?)),
        AttrRef::Tool(_) => Ok(AttributeValue::Tool(if as_bool()? {
            ToolStatus::Enabled
        } else {
            ToolStatus::Disabled
        })),
        AttrRef::Registry(_) => {
            if value.is_null() {
                return Ok(AttributeValue::RegistryValue(None));
            }
            let scalar = serde_json::from_value::<Scalar>(value.clone()).map_err(|_| {
                invalid(
                    format!("protected attribute {label}"),
                    "desired value must be a scalar or null",
                )
            })?;
            Ok(AttributeValue::RegistryValue(Some(scalar)))
        }
    }
}

fn compile_vector(spec: &VectorSpec) -> Result<AttackVector, SpecError> {
    Ok(match spec {
        VectorSpec::DisableGuardLogic { service } => AttackVector::DisableGuardLogic {
            service: service.as_str().into(),
        },
        VectorSpec::ManipulateRegistry { key, value, delete } => {
            let action = match (value, delete) {
                (Some(v), false) => RegistryAttack::SetValue(v.clone()),
                (None, true) => RegistryAttack::DeleteKey,
                _ => {
                    return Err(invalid(
                        format!("registry attack on {key}"),
                        "exactly one of `value` or `delete` is required",
                    ))
                }
            };
            AttackVector::ManipulateRegistry {
                key: key.as_str().into(),
                action,
            }
        }
        VectorSpec::TerminateExecutable { matcher } => {
            if matcher.pattern().is_empty() {
                return Err(invalid("process matcher", "pattern must be non-empty"));
            }
            AttackVector::TerminateExecutable {
                matcher: matcher.clone(),
            }
        }
        VectorSpec::DisableSupportTool { tool } => AttackVector::DisableSupportTool {
            tool: tool.as_str().into(),
        },
        VectorSpec::RemoveStartupEntry { entry } => AttackVector::RemoveStartupEntry {
            entry: entry.as_str().into(),
        },
        VectorSpec::DeleteFile { path } => AttackVector::DeleteFile {
            path: path.as_str().into(),
        },
    })
}

fn compile_behavior(
    guard_id: &str,
    spec: &BehaviorSpec,
    host: &HostState,
) -> Result<GuardBehavior, SpecError> {
    let guard_ctx = |detail: String| invalid(format!("guard {guard_id}"), detail);
    Ok(match spec {
        BehaviorSpec::ServiceRestorer { service } => {
            if !host.services.contains_key(&service.as_str().into()) {
                return Err(guard_ctx(format!("service {service} not declared")));
            }
            GuardBehavior::ServiceRestorer {
                service: service.as_str().into(),
            }
        }
        BehaviorSpec::RegistrySentinel {
            key,
            desired,
            poll_period,
            iterations,
        } => {
            if *poll_period == 0 {
                return Err(guard_ctx("poll_period must be at least 1".into()));
            }
            GuardBehavior::RegistrySentinel {
                key: key.as_str().into(),
                desired: desired.clone(),
                poll_period: *poll_period,
                iterations: *iterations,
            }
        }
        BehaviorSpec::ProcessRandomizer { process } => GuardBehavior::ProcessRandomizer {
            process: host.pid_by_name(process)?,
        },
        BehaviorSpec::RedundantStartup { entries } => {
            if entries.is_empty() {
                return Err(guard_ctx("redundant-startup needs at least one entry".into()));
            }
            let templates = entries
                .iter()
                .map(|e| {
                    if !host.files.contains_key(&e.target.as_str().into()) {
                        return Err(guard_ctx(format!(
                            "startup template {} targets undeclared file {}",
                            e.id, e.target
                        )));
                    }
                    Ok(StartupTemplate {
                        entry: e.id.as_str().into(),
                        target: e.target.as_str().into(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            GuardBehavior::RedundantStartup { entries: templates }
        }
        BehaviorSpec::AdversaryTerminator { blocklist } => {
            if blocklist.iter().any(|m| m.pattern().is_empty()) {
                return Err(guard_ctx("blocklist patterns must be non-empty".into()));
            }
            GuardBehavior::AdversaryTerminator {
                blocklist: blocklist.clone(),
            }
        }
        BehaviorSpec::AttributeLocker { targets } => {
            let refs = resolve_posture_targets(guard_id, targets, host, Postured::Lockable)?;
            GuardBehavior::AttributeLocker { targets: refs }
        }
        BehaviorSpec::Hider { targets } => {
            let refs = resolve_posture_targets(guard_id, targets, host, Postured::Hideable)?;
            GuardBehavior::Hider { targets: refs }
        }
        BehaviorSpec::SupportToolDisabler { tools } => {
            for tool in tools {
                if !host.support_tools.contains_key(&tool.as_str().into()) {
                    return Err(guard_ctx(format!("tool {tool} not declared")));
                }
            }
            GuardBehavior::SupportToolDisabler {
                tools: tools.iter().map(|t| t.as_str().into()).collect(),
            }
        }
    })
}

enum Postured {
    Lockable,
    Hideable,
}

fn resolve_posture_targets(
    guard_id: &str,
    targets: &[String],
    host: &HostState,
    mode: Postured,
) -> Result<Vec<AttrRef>, SpecError> {
    targets
        .iter()
        .map(|t| {
            let attr = parse_attr_ref(t, host)?;
            let ok = match (&mode, &attr) {
                (Postured::Hideable, AttrRef::Process(_) | AttrRef::File(_)) => true,
                (Postured::Hideable, _) => false,
                (
                    Postured::Lockable,
                    AttrRef::Service(_)
                    | AttrRef::Registry(_)
                    | AttrRef::Process(_)
                    | AttrRef::File(_)
                    | AttrRef::Startup(_),
                ) => true,
                (Postured::Lockable, _) => false,
            };
            if !ok {
                return Err(invalid(
                    format!("guard {guard_id}"),
                    format!("target {t} does not support this posture"),
                ));
            }
            Ok(attr)
        })
        .collect()
}

impl ScenarioFile {
    /// Resolve names, validate references, and produce a runnable spec.
    pub fn compile(&self) -> Result<ScenarioSpec, SpecError> {
        if self.run.length == 0 {
            return Err(invalid("run.length", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.run.control_threshold) {
            return Err(invalid("run.control_threshold", "must lie in [0, 1]"));
        }
        // Resolution host: same construction the engine performs.
        let host = build_host(&self.host)?;

        let mut attackers = Vec::new();
        for (index, spec) in self.attackers.iter().enumerate() {
            let process = spec
                .process
                .as_deref()
                .map(|name| host.pid_by_name(name))
                .transpose()?;
            let steps = spec
                .steps
                .iter()
                .map(|s| Ok((s.tick, compile_vector(&s.vector)?)))
                .collect::<Result<Vec<_>, SpecError>>()?;
            if let Some(period) = spec.repeat {
                if period == 0 {
                    return Err(invalid("attacker repeat", "period must be at least 1"));
                }
            }
            attackers.push(AttackerRun {
                name: spec
                    .name
                    .clone()
                    .unwrap_or_else(|| format!("attacker-{index}")),
                process,
                script: AttackScript::new(steps, spec.repeat),
            });
        }

        let mut guards = Vec::new();
        for spec in &self.guards {
            if guards.iter().any(|g: &GuardStrategy| g.id == spec.id) {
                return Err(SpecError::DuplicateId {
                    kind: "guard",
                    id: spec.id.clone(),
                });
            }
            let behavior = compile_behavior(&spec.id, &spec.kind, &host)?;
            let initially_active = spec
                .initially_active
                .unwrap_or(spec.trigger != Trigger::AutomaticOnEvent);
            guards.push(GuardStrategy {
                id: spec.id.clone(),
                behavior,
                trigger: spec.trigger,
                initially_active,
                deactivate_at: spec.deactivate_at,
            });
        }

        let mut rules = Vec::new();
        for spec in &self.rules {
            if rules.iter().any(|r: &Rule| r.rule_id == spec.id) {
                return Err(SpecError::DuplicateId {
                    kind: "rule",
                    id: spec.id.clone(),
                });
            }
            if spec.when.window == 0 {
                return Err(invalid(format!("rule {}", spec.id), "window must be >= 1"));
            }
            let target_guard = guards
                .iter()
                .find(|g| g.id == spec.activate)
                .ok_or_else(|| {
                    invalid(
                        format!("rule {}", spec.id),
                        format!("activates unknown guard {}", spec.activate),
                    )
                })?;
            if let Some(vectors) = &spec.when.vectors {
                for v in vectors {
                    if !VECTOR_CATALOG.iter().any(|(id, _, _)| id == v) {
                        return Err(invalid(
                            format!("rule {}", spec.id),
                            format!("unknown attack vector {v}"),
                        ));
                    }
                }
            }
            let overrides = spec
                .overrides
                .as_ref()
                .map(|o| compile_behavior(&spec.activate, o, &host))
                .transpose()?;
            if let Some(o) = &overrides {
                if o.kind() != target_guard.behavior.kind() {
                    return Err(invalid(
                        format!("rule {}", spec.id),
                        "overrides must keep the guard's kind",
                    ));
                }
            }
            rules.push(Rule {
                rule_id: spec.id.clone(),
                condition: Condition {
                    vectors: spec
                        .when
                        .vectors
                        .as_ref()
                        .map(|v| v.iter().cloned().collect()),
                    target: spec.when.target.clone(),
                    min_count: spec.when.min_count,
                    window: spec.when.window,
                },
                activate: spec.activate.clone(),
                overrides,
                priority: spec.priority,
            });
        }

        let mut protected = Vec::new();
        for spec in &self.protected {
            if protected
                .iter()
                .any(|p: &ProtectedAttribute| p.label == spec.attr)
            {
                return Err(SpecError::DuplicateId {
                    kind: "protected attribute",
                    id: spec.attr.clone(),
                });
            }
            let attr = parse_attr_ref(&spec.attr, &host)?;
            host.query_attribute(&attr).map_err(|e| {
                invalid(format!("protected attribute {}", spec.attr), e.to_string())
            })?;
            let desired = parse_desired(&attr, &spec.desired, &spec.attr)?;
            protected.push(ProtectedAttribute {
                label: spec.attr.clone(),
                attr,
                desired,
            });
        }

        Ok(ScenarioSpec {
            host: self.host.clone(),
            attackers,
            guards,
            rulebook: Rulebook { rules },
            protected,
            run_length: self.run.length,
            seed: self.run.seed,
            control_threshold: self.run.control_threshold,
        })
    }
}
