//! Simulated host state machine.
//!
//! All attacker and guard effects flow through a single choke-point,
//! [`HostState::apply_mutation`], so that every state change is observable,
//! attributable to an actor, and replayable from a log. Locks are binary and
//! actor-scoped: a locked attribute rejects destructive malware mutations but
//! never blocks the organization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Who performed an action on the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actor {
    Organization,
    Malware,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Organization => write!(f, "organization"),
            Actor::Malware => write!(f, "malware"),
        }
    }
}

/// Process handle, allocated by the host in spawn order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(ServiceId);
string_id!(KeyPath);
string_id!(FilePath);
string_id!(EntryId);
string_id!(ToolId);

impl FilePath {
    /// Directory component of the path, or "" for bare names.
    pub fn directory(&self) -> &str {
        match self.0.rfind('/') {
            Some(idx) => &self.0[..idx],
            None => "",
        }
    }

    pub fn join(dir: &str, name: &str) -> Self {
        if dir.is_empty() {
            Self(name.to_string())
        } else {
            Self(format!("{dir}/{name}"))
        }
    }
}

/// Registry value: flat scalars only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolStatus {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessEntry {
    pub pid: ProcessId,
    pub name: String,
    pub image_path: Option<FilePath>,
    pub hidden: bool,
    pub locked: bool,
    pub owner: Actor,
    pub alive: bool,
    /// Root of the spawn lineage this process belongs to. Setup processes
    /// root their own lineage; processes spawned by a guard inherit it.
    pub lineage_root: ProcessId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEntry {
    pub service_id: ServiceId,
    pub running: bool,
    pub locked: bool,
    pub desired_running: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryKey {
    pub path: KeyPath,
    /// `None` while the key exists but has never been set, and always `None`
    /// when `exists` is false.
    pub value: Option<Scalar>,
    pub exists: bool,
    pub locked: bool,
    pub desired_value: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: FilePath,
    pub content_id: String,
    pub hidden: bool,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartupEntry {
    pub entry_id: EntryId,
    pub target: FilePath,
    pub locked: bool,
}

/// Reference to one protected or mutated attribute of the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrRef {
    Service(ServiceId),
    Registry(KeyPath),
    Process(ProcessId),
    /// Aliveness of a spawn lineage rather than a single pid. Survives
    /// guard-driven respawns where the original pid dies by design.
    ProcessLineage(ProcessId),
    File(FilePath),
    Startup(EntryId),
    Tool(ToolId),
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrRef::Service(id) => write!(f, "service:{id}"),
            AttrRef::Registry(path) => write!(f, "registry:{path}"),
            AttrRef::Process(pid) => write!(f, "process:{pid}"),
            AttrRef::ProcessLineage(pid) => write!(f, "process-lineage:{pid}"),
            AttrRef::File(path) => write!(f, "file:{path}"),
            AttrRef::Startup(id) => write!(f, "startup:{id}"),
            AttrRef::Tool(id) => write!(f, "tool:{id}"),
        }
    }
}

/// Current value of a queried attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeValue {
    ServiceRunning(bool),
    /// `None` means the key is absent or unset.
    RegistryValue(Option<Scalar>),
    ProcessAlive(bool),
    LineageAlive(bool),
    FilePresent(bool),
    StartupPresent(bool),
    Tool(ToolStatus),
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::ServiceRunning(b) => write!(f, "running={b}"),
            AttributeValue::RegistryValue(Some(v)) => write!(f, "value={v}"),
            AttributeValue::RegistryValue(None) => write!(f, "absent"),
            AttributeValue::ProcessAlive(b) => write!(f, "alive={b}"),
            AttributeValue::LineageAlive(b) => write!(f, "lineage-alive={b}"),
            AttributeValue::FilePresent(b) => write!(f, "present={b}"),
            AttributeValue::StartupPresent(b) => write!(f, "present={b}"),
            AttributeValue::Tool(ToolStatus::Enabled) => write!(f, "enabled"),
            AttributeValue::Tool(ToolStatus::Disabled) => write!(f, "disabled"),
        }
    }
}

/// Where a mutation originated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationSource {
    Setup,
    /// Attack vector id, e.g. `capec-56-disable-guard-logic`.
    Attack(String),
    /// Guard id from the scenario's guard set.
    Guard(String),
}

/// One state change request. Exactly one payload shape per kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    SetServiceRunning {
        service: ServiceId,
        running: bool,
    },
    SetRegistryValue {
        key: KeyPath,
        value: Scalar,
    },
    DeleteRegistryKey {
        key: KeyPath,
    },
    CreateRegistryKey {
        key: KeyPath,
    },
    KillProcess {
        pid: ProcessId,
    },
    SpawnProcess {
        name: String,
        image_path: Option<FilePath>,
        hidden: bool,
        locked: bool,
        owner: Actor,
        /// Lineage to join; `None` roots a new lineage at the spawned pid.
        lineage_root: Option<ProcessId>,
    },
    RenameProcess {
        pid: ProcessId,
        new_name: String,
    },
    CopyFile {
        src: FilePath,
        dest: FilePath,
    },
    DeleteFile {
        path: FilePath,
    },
    AddStartupEntry {
        entry: EntryId,
        target: FilePath,
        locked: bool,
    },
    RemoveStartupEntry {
        entry: EntryId,
    },
    SetToolStatus {
        tool: ToolId,
        status: ToolStatus,
    },
    SetHidden {
        target: AttrRef,
        hidden: bool,
    },
    SetLocked {
        target: AttrRef,
        locked: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub kind: MutationKind,
    pub actor: Actor,
    pub source: MutationSource,
}

/// Result of pushing a mutation through the choke-point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationOutcome {
    Applied,
    Blocked { reason: String },
    NoOp,
}

impl MutationOutcome {
    pub fn is_applied(&self) -> bool {
        matches!(self, MutationOutcome::Applied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("unknown target: {0}")]
    UnknownTarget(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("duplicate {kind} id: {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{referrer} references undeclared file {path}")]
    DanglingFile { referrer: String, path: String },
    #[error("{what}: {detail}")]
    Invalid { what: String, detail: String },
}

/// Declarative host definition, the `host` section of a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    #[serde(default)]
    pub processes: Vec<ProcessSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub registry: Vec<RegistryKeySpec>,
    #[serde(default)]
    pub files: Vec<FileSpec>,
    #[serde(default)]
    pub startup: Vec<StartupSpec>,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub name: String,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub hidden: bool,
    #[serde(default)]
    pub locked: bool,
    #[serde(default = "default_owner")]
    pub owner: Actor,
}

fn default_owner() -> Actor {
    Actor::Organization
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: String,
    pub running: bool,
    #[serde(default)]
    pub locked: bool,
    /// Defaults to the initial `running` state.
    #[serde(default)]
    pub desired_running: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryKeySpec {
    pub path: String,
    pub value: Scalar,
    #[serde(default)]
    pub locked: bool,
    /// Defaults to the initial value.
    #[serde(default)]
    pub desired: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: String,
    pub content: String,
    #[serde(default)]
    pub hidden: bool,
    #[serde(default)]
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartupSpec {
    pub id: String,
    pub target: String,
    #[serde(default)]
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub id: String,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

/// Complete simulated host. Mutated only through [`HostState::apply_mutation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostState {
    pub processes: BTreeMap<ProcessId, ProcessEntry>,
    pub services: BTreeMap<ServiceId, ServiceEntry>,
    pub registry: BTreeMap<KeyPath, RegistryKey>,
    pub files: BTreeMap<FilePath, FileEntry>,
    pub startup_entries: BTreeMap<EntryId, StartupEntry>,
    pub support_tools: BTreeMap<ToolId, ToolStatus>,
    pub tick: u64,
    next_pid: u32,
}

/// Read-only projection of the host for one observer. The malware view
/// omits hidden processes and files, dead processes, and deleted registry
/// keys; the organization sees everything.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostView {
    pub observer: Actor,
    pub tick: u64,
    pub processes: BTreeMap<ProcessId, ProcessEntry>,
    pub services: BTreeMap<ServiceId, ServiceEntry>,
    pub registry: BTreeMap<KeyPath, RegistryKey>,
    pub files: BTreeMap<FilePath, FileEntry>,
    pub startup_entries: BTreeMap<EntryId, StartupEntry>,
    pub support_tools: BTreeMap<ToolId, ToolStatus>,
}

impl HostView {
    pub fn process_by_name(&self, name: &str) -> Option<&ProcessEntry> {
        self.processes.values().find(|p| p.name == name)
    }
}

/// Validate a [`HostSpec`] and build the initial state. Pids are assigned in
/// declaration order starting at 1.
pub fn build_host(spec: &HostSpec) -> Result<HostState, SpecError> {
    let mut files = BTreeMap::new();
    for f in &spec.files {
        let path = FilePath::new(&f.path);
        if files
            .insert(
                path.clone(),
                FileEntry {
                    path,
                    content_id: f.content.clone(),
                    hidden: f.hidden,
                    locked: f.locked,
                },
            )
            .is_some()
        {
            return Err(SpecError::DuplicateId {
                kind: "file",
                id: f.path.clone(),
            });
        }
    }

    let mut processes = BTreeMap::new();
    let mut next_pid = 1u32;
    for p in &spec.processes {
        let image_path = p.image.as_deref().map(FilePath::new);
        if let Some(image) = &image_path {
            if !files.contains_key(image) {
                return Err(SpecError::DanglingFile {
                    referrer: format!("process {}", p.name),
                    path: image.to_string(),
                });
            }
        }
        let pid = ProcessId(next_pid);
        next_pid += 1;
        processes.insert(
            pid,
            ProcessEntry {
                pid,
                name: p.name.clone(),
                image_path,
                hidden: p.hidden,
                locked: p.locked,
                owner: p.owner,
                alive: true,
                lineage_root: pid,
            },
        );
    }

    let mut services = BTreeMap::new();
    for s in &spec.services {
        let id = ServiceId::new(&s.id);
        if services
            .insert(
                id.clone(),
                ServiceEntry {
                    service_id: id,
                    running: s.running,
                    locked: s.locked,
                    desired_running: s.desired_running.unwrap_or(s.running),
                },
            )
            .is_some()
        {
            return Err(SpecError::DuplicateId {
                kind: "service",
                id: s.id.clone(),
            });
        }
    }

    let mut registry = BTreeMap::new();
    for k in &spec.registry {
        let path = KeyPath::new(&k.path);
        if registry
            .insert(
                path.clone(),
                RegistryKey {
                    path,
                    value: Some(k.value.clone()),
                    exists: true,
                    locked: k.locked,
                    desired_value: Some(k.desired.clone().unwrap_or_else(|| k.value.clone())),
                },
            )
            .is_some()
        {
            return Err(SpecError::DuplicateId {
                kind: "registry key",
                id: k.path.clone(),
            });
        }
    }

    let mut startup_entries = BTreeMap::new();
    for e in &spec.startup {
        let target = FilePath::new(&e.target);
        if !files.contains_key(&target) {
            return Err(SpecError::DanglingFile {
                referrer: format!("startup entry {}", e.id),
                path: e.target.clone(),
            });
        }
        let id = EntryId::new(&e.id);
        if startup_entries
            .insert(
                id.clone(),
                StartupEntry {
                    entry_id: id,
                    target,
                    locked: e.locked,
                },
            )
            .is_some()
        {
            return Err(SpecError::DuplicateId {
                kind: "startup entry",
                id: e.id.clone(),
            });
        }
    }

    let mut support_tools = BTreeMap::new();
    for t in &spec.tools {
        let id = ToolId::new(&t.id);
        let status = if t.enabled {
            ToolStatus::Enabled
        } else {
            ToolStatus::Disabled
        };
        if support_tools.insert(id, status).is_some() {
            return Err(SpecError::DuplicateId {
                kind: "tool",
                id: t.id.clone(),
            });
        }
    }

    Ok(HostState {
        processes,
        services,
        registry,
        files,
        startup_entries,
        support_tools,
        tick: 0,
        next_pid,
    })
}

impl HostState {
    /// Pid the next successful `SpawnProcess` will receive.
    pub fn peek_next_pid(&self) -> ProcessId {
        ProcessId(self.next_pid)
    }

    /// Advance simulation time. Ticks never move backwards.
    pub fn advance_tick(&mut self, tick: u64) {
        debug_assert!(tick >= self.tick);
        self.tick = tick;
    }

    /// Resolve a process by current display name. Errors on no match or an
    /// ambiguous match.
    pub fn pid_by_name(&self, name: &str) -> Result<ProcessId, SpecError> {
        let mut matches = self.processes.values().filter(|p| p.name == name);
        match (matches.next(), matches.next()) {
            (Some(p), None) => Ok(p.pid),
            (None, _) => Err(SpecError::Invalid {
                what: format!("process reference {name}"),
                detail: "no such process".into(),
            }),
            (Some(_), Some(_)) => Err(SpecError::Invalid {
                what: format!("process reference {name}"),
                detail: "ambiguous: multiple processes share this name".into(),
            }),
        }
    }

    /// Canonical string for the attribute a mutation acts on, using current
    /// display names for processes. Used for log provenance and rule globs.
    pub fn mutation_target(&self, kind: &MutationKind) -> String {
        let process_label = |pid: &ProcessId| -> String {
            match self.processes.get(pid) {
                Some(p) => format!("process:{}", p.name),
                None => format!("process:{pid}"),
            }
        };
        match kind {
            MutationKind::SetServiceRunning { service, .. } => format!("service:{service}"),
            MutationKind::SetRegistryValue { key, .. }
            | MutationKind::DeleteRegistryKey { key }
            | MutationKind::CreateRegistryKey { key } => format!("registry:{key}"),
            MutationKind::KillProcess { pid } | MutationKind::RenameProcess { pid, .. } => {
                process_label(pid)
            }
            MutationKind::SpawnProcess { name, .. } => format!("process:{name}"),
            MutationKind::CopyFile { dest, .. } => format!("file:{dest}"),
            MutationKind::DeleteFile { path } => format!("file:{path}"),
            MutationKind::AddStartupEntry { entry, .. }
            | MutationKind::RemoveStartupEntry { entry } => format!("startup:{entry}"),
            MutationKind::SetToolStatus { tool, .. } => format!("tool:{tool}"),
            MutationKind::SetHidden { target, .. } | MutationKind::SetLocked { target, .. } => {
                match target {
                    AttrRef::Process(pid) => process_label(pid),
                    other => other.to_string(),
                }
            }
        }
    }

    /// The single mutation choke-point. A destructive malware mutation
    /// against a locked target is blocked with the host unchanged; a
    /// mutation whose payload equals current state is a no-op.
    pub fn apply_mutation(&mut self, m: &Mutation) -> Result<MutationOutcome, HostError> {
        let unknown = |what: String| Err(HostError::UnknownTarget(what));
        let blocked = || {
            Ok(MutationOutcome::Blocked {
                reason: "locked".into(),
            })
        };
        let malware = m.actor == Actor::Malware;

        match &m.kind {
            MutationKind::SetServiceRunning { service, running } => {
                let Some(entry) = self.services.get_mut(service) else {
                    return unknown(format!("service:{service}"));
                };
                if entry.running == *running {
                    return Ok(MutationOutcome::NoOp);
                }
                if entry.locked && malware {
                    return blocked();
                }
                entry.running = *running;
                Ok(MutationOutcome::Applied)
            }
            MutationKind::SetRegistryValue { key, value } => {
                let Some(entry) = self.registry.get_mut(key) else {
                    return unknown(format!("registry:{key}"));
                };
                if !entry.exists {
                    return unknown(format!("registry:{key} (deleted)"));
                }
                if entry.value.as_ref() == Some(value) {
                    return Ok(MutationOutcome::NoOp);
                }
                if entry.locked && malware {
                    return blocked();
                }
                entry.value = Some(value.clone());
                Ok(MutationOutcome::Applied)
            }
            MutationKind::DeleteRegistryKey { key } => {
                let Some(entry) = self.registry.get_mut(key) else {
                    return unknown(format!("registry:{key}"));
                };
                if !entry.exists {
                    return Ok(MutationOutcome::NoOp);
                }
                if entry.locked && malware {
                    return blocked();
                }
                entry.exists = false;
                entry.value = None;
                Ok(MutationOutcome::Applied)
            }
            MutationKind::CreateRegistryKey { key } => {
                match self.registry.get_mut(key) {
                    Some(entry) if entry.exists => Ok(MutationOutcome::NoOp),
                    Some(entry) => {
                        // Revive a deleted key. Creation is not destructive,
                        // so the lock gate does not apply.
                        entry.exists = true;
                        Ok(MutationOutcome::Applied)
                    }
                    None => {
                        self.registry.insert(
                            key.clone(),
                            RegistryKey {
                                path: key.clone(),
                                value: None,
                                exists: true,
                                locked: false,
                                desired_value: None,
                            },
                        );
                        Ok(MutationOutcome::Applied)
                    }
                }
            }
            MutationKind::KillProcess { pid } => {
                let Some(entry) = self.processes.get_mut(pid) else {
                    return unknown(format!("process:{pid}"));
                };
                if !entry.alive {
                    return Ok(MutationOutcome::NoOp);
                }
                if entry.locked && malware {
                    return blocked();
                }
                entry.alive = false;
                Ok(MutationOutcome::Applied)
            }
            MutationKind::SpawnProcess {
                name,
                image_path,
                hidden,
                locked,
                owner,
                lineage_root,
            } => {
                if let Some(image) = image_path {
                    if !self.files.contains_key(image) {
                        return unknown(format!("file:{image}"));
                    }
                }
                let pid = ProcessId(self.next_pid);
                self.next_pid += 1;
                self.processes.insert(
                    pid,
                    ProcessEntry {
                        pid,
                        name: name.clone(),
                        image_path: image_path.clone(),
                        hidden: *hidden,
                        locked: *locked,
                        owner: *owner,
                        alive: true,
                        lineage_root: lineage_root.unwrap_or(pid),
                    },
                );
                Ok(MutationOutcome::Applied)
            }
            MutationKind::RenameProcess { pid, new_name } => {
                let Some(entry) = self.processes.get_mut(pid) else {
                    return unknown(format!("process:{pid}"));
                };
                if entry.name == *new_name {
                    return Ok(MutationOutcome::NoOp);
                }
                if entry.locked && malware {
                    return blocked();
                }
                entry.name = new_name.clone();
                Ok(MutationOutcome::Applied)
            }
            MutationKind::CopyFile { src, dest } => {
                let Some(src_entry) = self.files.get(src).cloned() else {
                    return unknown(format!("file:{src}"));
                };
                match self.files.get_mut(dest) {
                    Some(existing) if existing.content_id == src_entry.content_id => {
                        Ok(MutationOutcome::NoOp)
                    }
                    Some(existing) => {
                        if existing.locked && malware {
                            return blocked();
                        }
                        existing.content_id = src_entry.content_id;
                        Ok(MutationOutcome::Applied)
                    }
                    None => {
                        self.files.insert(
                            dest.clone(),
                            FileEntry {
                                path: dest.clone(),
                                content_id: src_entry.content_id,
                                hidden: src_entry.hidden,
                                locked: src_entry.locked,
                            },
                        );
                        Ok(MutationOutcome::Applied)
                    }
                }
            }
            MutationKind::DeleteFile { path } => {
                let Some(entry) = self.files.get(path) else {
                    return unknown(format!("file:{path}"));
                };
                if entry.locked && malware {
                    return blocked();
                }
                self.files.remove(path);
                Ok(MutationOutcome::Applied)
            }
            MutationKind::AddStartupEntry {
                entry,
                target,
                locked,
            } => {
                if !self.files.contains_key(target) {
                    return unknown(format!("file:{target}"));
                }
                match self.startup_entries.get_mut(entry) {
                    Some(existing) if existing.target == *target && existing.locked == *locked => {
                        Ok(MutationOutcome::NoOp)
                    }
                    Some(existing) => {
                        if existing.locked && malware {
                            return blocked();
                        }
                        existing.target = target.clone();
                        existing.locked = *locked;
                        Ok(MutationOutcome::Applied)
                    }
                    None => {
                        self.startup_entries.insert(
                            entry.clone(),
                            StartupEntry {
                                entry_id: entry.clone(),
                                target: target.clone(),
                                locked: *locked,
                            },
                        );
                        Ok(MutationOutcome::Applied)
                    }
                }
            }
            MutationKind::RemoveStartupEntry { entry } => {
                let Some(existing) = self.startup_entries.get(entry) else {
                    return unknown(format!("startup:{entry}"));
                };
                if existing.locked && malware {
                    return blocked();
                }
                self.startup_entries.remove(entry);
                Ok(MutationOutcome::Applied)
            }
            MutationKind::SetToolStatus { tool, status } => {
                let Some(existing) = self.support_tools.get_mut(tool) else {
                    return unknown(format!("tool:{tool}"));
                };
                if *existing == *status {
                    return Ok(MutationOutcome::NoOp);
                }
                *existing = *status;
                Ok(MutationOutcome::Applied)
            }
            MutationKind::SetHidden { target, hidden } => match target {
                AttrRef::Process(pid) => {
                    let Some(entry) = self.processes.get_mut(pid) else {
                        return unknown(format!("process:{pid}"));
                    };
                    if entry.hidden == *hidden {
                        return Ok(MutationOutcome::NoOp);
                    }
                    if entry.locked && malware {
                        return blocked();
                    }
                    entry.hidden = *hidden;
                    Ok(MutationOutcome::Applied)
                }
                AttrRef::File(path) => {
                    let Some(entry) = self.files.get_mut(path) else {
                        return unknown(format!("file:{path}"));
                    };
                    if entry.hidden == *hidden {
                        return Ok(MutationOutcome::NoOp);
                    }
                    if entry.locked && malware {
                        return blocked();
                    }
                    entry.hidden = *hidden;
                    Ok(MutationOutcome::Applied)
                }
                other => unknown(format!("{other} (not hideable)")),
            },
            MutationKind::SetLocked { target, locked } => {
                let current = match target {
                    AttrRef::Service(id) => self.services.get(id).map(|e| e.locked),
                    AttrRef::Registry(key) => self.registry.get(key).map(|e| e.locked),
                    AttrRef::Process(pid) => self.processes.get(pid).map(|e| e.locked),
                    AttrRef::File(path) => self.files.get(path).map(|e| e.locked),
                    AttrRef::Startup(id) => self.startup_entries.get(id).map(|e| e.locked),
                    other => return unknown(format!("{other} (not lockable)")),
                };
                let Some(current) = current else {
                    return unknown(target.to_string());
                };
                if current == *locked {
                    return Ok(MutationOutcome::NoOp);
                }
                if current && malware {
                    // Malware may never strip a lock.
                    return blocked();
                }
                match target {
                    AttrRef::Service(id) => self.services.get_mut(id).unwrap().locked = *locked,
                    AttrRef::Registry(key) => self.registry.get_mut(key).unwrap().locked = *locked,
                    AttrRef::Process(pid) => self.processes.get_mut(pid).unwrap().locked = *locked,
                    AttrRef::File(path) => self.files.get_mut(path).unwrap().locked = *locked,
                    AttrRef::Startup(id) => {
                        self.startup_entries.get_mut(id).unwrap().locked = *locked
                    }
                    _ => unreachable!(),
                }
                Ok(MutationOutcome::Applied)
            }
        }
    }

    /// Pre-/post-test probe. Read-only.
    pub fn query_attribute(&self, attr: &AttrRef) -> Result<AttributeValue, HostError> {
        match attr {
            AttrRef::Service(id) => self
                .services
                .get(id)
                .map(|e| AttributeValue::ServiceRunning(e.running))
                .ok_or_else(|| HostError::UnknownTarget(attr.to_string())),
            AttrRef::Registry(key) => Ok(AttributeValue::RegistryValue(
                self.registry
                    .get(key)
                    .filter(|e| e.exists)
                    .and_then(|e| e.value.clone()),
            )),
            AttrRef::Process(pid) => self
                .processes
                .get(pid)
                .map(|e| AttributeValue::ProcessAlive(e.alive))
                .ok_or_else(|| HostError::UnknownTarget(attr.to_string())),
            AttrRef::ProcessLineage(root) => {
                if !self.processes.contains_key(root) {
                    return Err(HostError::UnknownTarget(attr.to_string()));
                }
                Ok(AttributeValue::LineageAlive(
                    self.processes
                        .values()
                        .any(|p| p.lineage_root == *root && p.alive),
                ))
            }
            AttrRef::File(path) => {
                Ok(AttributeValue::FilePresent(self.files.contains_key(path)))
            }
            AttrRef::Startup(id) => Ok(AttributeValue::StartupPresent(
                self.startup_entries.contains_key(id),
            )),
            AttrRef::Tool(id) => self
                .support_tools
                .get(id)
                .map(|s| AttributeValue::Tool(*s))
                .ok_or_else(|| HostError::UnknownTarget(attr.to_string())),
        }
    }

    /// Immutable snapshot of what `observer` can see.
    pub fn visible_view(&self, observer: Actor) -> HostView {
        let full = observer == Actor::Organization;
        HostView {
            observer,
            tick: self.tick,
            processes: self
                .processes
                .iter()
                .filter(|(_, p)| full || (p.alive && !p.hidden))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            services: self.services.clone(),
            registry: self
                .registry
                .iter()
                .filter(|(_, k)| full || k.exists)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            files: self
                .files
                .iter()
                .filter(|(_, f)| full || !f.hidden)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            startup_entries: self.startup_entries.clone(),
            support_tools: self.support_tools.clone(),
        }
    }

    /// SHA-256 of the canonical JSON encoding. Stable across runs because
    /// all maps are ordered.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("host state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn firewall_spec() -> HostSpec {
        HostSpec {
            processes: vec![ProcessSpec {
                name: "guardapp".into(),
                image: Some("c/apps/guardapp".into()),
                hidden: false,
                locked: false,
                owner: Actor::Organization,
            }],
            services: vec![ServiceSpec {
                id: "firewall".into(),
                running: true,
                locked: false,
                desired_running: Some(true),
            }],
            files: vec![FileSpec {
                path: "c/apps/guardapp".into(),
                content: "guard-v1".into(),
                hidden: false,
                locked: false,
            }],
            ..Default::default()
        }
    }

    fn mutation(kind: MutationKind, actor: Actor) -> Mutation {
        Mutation {
            kind,
            actor,
            source: MutationSource::Setup,
        }
    }

    #[test]
    fn build_firewall_host() {
        let host = build_host(&firewall_spec()).unwrap();
        assert_eq!(host.services.len(), 1);
        assert_eq!(host.processes.len(), 1);
        assert_eq!(host.tick, 0);
        assert!(host.services[&ServiceId::from("firewall")].running);
    }

    #[test]
    fn build_empty_host() {
        let host = build_host(&HostSpec::default()).unwrap();
        assert!(host.processes.is_empty());
        assert!(host.services.is_empty());
        assert!(host.registry.is_empty());
        assert!(host.files.is_empty());
        assert!(host.startup_entries.is_empty());
        assert!(host.support_tools.is_empty());
        assert_eq!(host.tick, 0);
    }

    #[test]
    fn build_rejects_dangling_startup_target() {
        let spec = HostSpec {
            startup: vec![StartupSpec {
                id: "boot".into(),
                target: "c/missing".into(),
                locked: false,
            }],
            ..Default::default()
        };
        assert!(matches!(
            build_host(&spec),
            Err(SpecError::DanglingFile { .. })
        ));
    }

    #[test]
    fn build_rejects_duplicate_service() {
        let mut spec = firewall_spec();
        spec.services.push(spec.services[0].clone());
        assert!(matches!(
            build_host(&spec),
            Err(SpecError::DuplicateId { kind: "service", .. })
        ));
    }

    #[test]
    fn malware_kill_of_locked_process_is_blocked() {
        let mut spec = firewall_spec();
        spec.processes[0].locked = true;
        let mut host = build_host(&spec).unwrap();
        let pid = host.pid_by_name("guardapp").unwrap();
        let out = host
            .apply_mutation(&mutation(
                MutationKind::KillProcess { pid },
                Actor::Malware,
            ))
            .unwrap();
        assert_eq!(
            out,
            MutationOutcome::Blocked {
                reason: "locked".into()
            }
        );
        assert!(host.processes[&pid].alive);
    }

    #[test]
    fn idempotent_service_write_is_noop() {
        let mut host = build_host(&firewall_spec()).unwrap();
        let out = host
            .apply_mutation(&mutation(
                MutationKind::SetServiceRunning {
                    service: "firewall".into(),
                    running: true,
                },
                Actor::Malware,
            ))
            .unwrap();
        assert_eq!(out, MutationOutcome::NoOp);
    }

    #[test]
    fn unlocked_registry_write_applies_and_reads_back() {
        let spec = HostSpec {
            registry: vec![RegistryKeySpec {
                path: "hklm/acme/flag".into(),
                value: Scalar::Bool(true),
                locked: false,
                desired: None,
            }],
            ..Default::default()
        };
        let mut host = build_host(&spec).unwrap();
        let key = KeyPath::from("hklm/acme/flag");
        let out = host
            .apply_mutation(&mutation(
                MutationKind::SetRegistryValue {
                    key: key.clone(),
                    value: Scalar::Bool(false),
                },
                Actor::Malware,
            ))
            .unwrap();
        assert_eq!(out, MutationOutcome::Applied);
        assert_eq!(
            host.query_attribute(&AttrRef::Registry(key)).unwrap(),
            AttributeValue::RegistryValue(Some(Scalar::Bool(false)))
        );
    }

    #[test]
    fn deleted_registry_key_reads_absent() {
        let spec = HostSpec {
            registry: vec![RegistryKeySpec {
                path: "hklm/acme/flag".into(),
                value: Scalar::Bool(true),
                locked: false,
                desired: None,
            }],
            ..Default::default()
        };
        let mut host = build_host(&spec).unwrap();
        let key = KeyPath::from("hklm/acme/flag");
        host.apply_mutation(&mutation(
            MutationKind::DeleteRegistryKey { key: key.clone() },
            Actor::Malware,
        ))
        .unwrap();
        assert_eq!(
            host.query_attribute(&AttrRef::Registry(key)).unwrap(),
            AttributeValue::RegistryValue(None)
        );
    }

    #[test]
    fn firewall_runs_after_setup() {
        let host = build_host(&firewall_spec()).unwrap();
        assert_eq!(
            host.query_attribute(&AttrRef::Service("firewall".into()))
                .unwrap(),
            AttributeValue::ServiceRunning(true)
        );
    }

    #[test]
    fn hidden_process_invisible_to_malware_only() {
        let mut spec = firewall_spec();
        spec.processes[0].hidden = true;
        let host = build_host(&spec).unwrap();
        let pid = host.pid_by_name("guardapp").unwrap();
        assert!(!host
            .visible_view(Actor::Malware)
            .processes
            .contains_key(&pid));
        assert!(host
            .visible_view(Actor::Organization)
            .processes
            .contains_key(&pid));
    }

    #[test]
    fn unhidden_host_views_match_for_both_observers() {
        let host = build_host(&firewall_spec()).unwrap();
        let malware = host.visible_view(Actor::Malware);
        let org = host.visible_view(Actor::Organization);
        assert_eq!(malware.processes, org.processes);
        assert_eq!(malware.files, org.files);
        assert_eq!(malware.registry, org.registry);
    }

    #[test]
    fn dead_process_invisible_to_malware() {
        let mut host = build_host(&firewall_spec()).unwrap();
        let pid = host.pid_by_name("guardapp").unwrap();
        host.apply_mutation(&mutation(MutationKind::KillProcess { pid }, Actor::Malware))
            .unwrap();
        assert!(!host
            .visible_view(Actor::Malware)
            .processes
            .contains_key(&pid));
        assert_eq!(
            host.query_attribute(&AttrRef::Process(pid)).unwrap(),
            AttributeValue::ProcessAlive(false)
        );
    }

    #[test]
    fn organization_is_never_blocked_by_locks() {
        // Every lock/actor combination for a destructive service write.
        for locked in [false, true] {
            for actor in [Actor::Organization, Actor::Malware] {
                let mut spec = firewall_spec();
                spec.services[0].locked = locked;
                spec.services[0].running = false;
                let mut host = build_host(&spec).unwrap();
                let out = host
                    .apply_mutation(&mutation(
                        MutationKind::SetServiceRunning {
                            service: "firewall".into(),
                            running: true,
                        },
                        actor,
                    ))
                    .unwrap();
                let expect_blocked = locked && actor == Actor::Malware;
                assert_eq!(
                    matches!(out, MutationOutcome::Blocked { .. }),
                    expect_blocked,
                    "locked={locked} actor={actor}"
                );
            }
        }
    }

    #[test]
    fn malware_cannot_strip_locks() {
        let mut spec = firewall_spec();
        spec.processes[0].locked = true;
        let mut host = build_host(&spec).unwrap();
        let pid = host.pid_by_name("guardapp").unwrap();
        let out = host
            .apply_mutation(&mutation(
                MutationKind::SetLocked {
                    target: AttrRef::Process(pid),
                    locked: false,
                },
                Actor::Malware,
            ))
            .unwrap();
        assert!(matches!(out, MutationOutcome::Blocked { .. }));
        assert!(host.processes[&pid].locked);
    }

    #[test]
    fn spawn_allocates_sequential_pids_and_lineage() {
        let mut host = build_host(&firewall_spec()).unwrap();
        let root = host.pid_by_name("guardapp").unwrap();
        let next = host.peek_next_pid();
        let out = host
            .apply_mutation(&mutation(
                MutationKind::SpawnProcess {
                    name: "x7k2m9q4w1z5".into(),
                    image_path: Some("c/apps/guardapp".into()),
                    hidden: false,
                    locked: false,
                    owner: Actor::Organization,
                    lineage_root: Some(root),
                },
                Actor::Organization,
            ))
            .unwrap();
        assert_eq!(out, MutationOutcome::Applied);
        assert_eq!(host.processes[&next].lineage_root, root);
        assert_eq!(
            host.query_attribute(&AttrRef::ProcessLineage(root)).unwrap(),
            AttributeValue::LineageAlive(true)
        );
    }

    #[test]
    fn copy_file_duplicates_content() {
        let mut host = build_host(&firewall_spec()).unwrap();
        host.apply_mutation(&mutation(
            MutationKind::CopyFile {
                src: "c/apps/guardapp".into(),
                dest: "c/apps/backup".into(),
            },
            Actor::Organization,
        ))
        .unwrap();
        assert_eq!(
            host.files[&FilePath::from("c/apps/backup")].content_id,
            "guard-v1"
        );
    }

    #[test]
    fn unknown_targets_error() {
        let mut host = build_host(&HostSpec::default()).unwrap();
        let err = host
            .apply_mutation(&mutation(
                MutationKind::SetServiceRunning {
                    service: "nope".into(),
                    running: false,
                },
                Actor::Malware,
            ))
            .unwrap_err();
        assert!(matches!(err, HostError::UnknownTarget(_)));
        assert!(host
            .query_attribute(&AttrRef::Service("nope".into()))
            .is_err());
    }

    #[test]
    fn digest_is_stable_and_state_sensitive() {
        let host_a = build_host(&firewall_spec()).unwrap();
        let host_b = build_host(&firewall_spec()).unwrap();
        assert_eq!(host_a.digest(), host_b.digest());

        let mut host_c = build_host(&firewall_spec()).unwrap();
        host_c
            .apply_mutation(&mutation(
                MutationKind::SetServiceRunning {
                    service: "firewall".into(),
                    running: false,
                },
                Actor::Malware,
            ))
            .unwrap();
        assert_ne!(host_a.digest(), host_c.digest());
    }

    #[test]
    fn file_path_directory_split() {
        assert_eq!(FilePath::from("c/apps/guardapp").directory(), "c/apps");
        assert_eq!(FilePath::from("bare").directory(), "");
        assert_eq!(
            FilePath::join("c/apps", "next"),
            FilePath::from("c/apps/next")
        );
    }
}
