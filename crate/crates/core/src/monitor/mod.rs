//! Trace replay against compiled rule tables.
//!
//! Each event is resolved to entities through the calling process's fd
//! table, dispatched to the handler for its syscall key in the caller's
//! scope table, and, when allowed, fed to the temporal monitors and the
//! context/leak tracker. Denied and erroneous events change nothing.

mod report;
mod trace;

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use thiserror::Error;

pub use report::{
    explain, CheckRecord, EventRecord, Explanation, Format, LeakEvent, Obligation, Report, Summary, TemporalViolation,
    UnknownSeq, UpdateRecord, Verdict,
};
pub use trace::{parse_trace, Call, IoOp, IpcOp, NetOp, OpenFlags, PathOp, Prot, Trace, TraceError, TraceEvent};

use crate::compile::{Compiled, Decision, Facet, MonitorSpec, Role, RuleTable, Target};
use crate::lang::Modality;
use crate::model::{Concrete, EntityKind, EntityPattern, Permission, Scope};

/// What an fd refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Object {
    Path(String),
    /// Address once connected.
    Socket(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FdBinding {
    pub object: Object,
    /// Opened with the append flag.
    pub append: bool,
}

impl FdBinding {
    pub fn path(path: impl Into<String>) -> FdBinding {
        FdBinding {
            object: Object::Path(path.into()),
            append: false,
        }
    }

    pub fn socket(addr: Option<&str>) -> FdBinding {
        FdBinding {
            object: Object::Socket(addr.map(String::from)),
            append: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcState {
    pub scope: Scope,
    pub fds: HashMap<i64, FdBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpdateError {
    #[error("stale version {offered} for {scope} (current {current})")]
    Stale { scope: Scope, current: u64, offered: u64 },
}

/// The rule tables the monitor reads, swapped atomically as a whole.
#[derive(Debug)]
pub struct LiveTables {
    current: RwLock<Arc<[Arc<RuleTable>; 3]>>,
}

impl LiveTables {
    pub fn new(tables: [RuleTable; 3]) -> LiveTables {
        LiveTables {
            current: RwLock::new(Arc::new(tables.map(Arc::new))),
        }
    }

    /// The tables in force right now; later updates do not affect it.
    pub fn snapshot(&self) -> Arc<[Arc<RuleTable>; 3]> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn version(&self, scope: Scope) -> u64 {
        self.snapshot()[scope.index()].version
    }

    /// Replaces the table for `table.scope` if its version is newer.
    pub fn update(&self, table: RuleTable) -> Result<(), UpdateError> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        let i = table.scope.index();
        let current = guard[i].version;
        if table.version <= current {
            return Err(UpdateError::Stale {
                scope: table.scope,
                current,
                offered: table.version,
            });
        }
        let mut next = (**guard).clone();
        next[i] = Arc::new(table);
        *guard = Arc::new(next);
        Ok(())
    }
}

/// A table swap taking effect at the first event with `seq >= at_seq`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub at_seq: u64,
    pub table: RuleTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayOptions {
    /// Judge Monitor-scope processes too; by default they run unchecked.
    pub enforce_monitor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ident {
    Path(String),
    Addr(String),
    Pid(i64, Option<Scope>),
}

impl Ident {
    fn concrete(&self) -> Concrete<'_> {
        match self {
            Ident::Path(p) => Concrete::path(p),
            Ident::Addr(a) => Concrete::addr(a),
            Ident::Pid(pid, scope) => Concrete::process(*pid, *scope),
        }
    }

    fn render(&self) -> String {
        match self {
            Ident::Path(s) | Ident::Addr(s) => s.clone(),
            Ident::Pid(pid, _) => format!("pid:{pid}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Resolved {
    kind: EntityKind,
    pattern: Option<usize>,
    ident: Ident,
}

/// `/proc/<digits>` or anything below it.
pub fn procfs_pid(path: &str) -> Option<i64> {
    let rest = path.strip_prefix("/proc/")?;
    let digits = rest.split('/').next()?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Containing directory of a path.
pub fn parent_dir(path: &str) -> &str {
    let trimmed = path.trim_end_matches('/');
    match trimmed.rfind('/') {
        Some(0) | None => "/",
        Some(i) => &trimmed[..i],
    }
}

fn resolve_kind(entities: &[EntityPattern], kind: EntityKind, ident: Ident) -> Resolved {
    let concrete = ident.concrete();
    let pattern = entities.iter().position(|p| p.kind == kind && p.matches(&concrete));
    Resolved { kind, pattern, ident }
}

struct SpecState {
    first_trigger: Option<u64>,
    pending: Vec<u64>,
}

/// Enforcement state for one trace.
pub struct Monitor {
    live: LiveTables,
    specs: Vec<MonitorSpec>,
    options: ReplayOptions,
    procs: HashMap<i64, ProcState>,
    directives: HashMap<i64, Scope>,
    updates: Vec<Update>,
    temporal: Vec<SpecState>,
    context: Vec<String>,
    in_context: HashSet<String>,
    leaked: HashSet<String>,
    report: Report,
}

enum Outcome {
    Error(String),
    Tracked,
    Judged { key: String, resolved: Vec<Resolved> },
}

impl Monitor {
    pub fn new(compiled: Compiled, options: ReplayOptions) -> Monitor {
        let temporal = compiled
            .specs
            .iter()
            .map(|_| SpecState {
                first_trigger: None,
                pending: Vec::new(),
            })
            .collect();
        Monitor {
            live: LiveTables::new(compiled.tables),
            specs: compiled.specs,
            options,
            procs: HashMap::new(),
            directives: HashMap::new(),
            updates: Vec::new(),
            temporal,
            context: Vec::new(),
            in_context: HashSet::new(),
            leaked: HashSet::new(),
            report: Report::default(),
        }
    }

    pub fn live(&self) -> &LiveTables {
        &self.live
    }

    /// Declares the scope of `pid`. The process starts with no open fds
    /// unless it is later created by a fork, which then supplies them.
    pub fn set_scope(&mut self, pid: i64, scope: Scope) {
        self.directives.insert(pid, scope);
    }

    pub fn process(&self, pid: i64) -> Option<&ProcState> {
        self.procs.get(&pid)
    }

    fn scope_of(&self, pid: i64) -> Option<Scope> {
        self.procs.get(&pid).map(|p| p.scope).or_else(|| self.directives.get(&pid).copied())
    }

    /// Materializes a process known only from a directive.
    fn ensure(&mut self, pid: i64) -> Option<&mut ProcState> {
        if !self.procs.contains_key(&pid) {
            let scope = *self.directives.get(&pid)?;
            self.procs.insert(
                pid,
                ProcState {
                    scope,
                    fds: HashMap::new(),
                },
            );
        }
        self.procs.get_mut(&pid)
    }

    /// Installs an fd binding directly, as if opened before the trace began.
    pub fn bind_fd(&mut self, pid: i64, fd: i64, binding: FdBinding) {
        if let Some(p) = self.ensure(pid) {
            p.fds.insert(fd, binding);
        }
    }

    /// Entities read by Agent-scope processes, in order of first read.
    pub fn context(&self) -> &[String] {
        &self.context
    }

    /// Replaces a scope's table immediately.
    pub fn update_rules(&mut self, table: RuleTable) -> Result<(), UpdateError> {
        self.live.update(table)
    }

    /// Queues a table swap for the first event with `seq >= at_seq`.
    pub fn schedule_update(&mut self, update: Update) {
        let at = self.updates.partition_point(|u| u.at_seq <= update.at_seq);
        self.updates.insert(at, update);
    }

    fn apply_due(&mut self, seq: Option<u64>) {
        while let Some(u) = self.updates.first() {
            if seq.is_some_and(|s| u.at_seq > s) {
                break;
            }
            let u = self.updates.remove(0);
            let (scope, version, at_seq) = (u.table.scope, u.table.version, u.at_seq);
            let outcome = self.live.update(u.table).map_err(|e| e.to_string());
            self.report.updates.push(UpdateRecord {
                at_seq,
                scope,
                version,
                effective_seq: seq,
                outcome,
            });
        }
    }

    fn resolve_path(&self, entities: &[EntityPattern], path: &str) -> Resolved {
        if let Some(pid) = procfs_pid(path) {
            return resolve_kind(entities, EntityKind::Process, Ident::Pid(pid, self.scope_of(pid)));
        }
        let concrete = Concrete::path(path);
        match entities.iter().position(|p| p.kind.is_path_kind() && p.matches(&concrete)) {
            Some(i) => Resolved {
                kind: entities[i].kind,
                pattern: Some(i),
                ident: Ident::Path(path.into()),
            },
            None => Resolved {
                kind: EntityKind::File,
                pattern: None,
                ident: Ident::Path(path.into()),
            },
        }
    }

    fn binding<'p>(proc: &'p ProcState, fd: i64) -> Result<&'p FdBinding, String> {
        proc.fds.get(&fd).ok_or_else(|| format!("unknown fd {fd}"))
    }

    fn resolve_fd(&self, entities: &[EntityPattern], proc: &ProcState, fd: i64) -> Result<Resolved, String> {
        match &Self::binding(proc, fd)?.object {
            Object::Path(p) => Ok(self.resolve_path(entities, p)),
            Object::Socket(None) => Err(format!("socket fd {fd} is not connected")),
            Object::Socket(Some(addr)) => Ok(resolve_kind(entities, EntityKind::Socket, Ident::Addr(addr.clone()))),
        }
    }

    fn fd_free(proc: &ProcState, ret: Option<i64>) -> Result<(), String> {
        match ret {
            Some(fd) if fd >= 0 && proc.fds.contains_key(&fd) => Err(format!("fd {fd} already in use")),
            _ => Ok(()),
        }
    }

    fn classify(&self, entities: &[EntityPattern], pid: i64, proc: &ProcState, ev: &TraceEvent) -> Outcome {
        let judged = |key: String, resolved: Vec<Resolved>| Outcome::Judged { key, resolved };
        let result: Result<Outcome, String> = (|| {
            Ok(match &ev.call {
                Call::Close { fd } => {
                    Self::binding(proc, *fd)?;
                    Outcome::Tracked
                }
                Call::Dup { fd } => {
                    Self::binding(proc, *fd)?;
                    Self::fd_free(proc, ev.ret)?;
                    Outcome::Tracked
                }
                Call::Socket => {
                    Self::fd_free(proc, ev.ret)?;
                    Outcome::Tracked
                }
                Call::Connect { fd, .. } => match Self::binding(proc, *fd)?.object {
                    Object::Socket(_) => Outcome::Tracked,
                    Object::Path(_) => return Err(format!("fd {fd} is not a socket")),
                },
                Call::Open { path, flags } => {
                    Self::fd_free(proc, ev.ret)?;
                    let mut resolved = vec![self.resolve_path(entities, path)];
                    let c = if flags.create {
                        resolved.push(resolve_kind(
                            entities,
                            EntityKind::Directory,
                            Ident::Path(parent_dir(path).into()),
                        ));
                        ",C"
                    } else {
                        ""
                    };
                    judged(format!("open({}{c})", flags.mode()), resolved)
                }
                Call::Io { op, fd, .. } => {
                    let append = op.writes() && Self::binding(proc, *fd)?.append;
                    let key = if append { format!("{}(append)", op.name()) } else { op.name().into() };
                    judged(key, vec![self.resolve_fd(entities, proc, *fd)?])
                }
                Call::Mmap { fd, prot } => judged(prot.key().into(), vec![self.resolve_fd(entities, proc, *fd)?]),
                Call::Sendfile { out_fd, in_fd, .. } => judged(
                    "sendfile".into(),
                    vec![self.resolve_fd(entities, proc, *out_fd)?, self.resolve_fd(entities, proc, *in_fd)?],
                ),
                Call::Lseek { fd, .. } => {
                    let key = if Self::binding(proc, *fd)?.append { "lseek(append)" } else { "lseek" };
                    judged(key.into(), vec![self.resolve_fd(entities, proc, *fd)?])
                }
                Call::Getdents { fd } => judged("getdents".into(), vec![self.resolve_fd(entities, proc, *fd)?]),
                Call::PathOp { op, path } => {
                    if *op == PathOp::Creat {
                        Self::fd_free(proc, ev.ret)?;
                    }
                    let parent = resolve_kind(entities, EntityKind::Directory, Ident::Path(parent_dir(path).into()));
                    judged(op.name().into(), vec![parent])
                }
                Call::Net { fd, .. } => judged(ev.call.name().into(), vec![self.resolve_fd(entities, proc, *fd)?]),
                Call::Execve { path } => judged(
                    "execve".into(),
                    vec![resolve_kind(entities, EntityKind::File, Ident::Path(path.clone()))],
                ),
                Call::Spawn { .. } => {
                    if let Some(child) = ev.ret.filter(|c| *c > 0) {
                        if self.procs.contains_key(&child) {
                            return Err(format!("pid {child} already exists"));
                        }
                    }
                    judged(
                        ev.call.name().into(),
                        vec![resolve_kind(entities, EntityKind::Process, Ident::Pid(pid, Some(proc.scope)))],
                    )
                }
                Call::Stat { path } => judged("stat".into(), vec![self.resolve_path(entities, path)]),
                Call::Fstat { fd } => judged("fstat".into(), vec![self.resolve_fd(entities, proc, *fd)?]),
                Call::Ioctl { fd, .. } => judged("ioctl".into(), vec![self.resolve_fd(entities, proc, *fd)?]),
                Call::Ipc { op, pid: target } => {
                    judged(
                        op.name().into(),
                        vec![resolve_kind(entities, EntityKind::Process, Ident::Pid(*target, self.scope_of(*target)))],
                    )
                }
            })
        })();
        result.unwrap_or_else(Outcome::Error)
    }

    /// Judges one event and updates state.
    pub fn step(&mut self, ev: &TraceEvent) -> &EventRecord {
        self.apply_due(Some(ev.seq));
        let mut record = EventRecord {
            seq: ev.seq,
            pid: ev.pid,
            scope: None,
            syscall: ev.call.name(),
            key: None,
            verdict: Verdict::Allow,
            checks: Vec::new(),
            rule: None,
            provenance: Vec::new(),
            version: None,
            note: None,
        };
        self.ensure(ev.pid);
        let Some(proc) = self.procs.get(&ev.pid) else {
            record.verdict = Verdict::Error(format!("unknown pid {}", ev.pid));
            self.report.events.push(record);
            return self.report.events.last().expect("just pushed");
        };
        let scope = proc.scope;
        record.scope = Some(scope);
        let snapshot = self.live.snapshot();
        let table = &snapshot[scope.index()];
        let entities = &table.entities;

        match self.classify(entities, ev.pid, proc, ev) {
            Outcome::Error(reason) => record.verdict = Verdict::Error(reason),
            Outcome::Tracked => {
                record.note = Some("not mediated");
                self.track(ev);
            }
            Outcome::Judged { key, resolved } => {
                let targets: Vec<Target> = resolved
                    .iter()
                    .map(|r| match r.pattern {
                        Some(i) => Target::Pattern(entities[i].name.clone()),
                        None => Target::Default(r.kind),
                    })
                    .collect();
                let refs: Vec<&Target> = targets.iter().collect();
                let rule = table.lookup(&key, &refs);
                let roles = crate::compile::signature(&key).map(|s| s.roles.iter().map(|r| r.role).collect::<Vec<Role>>());
                record.checks = resolved
                    .iter()
                    .zip(targets)
                    .zip(roles.unwrap_or_default())
                    .map(|((r, target), role)| CheckRecord {
                        role,
                        target,
                        object: r.ident.render(),
                    })
                    .collect();
                record.version = Some(table.version);
                let mut allowed = rule.is_some_and(|r| r.decision == Decision::Allow);
                if let Some(rule) = rule {
                    record.rule = Some(rule.to_string());
                    record.provenance = rule.provenance.clone();
                }
                if scope == Scope::Monitor && !self.options.enforce_monitor {
                    allowed = true;
                    record.note = Some("monitor scope not enforced");
                }
                record.verdict = if allowed { Verdict::Allow } else { Verdict::Deny };
                record.key = Some(key);

                let facets = facets(&ev.call, &resolved, entities);
                self.observe(ev.seq, scope, allowed, &facets);
                if allowed {
                    self.track(ev);
                }
            }
        }
        self.report.events.push(record);
        self.report.events.last().expect("just pushed")
    }

    /// fd-table and process bookkeeping for an allowed event.
    fn track(&mut self, ev: &TraceEvent) {
        let new_fd = ev.ret.filter(|r| *r >= 0);
        match &ev.call {
            Call::Close { fd } => {
                if let Some(p) = self.procs.get_mut(&ev.pid) {
                    p.fds.remove(fd);
                }
            }
            Call::Dup { fd } => {
                if let (Some(p), Some(new)) = (self.procs.get_mut(&ev.pid), new_fd) {
                    if let Some(b) = p.fds.get(fd).cloned() {
                        p.fds.insert(new, b);
                    }
                }
            }
            Call::Socket => {
                if let Some(new) = new_fd {
                    self.bind_fd(ev.pid, new, FdBinding::socket(None));
                }
            }
            Call::Connect { fd, addr } => self.bind_fd(ev.pid, *fd, FdBinding::socket(Some(addr))),
            Call::Open { path, flags } => {
                if let Some(new) = new_fd {
                    self.bind_fd(
                        ev.pid,
                        new,
                        FdBinding {
                            object: Object::Path(path.clone()),
                            append: flags.append,
                        },
                    );
                }
            }
            Call::PathOp { op: PathOp::Creat, path } => {
                if let Some(new) = new_fd {
                    self.bind_fd(ev.pid, new, FdBinding::path(path.clone()));
                }
            }
            Call::Spawn { .. } => {
                if let (Some(child), Some(parent)) = (ev.ret.filter(|c| *c > 0), self.procs.get(&ev.pid)) {
                    let state = ProcState {
                        scope: self.directives.get(&child).copied().unwrap_or(parent.scope),
                        fds: parent.fds.clone(),
                    };
                    self.procs.insert(child, state);
                }
            }
            _ => {}
        }
    }

    /// Temporal monitors, context growth, and leak detection.
    fn observe(&mut self, seq: u64, scope: Scope, allowed: bool, facets: &[Facet<'_>]) {
        for (spec, state) in self.specs.iter().zip(&mut self.temporal) {
            let body = facets.iter().any(|f| spec.body.matches(scope, f));
            let trigger = facets.iter().any(|f| spec.trigger.matches(scope, f));
            match spec.modality {
                Modality::AlwaysForbid => {
                    if body {
                        if let Some(t) = state.first_trigger {
                            let v = TemporalViolation {
                                rule: spec.name.clone(),
                                trigger_seq: t,
                                seq,
                            };
                            if allowed {
                                self.report.violations.push(v);
                            } else {
                                self.report.warnings.push(v);
                            }
                        }
                    }
                    if trigger && allowed && state.first_trigger.is_none() {
                        state.first_trigger = Some(seq);
                    }
                }
                Modality::EventuallyRequire => {
                    if allowed && body {
                        state.pending.clear();
                    }
                    if allowed && trigger {
                        state.pending.push(seq);
                    }
                }
            }
        }
        if !allowed || scope != Scope::Agent {
            return;
        }
        for f in facets.iter().filter(|f| f.perm == Permission::Read && f.kind == EntityKind::File) {
            if let Some(path) = f.object.path {
                if self.in_context.insert(path.to_string()) {
                    self.context.push(path.to_string());
                }
            }
        }
        for f in facets.iter().filter(|f| f.perm == Permission::Write && f.kind == EntityKind::Socket) {
            let sink = f.object.addr.unwrap_or_default();
            for entity in &self.context {
                if self.leaked.insert(entity.clone()) {
                    self.report.leaks.push(LeakEvent {
                        seq,
                        entity: entity.clone(),
                        sink: sink.to_string(),
                    });
                }
            }
        }
    }

    /// Applies remaining updates and closes open obligations.
    pub fn finish(mut self) -> Report {
        self.apply_due(None);
        for (spec, state) in self.specs.iter().zip(&self.temporal) {
            for t in &state.pending {
                self.report.unfulfilled.push(Obligation {
                    rule: spec.name.clone(),
                    trigger_seq: *t,
                });
            }
        }
        self.report
    }
}

/// Mapping-table cells an event exercises.
fn facets<'a>(call: &Call, resolved: &'a [Resolved], entities: &'a [EntityPattern]) -> Vec<Facet<'a>> {
    use EntityKind::*;
    use Permission::*;
    let mut out = Vec::new();
    let mut push = |cell: &'static str, kind: EntityKind, perm: Permission, r: &'a Resolved| {
        if r.kind == kind {
            out.push(Facet {
                cell,
                kind,
                perm,
                pattern: r.pattern.map(|i| &entities[i]),
                object: r.ident.concrete(),
            });
        }
    };
    let Some(first) = resolved.first() else {
        return out;
    };
    match call {
        Call::Open { flags, .. } => {
            push("procfs", Process, Visible, first);
            if flags.append {
                push("open-with-append", File, Append, first);
            }
        }
        Call::Io { op, .. } => {
            if op.writes() {
                push(op.name(), File, Write, first);
            } else {
                push(op.name(), File, Read, first);
                push("procfs", Process, Visible, first);
            }
        }
        Call::Mmap { prot, .. } => {
            if prot.reads() {
                push("mmap(PROT_READ)", File, Read, first);
            }
            if prot.writes() {
                push("mmap(PROT_WRITE)", File, Write, first);
            }
        }
        Call::Sendfile { .. } => {
            if let Some(input) = resolved.get(1) {
                push("sendfile(in)", File, Read, input);
            }
            push("sendfile(out)", File, Write, first);
            push("sendfile(out)", Socket, Write, first);
        }
        Call::Lseek { .. } => push("lseek", File, Append, first),
        Call::Getdents { .. } => push("getdents", Directory, Read, first),
        Call::PathOp { op, .. } => {
            push(op.name(), Directory, Write, first);
            if matches!(op, PathOp::Mkdir | PathOp::Creat) {
                push(op.name(), Directory, Append, first);
            }
        }
        Call::Net { op, .. } => push(op.name(), Socket, if op.sends() { Write } else { Read }, first),
        Call::Execve { .. } => push("execve", File, NoExecute, first),
        Call::Spawn { .. } => push(call.name(), Process, NoExecute, first),
        Call::Stat { .. } | Call::Fstat { .. } => {
            if first.kind == Process {
                push("procfs", Process, Visible, first);
            } else {
                push(call.name(), first.kind, Visible, first);
            }
        }
        Call::Ioctl { .. } => push("ioctl", Device, Write, first),
        Call::Ipc { op, .. } => push(op.name(), Process, Write, first),
        Call::Close { .. } | Call::Dup { .. } | Call::Socket | Call::Connect { .. } => {}
    }
    out
}

/// Replays `trace` from a fresh state.
pub fn replay(compiled: &Compiled, trace: &Trace, updates: Vec<Update>, options: ReplayOptions) -> Report {
    let mut m = Monitor::new(compiled.clone(), options);
    for (pid, scope) in &trace.scopes {
        m.set_scope(*pid, *scope);
    }
    for u in updates {
        m.schedule_update(u);
    }
    for ev in &trace.events {
        m.step(ev);
    }
    m.finish()
}
