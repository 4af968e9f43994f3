//! Generators and reference oracles shared by the integration tests.
//!
//! The oracles work from the model (grants, defaults, glob matching) and a
//! hand-written requirement table. They never consult compiled rule tables.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use claw_core::lang::{
    Action, Builtin, Constraint, EventMatcher, EventTarget, Guard, Modality, Policy, PolicyBody, Relation,
    StaticFormula, TemporalRule,
};
use claw_core::model::{
    AttributeMatcher, Concrete, EntityKind, EntityPattern, Grant, Matcher, PermSet, Permission, Scope,
    SecurityModel,
};
use claw_core::monitor::{Call, FdBinding, IoOp, IpcOp, NetOp, OpenFlags, PathOp, Prot, TraceEvent};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Every `.claw` file of the round-trip corpus, sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(fixtures().join("policies"))
        .expect("policy corpus")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "claw"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

// ---------------------------------------------------------------- models

pub const FILE_GLOBS: &[&str] = &["/secure/*", "/home/*", "/home/*/notes/*", "/tmp/*.sh", "/tmp/*", "/etc/passwd", "/data/*", "*"];
pub const DIR_GLOBS: &[&str] = &["/tmp", "/home/*", "/srv", "/data", "/"];
pub const DEV_GLOBS: &[&str] = &["/dev/tty*", "/dev/null", "/dev/*"];
pub const ADDR_GLOBS: &[&str] = &["*:443", "api.internal:*", "*", "10.0.0.*:22"];
pub const SCOPE_GLOBS: &[&str] = &["Agent", "Sandbox", "Monitor", "*", "*o*"];

pub const PATHS: &[&str] = &[
    "/secure/key", "/secure/id_rsa", "/home/a", "/home/a/notes/n1", "/tmp/run.sh", "/tmp/out", "/etc/passwd",
    "/data/x", "/var/y", "/proc/100", "/proc/200/status", "/proc/999", "/dev/tty1", "/dev/null", "/srv", "/srv/f",
    "/tmp", "/data", "/home/b/c", "/",
];
pub const ADDRS: &[&str] = &["evil.com:443", "api.internal:80", "10.0.0.5:22", "x:1"];

pub fn random_perms(rng: &mut TestRng) -> PermSet {
    PermSet::from_bits(rng.gen_range(0..32))
}

fn random_pattern(rng: &mut TestRng, index: usize) -> EntityPattern {
    let kind = *EntityKind::ALL.choose(rng).unwrap();
    let mut attrs = Vec::new();
    match kind {
        EntityKind::File => attrs.push(AttributeMatcher::glob("path", *FILE_GLOBS.choose(rng).unwrap())),
        EntityKind::Directory => attrs.push(AttributeMatcher::glob("path", *DIR_GLOBS.choose(rng).unwrap())),
        EntityKind::Device => attrs.push(AttributeMatcher::glob("path", *DEV_GLOBS.choose(rng).unwrap())),
        EntityKind::Socket => attrs.push(AttributeMatcher::glob("addr", *ADDR_GLOBS.choose(rng).unwrap())),
        EntityKind::Process => {
            if rng.gen_bool(0.6) {
                let lo = rng.gen_range(0..300);
                let m = if rng.gen_bool(0.3) {
                    Matcher::Int(*[100, 200, 300].choose(rng).unwrap())
                } else {
                    Matcher::IntRange(lo, lo + rng.gen_range(0..300))
                };
                attrs.push(AttributeMatcher::new("pid", m));
            }
            if attrs.is_empty() || rng.gen_bool(0.4) {
                attrs.push(AttributeMatcher::glob("scope", *SCOPE_GLOBS.choose(rng).unwrap()));
            }
        }
    }
    if matches!(kind, EntityKind::File | EntityKind::Directory) {
        for label in ["credential", "sensitive"] {
            if rng.gen_bool(0.3) {
                attrs.push(AttributeMatcher::flag(label, rng.gen_bool(0.8)));
            }
        }
    }
    EntityPattern {
        name: format!("P{index}"),
        kind,
        attrs,
        declaration_index: index,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub max_patterns: usize,
    /// Build grants so that Sandbox ⊆ Agent ⊆ Monitor holds everywhere.
    pub hierarchical: bool,
    pub policies: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            max_patterns: 8,
            hierarchical: false,
            policies: false,
        }
    }
}

/// Three per-scope sets, nested when `hierarchical`.
fn scope_sets(rng: &mut TestRng, hierarchical: bool) -> [PermSet; 3] {
    if hierarchical {
        let s = random_perms(rng).intersection(random_perms(rng));
        let a = s.union(random_perms(rng).intersection(random_perms(rng)));
        let m = a.union(random_perms(rng).intersection(random_perms(rng)));
        [s, a, m]
    } else {
        [random_perms(rng), random_perms(rng), random_perms(rng)]
    }
}

pub fn random_model(rng: &mut TestRng, shape: ModelShape) -> SecurityModel {
    let n = rng.gen_range(0..=shape.max_patterns);
    let patterns: Vec<EntityPattern> = (0..n).map(|i| random_pattern(rng, i)).collect();
    let mut grants = Vec::new();
    for p in &patterns {
        if rng.gen_bool(0.15) {
            continue;
        }
        let sets = scope_sets(rng, shape.hierarchical);
        for (scope, set) in Scope::ALL.into_iter().zip(sets) {
            if set.is_empty() && rng.gen_bool(0.5) {
                continue;
            }
            // split some sets over two grants to exercise the union rule
            if set.len() > 1 && rng.gen_bool(0.3) {
                let first: PermSet = set.iter().take(1).collect();
                grants.push(Grant { scope, pattern: p.name.clone(), perms: first });
                grants.push(Grant { scope, pattern: p.name.clone(), perms: set.difference(first) });
            } else {
                grants.push(Grant { scope, pattern: p.name.clone(), perms: set });
            }
        }
    }
    grants.shuffle(rng);
    let defaults = if rng.gen_bool(0.3) { [PermSet::EMPTY; 3] } else { scope_sets(rng, shape.hierarchical) };
    let mut model = SecurityModel {
        patterns,
        grants,
        defaults,
        policies: Vec::new(),
    };
    if shape.policies {
        model.policies = random_policies(rng, &model);
    }
    model
}

fn random_guard(rng: &mut TestRng) -> Guard {
    let kind = if rng.gen_bool(0.5) { Some(*EntityKind::ALL.choose(rng).unwrap()) } else { None };
    let mut attrs = Vec::new();
    match rng.gen_range(0..4) {
        0 => attrs.push(AttributeMatcher::flag("credential", true)),
        1 => attrs.push(AttributeMatcher::flag("sensitive", rng.gen_bool(0.7))),
        2 if kind.is_none_or(|k| k.is_path_kind()) => {
            attrs.push(AttributeMatcher::glob("path", *FILE_GLOBS.choose(rng).unwrap()))
        }
        _ => {}
    }
    Guard { kind, attrs }
}

pub fn random_policies(rng: &mut TestRng, model: &SecurityModel) -> Vec<Policy> {
    let mut out = Vec::new();
    for b in [Builtin::NoExecAgent, Builtin::CredentialVisibility] {
        if rng.gen_bool(0.35) {
            out.push(Policy {
                name: format!("b_{}", b.id()),
                body: PolicyBody::Builtin(b),
            });
        }
    }
    for i in 0..rng.gen_range(0..3) {
        let relation = *[Relation::Equals, Relation::SubsetOf, Relation::Contains, Relation::Excludes]
            .choose(rng)
            .unwrap();
        out.push(Policy {
            name: format!("s{i}"),
            body: PolicyBody::Static(StaticFormula {
                var: "x".into(),
                guard: random_guard(rng),
                constraint: Constraint {
                    scope: *Scope::ALL.choose(rng).unwrap(),
                    relation,
                    perms: random_perms(rng).intersection(random_perms(rng)),
                },
            }),
        });
    }
    if !model.patterns.is_empty() {
        for i in 0..rng.gen_range(0..2) {
            out.push(Policy {
                name: format!("t{i}"),
                body: PolicyBody::Temporal(random_temporal(rng, model)),
            });
        }
    }
    out
}

pub fn random_target(rng: &mut TestRng, model: &SecurityModel) -> EventTarget {
    if !model.patterns.is_empty() && rng.gen_bool(0.6) {
        return EventTarget::Pattern(model.patterns.choose(rng).unwrap().name.clone());
    }
    let kind = *EntityKind::ALL.choose(rng).unwrap();
    let mut attrs = Vec::new();
    match (kind, rng.gen_range(0..3)) {
        (_, 0) => attrs.push(AttributeMatcher::flag("sensitive", rng.gen_bool(0.7))),
        (EntityKind::Socket, _) => attrs.push(AttributeMatcher::glob("addr", *ADDR_GLOBS.choose(rng).unwrap())),
        (EntityKind::Process, _) => attrs.push(AttributeMatcher::glob("scope", *SCOPE_GLOBS.choose(rng).unwrap())),
        (k, 1) if k.is_path_kind() => attrs.push(AttributeMatcher::glob("path", *FILE_GLOBS.choose(rng).unwrap())),
        _ => {}
    }
    EventTarget::Attrs { kind, attrs }
}

/// Actions with a non-empty mapping cell for `kind`.
pub fn actions_for(kind: EntityKind) -> &'static [Action] {
    use Action::*;
    match kind {
        EntityKind::File => &[Reads, Writes, Appends, Execs, Stats],
        EntityKind::Directory => &[Reads, Writes, Appends, Stats],
        EntityKind::Socket => &[Reads, Writes, Stats],
        EntityKind::Device => &[Writes, Stats],
        EntityKind::Process => &[Writes, Execs, Stats],
    }
}

pub fn random_matcher(rng: &mut TestRng, model: &SecurityModel) -> EventMatcher {
    let scope = if rng.gen_bool(0.7) { Scope::Agent } else { *Scope::ALL.choose(rng).unwrap() };
    let target = random_target(rng, model);
    let kind = match &target {
        EventTarget::Pattern(name) => model.pattern(name).map_or(EntityKind::File, |p| p.kind),
        EventTarget::Attrs { kind, .. } => *kind,
    };
    // mostly actions that can occur on the kind, sometimes any
    let action = if rng.gen_bool(0.9) {
        *actions_for(kind).choose(rng).unwrap()
    } else {
        *Action::ALL.choose(rng).unwrap()
    };
    EventMatcher { scope, action, target }
}

pub fn random_temporal(rng: &mut TestRng, model: &SecurityModel) -> TemporalRule {
    TemporalRule {
        trigger: random_matcher(rng, model),
        modality: if rng.gen_bool(0.5) { Modality::AlwaysForbid } else { Modality::EventuallyRequire },
        body: random_matcher(rng, model),
    }
}

// ---------------------------------------------------------------- hierarchy oracle

/// Brute-force hierarchy check: (subject, lower, upper) for every failing pair.
pub fn hierarchy_oracle(model: &SecurityModel) -> Vec<(String, Scope, Scope)> {
    let union = |name: &str, scope: Scope| {
        let mut set = PermSet::EMPTY;
        for g in &model.grants {
            if g.pattern == name && g.scope == scope {
                for p in g.perms.iter() {
                    set.insert(p);
                }
            }
        }
        set
    };
    let mut subjects: Vec<(String, [PermSet; 3])> = model
        .patterns
        .iter()
        .map(|p| (p.name.clone(), Scope::ALL.map(|s| union(&p.name, s))))
        .collect();
    subjects.push(("defaults".into(), model.defaults));
    let mut out = Vec::new();
    for (name, sets) in subjects {
        for (lo, hi) in [(0, 1), (1, 2)] {
            let escapes = Permission::ALL.iter().any(|p| sets[lo].contains(*p) && !sets[hi].contains(*p));
            if escapes {
                out.push((name.clone(), Scope::ALL[lo], Scope::ALL[hi]));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- decision oracle

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Allow,
    Deny,
    Error,
}

/// An fd as the oracle sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Obj {
    Path(String),
    Socket(Option<String>),
}

#[derive(Debug, Clone)]
pub struct OracleFd {
    pub obj: Obj,
    pub append: bool,
}

impl OracleFd {
    pub fn binding(&self) -> FdBinding {
        match &self.obj {
            Obj::Path(p) => FdBinding {
                append: self.append,
                ..FdBinding::path(p.clone())
            },
            Obj::Socket(a) => FdBinding::socket(a.as_deref()),
        }
    }
}

/// The world the oracle judges one event in.
pub struct World<'a> {
    pub model: &'a SecurityModel,
    pub scopes: &'a HashMap<i64, Scope>,
    pub fds: &'a HashMap<i64, HashMap<i64, OracleFd>>,
}

/// What an argument denotes: its kind, the first matching pattern, the object.
#[derive(Debug, Clone)]
pub struct Hit {
    pub kind: EntityKind,
    pub pattern: Option<String>,
    pub path: Option<String>,
    pub addr: Option<String>,
    pub pid: Option<i64>,
    pub pid_scope: Option<Scope>,
}

fn proc_number(path: &str) -> Option<i64> {
    let rest = path.strip_prefix("/proc/")?;
    let head = rest.split('/').next().unwrap_or("");
    if !head.is_empty() && head.chars().all(|c| c.is_ascii_digit()) {
        head.parse().ok()
    } else {
        None
    }
}

fn containing_dir(path: &str) -> String {
    let p = path.trim_end_matches('/');
    match p.rfind('/') {
        None | Some(0) => "/".to_string(),
        Some(i) => p[..i].to_string(),
    }
}

impl<'a> World<'a> {
    fn scope_of(&self, pid: i64) -> Option<Scope> {
        self.scopes.get(&pid).copied()
    }

    pub fn process_hit(&self, pid: i64) -> Hit {
        let scope = self.scope_of(pid);
        let c = Concrete::process(pid, scope);
        Hit {
            kind: EntityKind::Process,
            pattern: self.model.resolve(EntityKind::Process, &c).map(|p| p.name.clone()),
            path: None,
            addr: None,
            pid: Some(pid),
            pid_scope: scope,
        }
    }

    pub fn path_hit(&self, path: &str) -> Hit {
        if let Some(pid) = proc_number(path) {
            return self.process_hit(pid);
        }
        let c = Concrete::path(path);
        let best = [EntityKind::File, EntityKind::Directory, EntityKind::Device]
            .into_iter()
            .filter_map(|k| self.model.resolve(k, &c))
            .min_by_key(|p| p.declaration_index);
        Hit {
            kind: best.map_or(EntityKind::File, |p| p.kind),
            pattern: best.map(|p| p.name.clone()),
            path: Some(path.into()),
            addr: None,
            pid: None,
            pid_scope: None,
        }
    }

    pub fn kind_hit(&self, kind: EntityKind, path: &str) -> Hit {
        let c = Concrete::path(path);
        Hit {
            kind,
            pattern: self.model.resolve(kind, &c).map(|p| p.name.clone()),
            path: Some(path.into()),
            addr: None,
            pid: None,
            pid_scope: None,
        }
    }

    fn socket_hit(&self, addr: &str) -> Hit {
        let c = Concrete::addr(addr);
        Hit {
            kind: EntityKind::Socket,
            pattern: self.model.resolve(EntityKind::Socket, &c).map(|p| p.name.clone()),
            path: None,
            addr: Some(addr.into()),
            pid: None,
            pid_scope: None,
        }
    }

    fn fd(&self, pid: i64, fd: i64) -> Option<&OracleFd> {
        self.fds.get(&pid)?.get(&fd)
    }

    /// Entity behind an fd, or `None` for an Error.
    pub fn fd_hit(&self, pid: i64, fd: i64) -> Option<(Hit, bool)> {
        let f = self.fd(pid, fd)?;
        match &f.obj {
            Obj::Path(p) => Some((self.path_hit(p), f.append)),
            Obj::Socket(Some(a)) => Some((self.socket_hit(a), false)),
            Obj::Socket(None) => None,
        }
    }

    pub fn perms(&self, hit: &Hit, scope: Scope) -> PermSet {
        match &hit.pattern {
            Some(name) => self.model.granted(name, scope),
            None => self.model.default_perms(scope),
        }
    }
}

fn has(set: PermSet, p: Permission) -> bool {
    set.contains(p)
}

fn any_of(set: PermSet, ps: &[Permission]) -> bool {
    ps.iter().any(|p| set.contains(*p))
}

/// Expected verdict for one event, from the model alone.
pub fn oracle_verdict(w: &World<'_>, ev: &TraceEvent) -> Expect {
    use EntityKind::*;
    use Permission::*;
    let Some(scope) = w.scope_of(ev.pid) else {
        return Expect::Error;
    };
    let verdict = |ok: bool| if ok { Expect::Allow } else { Expect::Deny };
    let fresh_fd = |ret: Option<i64>| ret.is_none_or(|r| r < 0 || w.fd(ev.pid, r).is_none());
    macro_rules! fd_or_error {
        ($fd:expr) => {
            match w.fd_hit(ev.pid, $fd) {
                Some(x) => x,
                None => return Expect::Error,
            }
        };
    }
    match &ev.call {
        Call::Close { fd } => {
            if w.fd(ev.pid, *fd).is_some() { Expect::Allow } else { Expect::Error }
        }
        Call::Dup { fd } => {
            if w.fd(ev.pid, *fd).is_some() && fresh_fd(ev.ret) { Expect::Allow } else { Expect::Error }
        }
        Call::Socket => {
            if fresh_fd(ev.ret) { Expect::Allow } else { Expect::Error }
        }
        Call::Connect { fd, .. } => match w.fd(ev.pid, *fd) {
            Some(OracleFd { obj: Obj::Socket(_), .. }) => Expect::Allow,
            _ => Expect::Error,
        },
        Call::Open { path, flags } => {
            if !fresh_fd(ev.ret) {
                return Expect::Error;
            }
            let hit = w.path_hit(path);
            let p = w.perms(&hit, scope);
            let read_only = flags.read && !flags.write && !flags.append;
            let target_ok = match hit.kind {
                Process => read_only && has(p, Visible),
                Directory => read_only && has(p, Read),
                File | Device => {
                    (!flags.read || has(p, Read))
                        && if flags.append {
                            any_of(p, &[Write, Append])
                        } else {
                            !flags.write || has(p, Write)
                        }
                }
                Socket => false,
            };
            let parent_ok = !flags.create || {
                let parent = w.kind_hit(Directory, &containing_dir(path));
                any_of(w.perms(&parent, scope), &[Write, Append])
            };
            verdict(target_ok && parent_ok)
        }
        Call::Io { op, fd, .. } => {
            let (hit, append) = fd_or_error!(*fd);
            let p = w.perms(&hit, scope);
            let writes = matches!(op, IoOp::Write | IoOp::Pwrite | IoOp::Writev);
            verdict(match (hit.kind, writes) {
                (File, false) => has(p, Read),
                (Process, false) => has(p, Visible),
                (File, true) if append => any_of(p, &[Write, Append]),
                (File, true) => has(p, Write),
                _ => false,
            })
        }
        Call::Mmap { fd, prot } => {
            let (hit, _) = fd_or_error!(*fd);
            let p = w.perms(&hit, scope);
            let need: &[Permission] = match prot {
                Prot::Read => &[Read],
                Prot::Write => &[Write],
                Prot::ReadWrite => &[Read, Write],
            };
            verdict(hit.kind == File && need.iter().all(|n| has(p, *n)))
        }
        Call::Sendfile { out_fd, in_fd, .. } => {
            let (out, _) = fd_or_error!(*out_fd);
            let (input, _) = fd_or_error!(*in_fd);
            let out_ok = matches!(out.kind, File | Socket) && has(w.perms(&out, scope), Write);
            let in_ok = input.kind == File && has(w.perms(&input, scope), Read);
            verdict(out_ok && in_ok)
        }
        Call::Lseek { fd, .. } => {
            let (hit, append) = fd_or_error!(*fd);
            verdict(!append && hit.kind == File && any_of(w.perms(&hit, scope), &[Read, Write]))
        }
        Call::Getdents { fd } => {
            let (hit, _) = fd_or_error!(*fd);
            verdict(hit.kind == Directory && has(w.perms(&hit, scope), Read))
        }
        Call::PathOp { op, path } => {
            if *op == PathOp::Creat && !fresh_fd(ev.ret) {
                return Expect::Error;
            }
            let parent = w.kind_hit(Directory, &containing_dir(path));
            let p = w.perms(&parent, scope);
            verdict(match op {
                PathOp::Mkdir | PathOp::Creat => any_of(p, &[Write, Append]),
                PathOp::Rmdir | PathOp::Unlink => has(p, Write),
            })
        }
        Call::Net { op, fd, .. } => {
            let (hit, _) = fd_or_error!(*fd);
            let need = if matches!(op, NetOp::Sendto | NetOp::Sendmsg) { Write } else { Read };
            verdict(hit.kind == Socket && has(w.perms(&hit, scope), need))
        }
        Call::Execve { path } => {
            let hit = w.kind_hit(File, path);
            let p = w.perms(&hit, scope);
            verdict(has(p, Read) && !has(p, NoExecute))
        }
        Call::Spawn { .. } => {
            let me = w.process_hit(ev.pid);
            let p = w.perms(&me, scope);
            verdict(!has(p, NoExecute) && any_of(p, &[Read, Write, Append, Visible]))
        }
        Call::Stat { path } => {
            let hit = w.path_hit(path);
            verdict(hit.kind != Socket && has(w.perms(&hit, scope), Visible))
        }
        Call::Fstat { fd } => {
            let (hit, _) = fd_or_error!(*fd);
            verdict(has(w.perms(&hit, scope), Visible))
        }
        Call::Ioctl { fd, .. } => {
            let (hit, _) = fd_or_error!(*fd);
            verdict(hit.kind == Device && has(w.perms(&hit, scope), Write))
        }
        Call::Ipc { pid, .. } => {
            let hit = w.process_hit(*pid);
            verdict(has(w.perms(&hit, scope), Write))
        }
    }
}

// ---------------------------------------------------------------- events

pub fn random_fd_table(rng: &mut TestRng) -> HashMap<i64, OracleFd> {
    let mut fds = HashMap::new();
    for fd in 3..=10 {
        let obj = match rng.gen_range(0..10) {
            0..=6 => Obj::Path(PATHS.choose(rng).unwrap().to_string()),
            7 => Obj::Socket(None),
            _ => Obj::Socket(Some(ADDRS.choose(rng).unwrap().to_string())),
        };
        let append = matches!(obj, Obj::Path(_)) && rng.gen_bool(0.25);
        fds.insert(fd, OracleFd { obj, append });
    }
    fds
}

fn random_flags(rng: &mut TestRng) -> OpenFlags {
    loop {
        let f = OpenFlags {
            read: rng.gen_bool(0.6),
            write: rng.gen_bool(0.4),
            append: rng.gen_bool(0.25),
            create: rng.gen_bool(0.2),
        };
        if f.read || f.write || f.append {
            return f;
        }
    }
}

/// A random call. fds range over 2..=11 so some are unknown.
pub fn random_call(rng: &mut TestRng) -> Call {
    let fd = |rng: &mut TestRng| rng.gen_range(2..=11);
    let path = |rng: &mut TestRng| PATHS.choose(rng).unwrap().to_string();
    match rng.gen_range(0..19) {
        0 => Call::Open { path: path(rng), flags: random_flags(rng) },
        1 | 2 => Call::Io { op: *IoOp::ALL.choose(rng).unwrap(), fd: fd(rng), len: 16 },
        3 => Call::Mmap {
            fd: fd(rng),
            prot: *[Prot::Read, Prot::Write, Prot::ReadWrite].choose(rng).unwrap(),
        },
        4 => Call::Sendfile { out_fd: fd(rng), in_fd: fd(rng), len: 16 },
        5 => Call::Lseek { fd: fd(rng), offset: 0 },
        6 => Call::Getdents { fd: fd(rng) },
        7 => Call::PathOp { op: *PathOp::ALL.choose(rng).unwrap(), path: path(rng) },
        8 | 9 => Call::Net { op: *NetOp::ALL.choose(rng).unwrap(), fd: fd(rng), len: 16 },
        10 => Call::Execve { path: path(rng) },
        11 => Call::Spawn { clone: rng.gen() },
        12 => Call::Stat { path: path(rng) },
        13 => Call::Fstat { fd: fd(rng) },
        14 => Call::Ioctl { fd: fd(rng), cmd: "TCGETS".into() },
        15 => Call::Ipc {
            op: *IpcOp::ALL.choose(rng).unwrap(),
            pid: *[100, 200, 300, 999].choose(rng).unwrap(),
        },
        16 => Call::Close { fd: fd(rng) },
        17 => Call::Dup { fd: fd(rng) },
        _ => Call::Connect { fd: fd(rng), addr: ADDRS.choose(rng).unwrap().to_string() },
    }
}

pub const PIDS: [(i64, Scope); 3] = [(100, Scope::Sandbox), (200, Scope::Agent), (300, Scope::Monitor)];

// ---------------------------------------------------------------- temporal oracle

/// A (kind, permission) cell an event exercises, with the entity it hit.
#[derive(Debug, Clone)]
pub struct Touch {
    pub kind: EntityKind,
    pub perm: Permission,
    pub hit: Hit,
}

/// Cells of the mapping table exercised by one event, derived from the
/// syscall vocabulary alone.
pub fn touches(w: &World<'_>, ev: &TraceEvent) -> Vec<Touch> {
    use EntityKind::*;
    use Permission::*;
    let mut out = Vec::new();
    let mut add = |kind: EntityKind, perm: Permission, hit: &Hit| {
        if hit.kind == kind {
            out.push(Touch { kind, perm, hit: hit.clone() });
        }
    };
    let fd = |fd: i64| w.fd_hit(ev.pid, fd).map(|(h, _)| h);
    match &ev.call {
        Call::Open { path, flags } => {
            let h = w.path_hit(path);
            add(Process, Visible, &h);
            if flags.append {
                add(File, Append, &h);
            }
        }
        Call::Io { op, fd: f, .. } => {
            if let Some(h) = fd(*f) {
                if matches!(op, IoOp::Write | IoOp::Pwrite | IoOp::Writev) {
                    add(File, Write, &h);
                } else {
                    add(File, Read, &h);
                    add(Process, Visible, &h);
                }
            }
        }
        Call::Mmap { fd: f, prot } => {
            if let Some(h) = fd(*f) {
                if matches!(prot, Prot::Read | Prot::ReadWrite) {
                    add(File, Read, &h);
                }
                if matches!(prot, Prot::Write | Prot::ReadWrite) {
                    add(File, Write, &h);
                }
            }
        }
        Call::Sendfile { out_fd, in_fd, .. } => {
            if let (Some(o), Some(i)) = (fd(*out_fd), fd(*in_fd)) {
                add(File, Read, &i);
                add(File, Write, &o);
                add(Socket, Write, &o);
            }
        }
        Call::Lseek { fd: f, .. } => {
            if let Some(h) = fd(*f) {
                add(File, Append, &h);
            }
        }
        Call::Getdents { fd: f } => {
            if let Some(h) = fd(*f) {
                add(Directory, Read, &h);
            }
        }
        Call::PathOp { op, path } => {
            let parent = w.kind_hit(Directory, &containing_dir(path));
            add(Directory, Write, &parent);
            if matches!(op, PathOp::Mkdir | PathOp::Creat) {
                add(Directory, Append, &parent);
            }
        }
        Call::Net { op, fd: f, .. } => {
            if let Some(h) = fd(*f) {
                let sends = matches!(op, NetOp::Sendto | NetOp::Sendmsg);
                add(Socket, if sends { Write } else { Read }, &h);
            }
        }
        Call::Execve { path } => add(File, NoExecute, &w.kind_hit(File, path)),
        Call::Spawn { .. } => add(Process, NoExecute, &w.process_hit(ev.pid)),
        Call::Stat { path } => {
            let h = w.path_hit(path);
            add(h.kind, Visible, &h);
        }
        Call::Fstat { fd: f } => {
            if let Some(h) = fd(*f) {
                add(h.kind, Visible, &h);
            }
        }
        Call::Ioctl { fd: f, .. } => {
            if let Some(h) = fd(*f) {
                add(Device, Write, &h);
            }
        }
        Call::Ipc { pid, .. } => add(Process, Write, &w.process_hit(*pid)),
        Call::Close { .. } | Call::Dup { .. } | Call::Socket | Call::Connect { .. } => {}
    }
    out
}

fn glob(pattern: &str, value: &str) -> bool {
    // textbook NFA simulation, independent of the library matcher
    let p: Vec<char> = pattern.chars().collect();
    let mut states = vec![false; p.len() + 1];
    states[0] = true;
    let close = |s: &mut Vec<bool>| {
        for i in 0..p.len() {
            if s[i] && p[i] == '*' {
                s[i + 1] = true;
            }
        }
    };
    close(&mut states);
    for c in value.chars() {
        let mut next = vec![false; p.len() + 1];
        for i in 0..p.len() {
            if states[i] {
                if p[i] == '*' {
                    next[i] = true;
                } else if p[i] == c {
                    next[i + 1] = true;
                }
            }
        }
        close(&mut next);
        states = next;
    }
    states[p.len()]
}

pub fn nfa_glob(pattern: &str, value: &str) -> bool {
    glob(pattern, value)
}

fn attr_holds(model: &SecurityModel, hit: &Hit, a: &AttributeMatcher) -> bool {
    if a.key == "credential" || a.key == "sensitive" {
        let own = hit
            .pattern
            .as_ref()
            .and_then(|n| model.pattern(n))
            .is_some_and(|p| p.attrs.iter().any(|x| x.key == a.key && x.matcher == Matcher::Bool(true)));
        return a.matcher == Matcher::Bool(own);
    }
    match (a.key.as_str(), &a.matcher) {
        ("path", Matcher::Glob(g)) => hit.path.as_deref().is_some_and(|v| glob(g, v)),
        ("addr", Matcher::Glob(g)) => hit.addr.as_deref().is_some_and(|v| glob(g, v)),
        ("scope", Matcher::Glob(g)) => hit.pid_scope.is_some_and(|s| glob(g, s.as_str())),
        ("pid", Matcher::Int(n)) => hit.pid == Some(*n),
        ("pid", Matcher::IntRange(lo, hi)) => hit.pid.is_some_and(|v| *lo <= v && v <= *hi),
        _ => false,
    }
}

/// Whether an event by a `scope` process satisfies an event matcher.
pub fn event_matches(model: &SecurityModel, m: &EventMatcher, scope: Scope, touches: &[Touch]) -> bool {
    if scope != m.scope {
        return false;
    }
    let perm = m.action.permission();
    let kind = match &m.target {
        EventTarget::Pattern(name) => match model.pattern(name) {
            Some(p) => p.kind,
            None => return false,
        },
        EventTarget::Attrs { kind, .. } => *kind,
    };
    touches.iter().any(|t| {
        t.perm == perm
            && t.kind == kind
            && match &m.target {
                EventTarget::Pattern(name) => t.hit.pattern.as_deref() == Some(name.as_str()),
                EventTarget::Attrs { attrs, .. } => attrs.iter().all(|a| attr_holds(model, &t.hit, a)),
            }
    })
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct TemporalFindings {
    /// (rule, first trigger seq, body seq)
    pub violations: Vec<(String, u64, u64)>,
    pub warnings: Vec<(String, u64, u64)>,
    /// (rule, trigger seq)
    pub unfulfilled: Vec<(String, u64)>,
    /// (seq, entity path)
    pub leaks: Vec<(u64, String)>,
}

/// Pairwise-scan oracle over a judged trace: `events[i]` with its caller
/// scope and whether it was allowed.
pub fn temporal_oracle(
    model: &SecurityModel,
    rules: &[(String, TemporalRule)],
    judged: &[(u64, Scope, bool, Vec<Touch>)],
) -> TemporalFindings {
    let mut f = TemporalFindings::default();
    for (name, rule) in rules {
        let trig: Vec<(u64, bool)> = judged
            .iter()
            .filter(|(_, s, _, t)| event_matches(model, &rule.trigger, *s, t))
            .map(|(seq, _, ok, _)| (*seq, *ok))
            .collect();
        let body: Vec<(u64, bool)> = judged
            .iter()
            .filter(|(_, s, _, t)| event_matches(model, &rule.body, *s, t))
            .map(|(seq, _, ok, _)| (*seq, *ok))
            .collect();
        match rule.modality {
            Modality::AlwaysForbid => {
                let pairs: Vec<(u64, u64, bool)> = trig
                    .iter()
                    .filter(|(_, ok)| *ok)
                    .flat_map(|(t, _)| body.iter().filter(move |(b, _)| b > t).map(move |(b, ok)| (*t, *b, *ok)))
                    .collect();
                let mut by_body: BTreeMap<(u64, bool), u64> = BTreeMap::new();
                for (t, b, ok) in pairs {
                    let e = by_body.entry((b, ok)).or_insert(t);
                    *e = (*e).min(t);
                }
                for ((b, ok), t) in by_body {
                    let list = if ok { &mut f.violations } else { &mut f.warnings };
                    list.push((name.clone(), t, b));
                }
            }
            Modality::EventuallyRequire => {
                for (t, ok) in &trig {
                    if *ok && !body.iter().any(|(b, bok)| *bok && b > t) {
                        f.unfulfilled.push((name.clone(), *t));
                    }
                }
            }
        }
    }
    // Context grows on allowed Agent file reads; an allowed Agent socket
    // write leaks everything in it.
    let mut context: Vec<String> = Vec::new();
    let mut leaked: Vec<String> = Vec::new();
    for (seq, scope, ok, ts) in judged {
        if !*ok || *scope != Scope::Agent {
            continue;
        }
        for t in ts.iter().filter(|t| t.kind == EntityKind::File && t.perm == Permission::Read) {
            let p = t.hit.path.clone().unwrap();
            if !context.contains(&p) {
                context.push(p);
            }
        }
        if ts.iter().any(|t| t.kind == EntityKind::Socket && t.perm == Permission::Write) {
            for e in &context {
                if !leaked.contains(e) {
                    leaked.push(e.clone());
                    f.leaks.push((*seq, e.clone()));
                }
            }
        }
    }
    f.violations.sort();
    f.warnings.sort();
    f.unfulfilled.sort();
    f
}
