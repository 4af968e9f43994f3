//! The dispatch vocabulary: which argument roles each syscall key checks,
//! and what each role demands of the entity it resolves to.
//!
//! A dispatch key refines the trace syscall by the arguments that change its
//! meaning (open mode, mmap protection, append-mode fds).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::model::{EntityKind, PermSet, Permission};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// The fd the call operates on.
    Fd,
    /// A path argument.
    Path,
    /// Directory containing a path argument.
    Parent,
    /// sendfile destination.
    Out,
    /// sendfile source.
    In,
    /// The calling process.
    Caller,
    /// Process addressed by an IPC call.
    Target,
}

impl Role {
    pub const ALL: [Role; 7] = [Role::Fd, Role::Path, Role::Parent, Role::Out, Role::In, Role::Caller, Role::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Fd => "fd",
            Role::Path => "path",
            Role::Parent => "parent",
            Role::Out => "out",
            Role::In => "in",
            Role::Caller => "self",
            Role::Target => "target",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or(())
    }
}

/// What a role requires of an entity of one kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demand {
    /// Each clause must share at least one permission with the held set.
    pub clauses: Vec<PermSet>,
    /// Holding this permission denies the call outright.
    pub forbid: Option<Permission>,
}

impl Demand {
    pub fn satisfied(&self, held: PermSet) -> bool {
        self.clauses.iter().all(|c| !c.intersection(held).is_empty())
    }

    pub fn forbidden(&self, held: PermSet) -> bool {
        self.forbid.is_some_and(|p| held.contains(p))
    }

    /// Permissions that can contribute to satisfying the demand.
    pub fn relevant(&self) -> PermSet {
        self.clauses.iter().fold(PermSet::EMPTY, |acc, c| acc.union(*c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleSpec {
    pub role: Role,
    /// Kinds the role may resolve to; any other kind has no rule.
    pub kinds: Vec<(EntityKind, Demand)>,
}

impl RoleSpec {
    pub fn demand(&self, kind: EntityKind) -> Option<&Demand> {
        self.kinds.iter().find(|(k, _)| *k == kind).map(|(_, d)| d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub key: String,
    pub roles: Vec<RoleSpec>,
}

use EntityKind::*;
use Permission::*;

fn one(p: Permission) -> PermSet {
    PermSet::single(p)
}

fn any(ps: &[Permission]) -> PermSet {
    ps.iter().copied().collect()
}

fn need(clauses: &[PermSet]) -> Demand {
    Demand {
        clauses: clauses.to_vec(),
        forbid: None,
    }
}

fn role(role: Role, kinds: Vec<(EntityKind, Demand)>) -> RoleSpec {
    RoleSpec { role, kinds }
}

fn sig(key: impl Into<String>, roles: Vec<RoleSpec>) -> Signature {
    Signature { key: key.into(), roles }
}

/// Open modes after folding W+A into A.
pub const OPEN_MODES: [&str; 5] = ["R", "W", "A", "RW", "RA"];

fn build() -> Vec<Signature> {
    let mut out = Vec::new();
    let write_or_append = any(&[Write, Append]);

    for mode in OPEN_MODES {
        let file_clauses: Vec<PermSet> = match mode {
            "R" => vec![one(Read)],
            "W" => vec![one(Write)],
            "A" => vec![write_or_append],
            "RW" => vec![one(Read), one(Write)],
            _ => vec![one(Read), write_or_append],
        };
        let mut kinds = vec![(File, need(&file_clauses)), (Device, need(&file_clauses))];
        if mode == "R" {
            kinds.push((Directory, need(&[one(Read)])));
            kinds.push((Process, need(&[one(Visible)])));
        }
        out.push(sig(format!("open({mode})"), vec![role(Role::Path, kinds.clone())]));
        out.push(sig(
            format!("open({mode},C)"),
            vec![
                role(Role::Path, kinds),
                role(Role::Parent, vec![(Directory, need(&[write_or_append]))]),
            ],
        ));
    }
    for name in ["read", "pread", "readv"] {
        out.push(sig(
            name,
            vec![role(Role::Fd, vec![(File, need(&[one(Read)])), (Process, need(&[one(Visible)]))])],
        ));
    }
    for name in ["write", "pwrite", "writev"] {
        out.push(sig(name, vec![role(Role::Fd, vec![(File, need(&[one(Write)]))])]));
        out.push(sig(
            format!("{name}(append)"),
            vec![role(Role::Fd, vec![(File, need(&[write_or_append]))])],
        ));
    }
    out.push(sig("mmap(PROT_READ)", vec![role(Role::Fd, vec![(File, need(&[one(Read)]))])]));
    out.push(sig("mmap(PROT_WRITE)", vec![role(Role::Fd, vec![(File, need(&[one(Write)]))])]));
    out.push(sig(
        "mmap(PROT_READ|PROT_WRITE)",
        vec![role(Role::Fd, vec![(File, need(&[one(Read), one(Write)]))])],
    ));
    out.push(sig(
        "sendfile",
        vec![
            role(Role::Out, vec![(File, need(&[one(Write)])), (Socket, need(&[one(Write)]))]),
            role(Role::In, vec![(File, need(&[one(Read)]))]),
        ],
    ));
    out.push(sig("lseek", vec![role(Role::Fd, vec![(File, need(&[any(&[Read, Write])]))])]));
    // seeking an append-mode fd could overwrite earlier content
    out.push(sig("lseek(append)", vec![role(Role::Fd, vec![])]));
    out.push(sig("getdents", vec![role(Role::Fd, vec![(Directory, need(&[one(Read)]))])]));
    for name in ["mkdir", "creat"] {
        out.push(sig(name, vec![role(Role::Parent, vec![(Directory, need(&[write_or_append]))])]));
    }
    for name in ["rmdir", "unlink"] {
        out.push(sig(name, vec![role(Role::Parent, vec![(Directory, need(&[one(Write)]))])]));
    }
    for name in ["sendto", "sendmsg"] {
        out.push(sig(name, vec![role(Role::Fd, vec![(Socket, need(&[one(Write)]))])]));
    }
    for name in ["recvfrom", "recvmsg"] {
        out.push(sig(name, vec![role(Role::Fd, vec![(Socket, need(&[one(Read)]))])]));
    }
    out.push(sig(
        "execve",
        vec![role(
            Role::Path,
            vec![(
                File,
                Demand {
                    clauses: vec![one(Read)],
                    forbid: Some(NoExecute),
                },
            )],
        )],
    ));
    for name in ["fork", "clone"] {
        out.push(sig(
            name,
            vec![role(
                Role::Caller,
                vec![(
                    Process,
                    Demand {
                        clauses: vec![any(&[Read, Write, Append, Visible])],
                        forbid: Some(NoExecute),
                    },
                )],
            )],
        ));
    }
    out.push(sig(
        "stat",
        vec![role(Role::Path, [File, Directory, Device, Process].map(|k| (k, need(&[one(Visible)]))).to_vec())],
    ));
    out.push(sig(
        "fstat",
        vec![role(Role::Fd, EntityKind::ALL.map(|k| (k, need(&[one(Visible)]))).to_vec())],
    ));
    out.push(sig("ioctl", vec![role(Role::Fd, vec![(Device, need(&[one(Write)]))])]));
    for name in ["semget", "semop", "semctl"] {
        out.push(sig(name, vec![role(Role::Target, vec![(Process, need(&[one(Write)]))])]));
    }
    out
}

struct Vocabulary {
    list: Vec<Signature>,
    by_key: HashMap<String, usize>,
}

fn vocabulary() -> &'static Vocabulary {
    static V: OnceLock<Vocabulary> = OnceLock::new();
    V.get_or_init(|| {
        let list = build();
        let by_key = list.iter().enumerate().map(|(i, s)| (s.key.clone(), i)).collect();
        Vocabulary { list, by_key }
    })
}

/// Every dispatch key with its checks, in a fixed order.
pub fn signatures() -> &'static [Signature] {
    &vocabulary().list
}

pub fn signature(key: &str) -> Option<&'static Signature> {
    let v = vocabulary();
    v.by_key.get(key).map(|i| &v.list[*i])
}

/// Mapping-table cell: the syscalls through which `perm` on a `kind` entity is exercised.
pub fn syscalls_for(kind: EntityKind, perm: Permission) -> &'static [&'static str] {
    match (kind, perm) {
        (File, Read) => &["read", "pread", "readv", "mmap(PROT_READ)", "sendfile(in)"],
        (File, Write) => &["write", "pwrite", "writev", "mmap(PROT_WRITE)", "sendfile(out)"],
        (File, Append) => &["lseek", "open-with-append"],
        (File, NoExecute) => &["execve"],
        (Directory, Read) => &["getdents"],
        (Directory, Write) => &["mkdir", "rmdir", "creat", "unlink"],
        (Directory, Append) => &["mkdir", "creat"],
        (Socket, Read) => &["recvfrom", "recvmsg"],
        (Socket, Write) => &["sendto", "sendmsg", "sendfile(out)"],
        (Device, Write) => &["ioctl"],
        (Process, Write) => &["semget", "semop", "semctl"],
        (Process, NoExecute) => &["clone", "fork"],
        (Process, Visible) => &["procfs"],
        (_, Visible) => &["stat", "fstat"],
        _ => &[],
    }
}
