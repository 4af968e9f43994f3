//! Syscall trace files.
//!
//! ```text
//! # comment
//! !scope 100 Agent
//! 1 100 open /secure/key R -> 7
//! 2 100 read 7 64
//! ```

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::model::Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpenFlags {
    pub read: bool,
    pub write: bool,
    pub append: bool,
    pub create: bool,
}

impl OpenFlags {
    /// Access mode with write-plus-append folded into append.
    pub fn mode(self) -> &'static str {
        match (self.read, self.write || self.append, self.append) {
            (true, false, _) => "R",
            (false, true, false) => "W",
            (false, true, true) => "A",
            (true, true, false) => "RW",
            _ => "RA",
        }
    }

    fn parse(text: &str) -> Option<OpenFlags> {
        let mut f = OpenFlags::default();
        for part in text.split(',') {
            let slot = match part {
                "R" => &mut f.read,
                "W" => &mut f.write,
                "A" => &mut f.append,
                "C" => &mut f.create,
                _ => return None,
            };
            if *slot {
                return None;
            }
            *slot = true;
        }
        (f.read || f.write || f.append).then_some(f)
    }
}

impl fmt::Display for OpenFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.read, "R"), (self.write, "W"), (self.append, "A"), (self.create, "C")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prot {
    Read,
    Write,
    ReadWrite,
}

impl Prot {
    pub fn key(self) -> &'static str {
        match self {
            Prot::Read => "mmap(PROT_READ)",
            Prot::Write => "mmap(PROT_WRITE)",
            Prot::ReadWrite => "mmap(PROT_READ|PROT_WRITE)",
        }
    }

    pub fn reads(self) -> bool {
        self != Prot::Write
    }

    pub fn writes(self) -> bool {
        self != Prot::Read
    }

    fn parse(text: &str) -> Option<Prot> {
        match text {
            "R" | "PROT_READ" => Some(Prot::Read),
            "W" | "PROT_WRITE" => Some(Prot::Write),
            "RW" | "PROT_READ|PROT_WRITE" | "PROT_WRITE|PROT_READ" => Some(Prot::ReadWrite),
            _ => None,
        }
    }
}

macro_rules! named_ops {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),* }
            }

            pub fn from_name(s: &str) -> Option<$name> {
                Self::ALL.iter().copied().find(|o| o.name() == s)
            }
        }
    };
}

named_ops!(IoOp { Read => "read", Pread => "pread", Readv => "readv", Write => "write", Pwrite => "pwrite", Writev => "writev" });
named_ops!(PathOp { Mkdir => "mkdir", Rmdir => "rmdir", Creat => "creat", Unlink => "unlink" });
named_ops!(NetOp { Sendto => "sendto", Sendmsg => "sendmsg", Recvfrom => "recvfrom", Recvmsg => "recvmsg" });
named_ops!(IpcOp { Semget => "semget", Semop => "semop", Semctl => "semctl" });

impl IoOp {
    pub fn writes(self) -> bool {
        matches!(self, IoOp::Write | IoOp::Pwrite | IoOp::Writev)
    }
}

impl NetOp {
    pub fn sends(self) -> bool {
        matches!(self, NetOp::Sendto | NetOp::Sendmsg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    Open { path: String, flags: OpenFlags },
    Close { fd: i64 },
    Dup { fd: i64 },
    Io { op: IoOp, fd: i64, len: u64 },
    Mmap { fd: i64, prot: Prot },
    Sendfile { out_fd: i64, in_fd: i64, len: u64 },
    Lseek { fd: i64, offset: i64 },
    Getdents { fd: i64 },
    PathOp { op: PathOp, path: String },
    Socket,
    Connect { fd: i64, addr: String },
    Net { op: NetOp, fd: i64, len: u64 },
    Execve { path: String },
    /// `clone` when true, `fork` otherwise.
    Spawn { clone: bool },
    Stat { path: String },
    Fstat { fd: i64 },
    Ioctl { fd: i64, cmd: String },
    Ipc { op: IpcOp, pid: i64 },
}

impl Call {
    /// Syscall name as written in traces.
    pub fn name(&self) -> &'static str {
        match self {
            Call::Open { .. } => "open",
            Call::Close { .. } => "close",
            Call::Dup { .. } => "dup",
            Call::Io { op, .. } => op.name(),
            Call::Mmap { .. } => "mmap",
            Call::Sendfile { .. } => "sendfile",
            Call::Lseek { .. } => "lseek",
            Call::Getdents { .. } => "getdents",
            Call::PathOp { op, .. } => op.name(),
            Call::Socket => "socket",
            Call::Connect { .. } => "connect",
            Call::Net { op, .. } => op.name(),
            Call::Execve { .. } => "execve",
            Call::Spawn { clone: true } => "clone",
            Call::Spawn { clone: false } => "fork",
            Call::Stat { .. } => "stat",
            Call::Fstat { .. } => "fstat",
            Call::Ioctl { .. } => "ioctl",
            Call::Ipc { .. } => "ipc",
        }
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.name();
        match self {
            Call::Open { path, flags } => write!(f, "open {path} {flags}"),
            Call::Close { fd } | Call::Dup { fd } | Call::Getdents { fd } | Call::Fstat { fd } => write!(f, "{name} {fd}"),
            Call::Io { fd, len, .. } | Call::Net { fd, len, .. } => write!(f, "{name} {fd} {len}"),
            Call::Mmap { fd, prot } => {
                let p = match prot {
                    Prot::Read => "R",
                    Prot::Write => "W",
                    Prot::ReadWrite => "RW",
                };
                write!(f, "mmap {fd} {p}")
            }
            Call::Sendfile { out_fd, in_fd, len } => write!(f, "sendfile {out_fd} {in_fd} {len}"),
            Call::Lseek { fd, offset } => write!(f, "lseek {fd} {offset}"),
            Call::PathOp { path, .. } | Call::Execve { path } | Call::Stat { path } => write!(f, "{name} {path}"),
            Call::Socket | Call::Spawn { .. } => f.write_str(name),
            Call::Connect { fd, addr } => write!(f, "connect {fd} {addr}"),
            Call::Ioctl { fd, cmd } => write!(f, "ioctl {fd} {cmd}"),
            Call::Ipc { op, pid } => write!(f, "ipc {} {pid}", op.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    /// The temporal argument; strictly increasing within a trace.
    pub seq: u64,
    pub pid: i64,
    pub call: Call,
    pub ret: Option<i64>,
}

impl TraceEvent {
    pub fn new(seq: u64, pid: i64, call: Call, ret: Option<i64>) -> TraceEvent {
        TraceEvent { seq, pid, call, ret }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.seq, self.pid, self.call)?;
        if let Some(r) = self.ret {
            write!(f, " -> {r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// `!scope` directives; they hold for the whole trace.
    pub scopes: Vec<(i64, Scope)>,
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (pid, scope) in &self.scopes {
            writeln!(f, "!scope {pid} {scope}")?;
        }
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

fn int<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("expected {what}, found `{s}`"))
}

fn parse_call(name: &str, args: &[&str]) -> Result<Call, String> {
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{name} takes {n} argument{}, found {}", if n == 1 { "" } else { "s" }, args.len()))
        }
    };
    let fd = |i: usize| int::<i64>(args[i], "fd");
    let len = |i: usize| int::<u64>(args[i], "byte count");
    if let Some(op) = IoOp::from_name(name) {
        arity(2)?;
        return Ok(Call::Io { op, fd: fd(0)?, len: len(1)? });
    }
    if let Some(op) = PathOp::from_name(name) {
        arity(1)?;
        return Ok(Call::PathOp { op, path: args[0].into() });
    }
    if let Some(op) = NetOp::from_name(name) {
        arity(2)?;
        return Ok(Call::Net { op, fd: fd(0)?, len: len(1)? });
    }
    Ok(match name {
        "open" => {
            arity(2)?;
            let flags = OpenFlags::parse(args[1]).ok_or_else(|| format!("bad open flags `{}`", args[1]))?;
            Call::Open { path: args[0].into(), flags }
        }
        "close" => {
            arity(1)?;
            Call::Close { fd: fd(0)? }
        }
        "dup" => {
            arity(1)?;
            Call::Dup { fd: fd(0)? }
        }
        "mmap" => {
            arity(2)?;
            let prot = Prot::parse(args[1]).ok_or_else(|| format!("bad mmap protection `{}`", args[1]))?;
            Call::Mmap { fd: fd(0)?, prot }
        }
        "sendfile" => {
            arity(3)?;
            Call::Sendfile {
                out_fd: fd(0)?,
                in_fd: fd(1)?,
                len: len(2)?,
            }
        }
        "lseek" => {
            arity(2)?;
            Call::Lseek {
                fd: fd(0)?,
                offset: int(args[1], "offset")?,
            }
        }
        "getdents" => {
            arity(1)?;
            Call::Getdents { fd: fd(0)? }
        }
        "socket" => {
            arity(0)?;
            Call::Socket
        }
        "connect" => {
            arity(2)?;
            Call::Connect {
                fd: fd(0)?,
                addr: args[1].into(),
            }
        }
        "execve" => {
            arity(1)?;
            Call::Execve { path: args[0].into() }
        }
        "fork" | "clone" => {
            arity(0)?;
            Call::Spawn { clone: name == "clone" }
        }
        "stat" => {
            arity(1)?;
            Call::Stat { path: args[0].into() }
        }
        "fstat" => {
            arity(1)?;
            Call::Fstat { fd: fd(0)? }
        }
        "ioctl" => {
            arity(2)?;
            Call::Ioctl {
                fd: fd(0)?,
                cmd: args[1].into(),
            }
        }
        "ipc" => {
            arity(2)?;
            let op = IpcOp::from_name(args[0]).ok_or_else(|| format!("unknown ipc operation `{}`", args[0]))?;
            Call::Ipc { op, pid: int(args[1], "pid")? }
        }
        _ => return Err(format!("unknown syscall `{name}`")),
    })
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut directive_at: HashMap<i64, Scope> = HashMap::new();
    let mut last_seq: Option<u64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fail = |message: String| TraceError { line, message };
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if let Some(rest) = text.strip_prefix('!') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let ["scope", pid, scope] = parts.as_slice() else {
                return Err(fail("expected `!scope <pid> <Scope>`".into()));
            };
            let pid: i64 = int(pid, "pid").map_err(fail)?;
            let scope: Scope = scope.parse().map_err(|_| fail(format!("unknown scope `{scope}`")))?;
            match directive_at.insert(pid, scope) {
                Some(prev) if prev != scope => {
                    return Err(fail(format!("pid {pid} already has scope {prev}")));
                }
                Some(_) => {}
                None => trace.scopes.push((pid, scope)),
            }
            continue;
        }
        let (body, ret) = match text.split_once("->") {
            Some((b, r)) => (b, Some(int::<i64>(r.trim(), "return value").map_err(fail)?)),
            None => (text, None),
        };
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(fail("expected `<seq> <pid> <syscall> <args...>`".into()));
        }
        let seq: u64 = int(tokens[0], "sequence number").map_err(fail)?;
        let pid: i64 = int(tokens[1], "pid").map_err(fail)?;
        if let Some(prev) = last_seq {
            if seq <= prev {
                return Err(fail(format!("sequence number {seq} does not exceed {prev}")));
            }
        }
        last_seq = Some(seq);
        let call = parse_call(tokens[2], &tokens[3..]).map_err(fail)?;
        trace.events.push(TraceEvent { seq, pid, call, ret });
    }
    Ok(trace)
}
