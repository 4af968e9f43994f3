use std::fmt::{self, Write};

use thiserror::Error;

use crate::compile::{Role, Target};
use crate::model::Scope;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    Deny,
    Error(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Allow => "ALLOW",
            Verdict::Deny => "DENY",
            Verdict::Error(_) => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckRecord {
    pub role: Role,
    pub target: Target,
    /// Concrete object: a path, an address, or `pid:N`.
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub seq: u64,
    pub pid: i64,
    pub scope: Option<Scope>,
    pub syscall: &'static str,
    /// Dispatch key; `None` for calls the monitor only tracks.
    pub key: Option<String>,
    pub verdict: Verdict,
    pub checks: Vec<CheckRecord>,
    /// The deciding rule in table syntax, if any rule matched.
    pub rule: Option<String>,
    pub provenance: Vec<String>,
    pub version: Option<u64>,
    pub note: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalViolation {
    pub rule: String,
    /// First trigger occurrence.
    pub trigger_seq: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub rule: String,
    pub trigger_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakEvent {
    pub seq: u64,
    pub entity: String,
    pub sink: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRecord {
    pub at_seq: u64,
    pub scope: Scope,
    pub version: u64,
    /// Sequence number of the first event judged by the new table.
    pub effective_seq: Option<u64>,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Report {
    pub events: Vec<EventRecord>,
    pub violations: Vec<TemporalViolation>,
    pub unfulfilled: Vec<Obligation>,
    /// Denied body events after an always-forbid trigger.
    pub warnings: Vec<TemporalViolation>,
    pub leaks: Vec<LeakEvent>,
    pub updates: Vec<UpdateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub events: usize,
    pub allow: usize,
    pub deny: usize,
    pub error: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Tagged,
}

impl Report {
    pub fn summary(&self) -> Summary {
        let mut s = Summary {
            events: self.events.len(),
            ..Default::default()
        };
        for e in &self.events {
            match e.verdict {
                Verdict::Allow => s.allow += 1,
                Verdict::Deny => s.deny += 1,
                Verdict::Error(_) => s.error += 1,
            }
        }
        s
    }

    /// Any denial, error, temporal violation, or leak.
    pub fn has_findings(&self) -> bool {
        let s = self.summary();
        s.deny + s.error > 0 || !self.violations.is_empty() || !self.leaks.is_empty()
    }

    pub fn event(&self, seq: u64) -> Option<&EventRecord> {
        self.events
            .binary_search_by_key(&seq, |e| e.seq)
            .ok()
            .map(|i| &self.events[i])
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.render_text(),
            Format::Tagged => self.render_tagged(),
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = write!(out, "{} {} {} pid={}", e.seq, e.verdict.label(), e.syscall, e.pid);
            match &e.verdict {
                Verdict::Error(reason) => {
                    let _ = writeln!(out, " error: {reason}");
                    continue;
                }
                _ => {
                    if let Some(scope) = e.scope {
                        let _ = write!(out, " scope={scope}");
                    }
                }
            }
            if let Some(key) = &e.key {
                let _ = write!(out, " key={key}");
            }
            for c in &e.checks {
                let _ = write!(out, " {}={}({})", c.role, c.target, c.object);
            }
            if let Some(v) = e.version {
                let _ = write!(out, " v{v}");
            }
            if let Some(note) = e.note {
                let _ = write!(out, " [{note}]");
            }
            out.push('\n');
        }
        let s = self.summary();
        out.push_str("# summary\n");
        let _ = writeln!(out, "events {}: {} allow, {} deny, {} error", s.events, s.allow, s.deny, s.error);
        for v in &self.violations {
            let _ = writeln!(out, "violation {}: trigger seq {}, body seq {}", v.rule, v.trigger_seq, v.seq);
        }
        for o in &self.unfulfilled {
            let _ = writeln!(out, "unfulfilled {}: trigger seq {}", o.rule, o.trigger_seq);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "attempted {}: trigger seq {}, denied body seq {}", w.rule, w.trigger_seq, w.seq);
        }
        for l in &self.leaks {
            let _ = writeln!(out, "leaked {} at seq {} via {}", l.entity, l.seq, l.sink);
        }
        for u in &self.updates {
            let _ = writeln!(out, "update {} v{} at seq {}: {}", u.scope, u.version, u.at_seq, update_outcome(u));
        }
        let _ = writeln!(
            out,
            "{} violations, {} unfulfilled, {} leaks",
            self.violations.len(),
            self.unfulfilled.len(),
            self.leaks.len()
        );
        out
    }

    pub fn render_tagged(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = write!(
                out,
                "event seq={} verdict={} syscall={} pid={} scope={}",
                e.seq,
                e.verdict.label(),
                e.syscall,
                e.pid,
                e.scope.map_or("-", |s| s.as_str())
            );
            if let Verdict::Error(reason) = &e.verdict {
                let _ = writeln!(out, " error={}", reason.replace(' ', "_"));
                continue;
            }
            let _ = write!(out, " key={}", e.key.as_deref().unwrap_or("-"));
            for c in &e.checks {
                let _ = write!(out, " check={}:{}:{}", c.role, c.target, c.object);
            }
            let _ = write!(out, " version={}", e.version.map_or("-".into(), |v| v.to_string()));
            if let Some(note) = e.note {
                let _ = write!(out, " note={}", note.replace(' ', "_"));
            }
            out.push('\n');
        }
        for v in &self.violations {
            let _ = writeln!(out, "violation rule={} trigger={} seq={}", v.rule, v.trigger_seq, v.seq);
        }
        for o in &self.unfulfilled {
            let _ = writeln!(out, "unfulfilled rule={} trigger={}", o.rule, o.trigger_seq);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "attempted rule={} trigger={} seq={}", w.rule, w.trigger_seq, w.seq);
        }
        for l in &self.leaks {
            let _ = writeln!(out, "leak entity={} seq={} sink={}", l.entity, l.seq, l.sink);
        }
        for u in &self.updates {
            let _ = writeln!(
                out,
                "update scope={} version={} at={} outcome={}",
                u.scope,
                u.version,
                u.at_seq,
                update_outcome(u).replace(' ', "_")
            );
        }
        let s = self.summary();
        let _ = writeln!(
            out,
            "summary events={} allow={} deny={} error={} violations={} unfulfilled={} leaks={}",
            s.events,
            s.allow,
            s.deny,
            s.error,
            self.violations.len(),
            self.unfulfilled.len(),
            self.leaks.len()
        );
        out
    }
}

fn update_outcome(u: &UpdateRecord) -> String {
    match (&u.outcome, u.effective_seq) {
        (Ok(()), Some(seq)) => format!("applied from seq {seq}"),
        (Ok(()), None) => "applied after the last event".into(),
        (Err(reason), _) => format!("rejected: {reason}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no event with seq {0}")]
pub struct UnknownSeq(pub u64);

/// Provenance chain for one event, from the syscall back to grants and policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub lines: Vec<String>,
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

pub fn explain(report: &Report, seq: u64) -> Result<Explanation, UnknownSeq> {
    let e = report.event(seq).ok_or(UnknownSeq(seq))?;
    let mut lines = vec![format!(
        "seq {seq}: {} {} (pid {}, scope {})",
        e.verdict.label(),
        e.syscall,
        e.pid,
        e.scope.map_or("unknown", |s| s.as_str())
    )];
    match &e.verdict {
        Verdict::Error(reason) => lines.push(format!("  error: {reason}")),
        _ => {
            if let Some(key) = &e.key {
                let version = e.version.map_or(String::new(), |v| format!(" (table v{v})"));
                lines.push(format!("  handler: {key}{version}"));
            }
            for c in &e.checks {
                lines.push(format!("  {}: {} resolves to {}", c.role, c.object, c.target));
            }
            match &e.rule {
                Some(rule) => lines.push(format!("  rule: {rule}")),
                None if e.key.is_some() && e.verdict == Verdict::Deny => {
                    lines.push("  rule: none matched, implicit deny".into())
                }
                None => {}
            }
            for p in &e.provenance {
                lines.push(format!("  from: {p}"));
            }
            if let Some(note) = e.note {
                lines.push(format!("  note: {note}"));
            }
        }
    }
    for v in report.violations.iter().filter(|v| v.seq == seq) {
        lines.push(format!("  temporal: violates {} (triggered at seq {})", v.rule, v.trigger_seq));
        if let Some(t) = report.event(v.trigger_seq) {
            let objects: Vec<&str> = t.checks.iter().map(|c| c.object.as_str()).collect();
            lines.push(format!("  trigger: seq {} {} {}", t.seq, t.syscall, objects.join(" ")));
        }
    }
    for w in report.warnings.iter().filter(|w| w.seq == seq) {
        lines.push(format!("  temporal: attempted body of {} (triggered at seq {})", w.rule, w.trigger_seq));
    }
    for l in report.leaks.iter().filter(|l| l.seq == seq) {
        lines.push(format!("  leak: {} sent to {}", l.entity, l.sink));
    }
    Ok(Explanation { lines })
}
