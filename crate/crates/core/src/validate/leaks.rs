use std::fmt;

use super::extension::{domain, target_covers, Element};
use crate::lang::{Action, Modality, PolicyBody, TemporalRule};
use crate::model::{EntityKind, Permission, Scope, SecurityModel};

/// A sensitive source the agent may read paired with a socket it may write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakFinding {
    pub source: String,
    /// Socket pattern name, or `defaults` when unmatched sockets are writable.
    pub sink: String,
    /// An always-forbid temporal rule blocks writing the sink after reading the source.
    pub guarded: bool,
}

impl fmt::Display for LeakFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = if self.guarded { "guarded" } else { "unguarded" };
        write!(f, "{} -> {} ({state})", self.source, self.sink)
    }
}

fn guards(rule: &TemporalRule, source: Element<'_>, sink: Element<'_>) -> bool {
    rule.modality == Modality::AlwaysForbid
        && rule.trigger.scope == Scope::Agent
        && rule.trigger.action == Action::Reads
        && target_covers(&rule.trigger.target, source)
        && rule.body.scope == Scope::Agent
        && rule.body.action == Action::Writes
        && target_covers(&rule.body.target, sink)
}

/// Every (readable sensitive file, writable socket) pair for the Agent scope.
pub fn analyze_leaks(model: &SecurityModel) -> Vec<LeakFinding> {
    let sources: Vec<Element<'_>> = model
        .patterns
        .iter()
        .filter(|p| matches!(p.kind, EntityKind::File | EntityKind::Directory))
        .filter(|p| p.is_sensitive() || p.is_credential())
        .filter(|p| model.granted(&p.name, Scope::Agent).contains(Permission::Read))
        .map(Element::Pattern)
        .collect();
    let sinks: Vec<Element<'_>> = domain(model)
        .filter(|e| matches!(e.kind(), Some(EntityKind::Socket) | None))
        .filter(|e| e.perms(model, Scope::Agent).contains(Permission::Write))
        .collect();
    let rules: Vec<&TemporalRule> = model
        .policies
        .iter()
        .filter_map(|p| match &p.body {
            PolicyBody::Temporal(r) => Some(r),
            _ => None,
        })
        .collect();

    let mut out = Vec::new();
    for source in &sources {
        for sink in &sinks {
            out.push(LeakFinding {
                source: source.name().to_string(),
                sink: sink.name().to_string(),
                guarded: rules.iter().any(|r| guards(r, *source, *sink)),
            });
        }
    }
    out
}
