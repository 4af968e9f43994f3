use crate::lang::{EventMatcher, EventTarget, Modality, TemporalRule};
use crate::model::{Concrete, EntityKind, EntityPattern, Matcher, Permission, Scope, SecurityModel, LABEL_KEYS};

use super::{syscalls_for, CompileError};

/// One mapping-table cell exercised by an event, with the entity it touched.
#[derive(Debug, Clone, Copy)]
pub struct Facet<'a> {
    pub cell: &'static str,
    pub kind: EntityKind,
    pub perm: Permission,
    pub pattern: Option<&'a EntityPattern>,
    pub object: Concrete<'a>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPredicate {
    pub scope: Scope,
    pub perm: Permission,
    pub kind: EntityKind,
    /// The mapping-table cell for (kind, perm).
    pub syscalls: Vec<&'static str>,
    pub target: EventTarget,
}

impl EventPredicate {
    fn compile(policy: &str, m: &EventMatcher, model: &SecurityModel) -> Result<EventPredicate, CompileError> {
        let kind = match &m.target {
            EventTarget::Pattern(name) => {
                model
                    .pattern(name)
                    .ok_or_else(|| CompileError::UnknownPattern {
                        policy: policy.into(),
                        pattern: name.clone(),
                    })?
                    .kind
            }
            EventTarget::Attrs { kind, .. } => *kind,
        };
        let perm = m.action.permission();
        Ok(EventPredicate {
            scope: m.scope,
            perm,
            kind,
            syscalls: syscalls_for(kind, perm).to_vec(),
            target: m.target.clone(),
        })
    }

    pub fn matches(&self, scope: Scope, facet: &Facet<'_>) -> bool {
        scope == self.scope
            && facet.perm == self.perm
            && facet.kind == self.kind
            && self.syscalls.contains(&facet.cell)
            && match &self.target {
                EventTarget::Pattern(name) => facet.pattern.is_some_and(|p| p.name == *name),
                EventTarget::Attrs { attrs, .. } => attrs.iter().all(|a| {
                    if LABEL_KEYS.contains(&a.key.as_str()) {
                        let own = facet.pattern.is_some_and(|p| p.attr(&a.key) == Some(&Matcher::Bool(true)));
                        a.matcher == Matcher::Bool(own)
                    } else {
                        facet.object.accepts(&a.key, &a.matcher)
                    }
                }),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorSpec {
    pub name: String,
    /// Source rule, kept for export.
    pub rule: TemporalRule,
    pub trigger: EventPredicate,
    pub modality: Modality,
    pub body: EventPredicate,
}

pub fn compile_temporal(name: &str, rule: &TemporalRule, model: &SecurityModel) -> Result<MonitorSpec, CompileError> {
    Ok(MonitorSpec {
        name: name.into(),
        rule: rule.clone(),
        trigger: EventPredicate::compile(name, &rule.trigger, model)?,
        modality: rule.modality,
        body: EventPredicate::compile(name, &rule.body, model)?,
    })
}
