use std::fmt::Write;

use super::lexer::quote;
use super::{EventMatcher, EventTarget, Guard, Modality, PolicyBody};
use crate::model::{AttributeMatcher, Matcher, Scope, SecurityModel};

/// Canonical text for a model: entities, non-empty defaults, grants, then
/// policies, each in declaration order.
pub fn render(model: &SecurityModel) -> String {
    let mut out = String::new();
    for p in &model.patterns {
        let _ = writeln!(out, "entity {} {} {}", p.kind, p.name, render_attrs(&p.attrs));
    }
    for scope in Scope::ALL {
        let perms = model.default_perms(scope);
        if !perms.is_empty() {
            let _ = writeln!(out, "default {scope} {perms}");
        }
    }
    for g in &model.grants {
        let _ = writeln!(out, "grant {} on {} {}", g.scope, g.pattern, g.perms);
    }
    for policy in &model.policies {
        let _ = write!(out, "policy {} ", policy.name);
        match &policy.body {
            PolicyBody::Builtin(b) => {
                let _ = writeln!(out, "builtin {b}");
            }
            PolicyBody::Static(f) => {
                let c = &f.constraint;
                let _ = writeln!(
                    out,
                    "static {{ forall {} : {} => perms({}, {}) {} {} }}",
                    f.var,
                    render_guard(&f.guard),
                    f.var,
                    c.scope,
                    c.relation.symbol(),
                    c.perms
                );
            }
            PolicyBody::Temporal(r) => {
                let modality = match r.modality {
                    Modality::AlwaysForbid => "always forbid",
                    Modality::EventuallyRequire => "eventually require",
                };
                let _ = writeln!(
                    out,
                    "temporal {{ when {} {} {} }}",
                    render_event(&r.trigger),
                    modality,
                    render_event(&r.body)
                );
            }
        }
    }
    out
}

pub(crate) fn render_attrs(attrs: &[AttributeMatcher]) -> String {
    if attrs.is_empty() {
        return "{}".into();
    }
    let body: Vec<String> = attrs
        .iter()
        .map(|a| format!("{}: {}", a.key, render_matcher(&a.matcher)))
        .collect();
    format!("{{ {} }}", body.join(", "))
}

fn render_matcher(m: &Matcher) -> String {
    match m {
        Matcher::Glob(s) => quote(s),
        Matcher::Int(n) => n.to_string(),
        Matcher::IntRange(lo, hi) => format!("{lo}..{hi}"),
        Matcher::Bool(b) => b.to_string(),
    }
}

fn render_guard(g: &Guard) -> String {
    match (g.kind, g.attrs.is_empty()) {
        (Some(k), true) => k.to_string(),
        (Some(k), false) => format!("{k} {}", render_attrs(&g.attrs)),
        (None, _) => render_attrs(&g.attrs),
    }
}

pub(crate) fn render_target(t: &EventTarget) -> String {
    match t {
        EventTarget::Pattern(name) => name.clone(),
        EventTarget::Attrs { kind, attrs } => format!("{kind} {}", render_attrs(attrs)),
    }
}

fn render_event(e: &EventMatcher) -> String {
    format!("{} {} {}", e.scope, e.action.keyword(), render_target(&e.target))
}
