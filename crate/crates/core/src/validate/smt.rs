//! SMT-LIB2 encoding of a model and its policies.
//!
//! Entities, scopes, permissions and kinds become enumeration datatypes; the
//! permission assignment is a fully specified `has_perm` relation. Each
//! policy is a named Bool expanded over the finite domain, and the script
//! asserts the negation of their conjunction, so `unsat` means every policy
//! holds.

use std::fmt::Write;

use super::extension::{domain, in_extension, Element};
use super::active_builtins;
use crate::lang::{Builtin, PolicyBody, Relation, StaticFormula};
use crate::model::{EntityKind, PermSet, Permission, Scope, SecurityModel};

fn entity_symbol(e: Element<'_>) -> String {
    match e {
        Element::Pattern(p) => format!("ent.{}", p.name),
        Element::Defaults => "ent-defaults".into(),
    }
}

fn perm_symbol(p: Permission) -> &'static str {
    p.keyword()
}

fn kind_symbol(k: Option<EntityKind>) -> &'static str {
    match k {
        Some(k) => k.keyword(),
        None => "any",
    }
}

fn and(parts: Vec<String>) -> String {
    match parts.len() {
        0 => "true".into(),
        1 => parts.into_iter().next().unwrap_or_default(),
        _ => format!("(and {})", parts.join(" ")),
    }
}

fn has(e: &str, s: Scope, p: Permission) -> String {
    format!("(has_perm {e} {s} {})", perm_symbol(p))
}

/// The constraint `perms(e, scope) REL expected` as a conjunction of literals.
fn relation_literals(e: &str, scope: Scope, relation: Relation, expected: PermSet) -> Vec<String> {
    Permission::ALL
        .into_iter()
        .filter_map(|p| {
            let lit = has(e, scope, p);
            let neg = format!("(not {lit})");
            let inside = expected.contains(p);
            match relation {
                Relation::Equals => Some(if inside { lit } else { neg }),
                Relation::SubsetOf => (!inside).then_some(neg),
                Relation::Contains => inside.then_some(lit),
                Relation::Excludes => inside.then_some(neg),
            }
        })
        .collect()
}

struct Encoded {
    comment: String,
    body: String,
}

fn encode_builtin(model: &SecurityModel, b: Builtin) -> String {
    let mut parts = Vec::new();
    for e in domain(model) {
        let sym = entity_symbol(e);
        match b {
            Builtin::ScopeHierarchy => {
                for p in Permission::ALL {
                    parts.push(format!("(=> {} {})", has(&sym, Scope::Sandbox, p), has(&sym, Scope::Agent, p)));
                    parts.push(format!("(=> {} {})", has(&sym, Scope::Agent, p), has(&sym, Scope::Monitor, p)));
                }
            }
            Builtin::NoExecAgent => {
                let applies: Vec<String> = [None, Some(EntityKind::File), Some(EntityKind::Process)]
                    .into_iter()
                    .map(|k| format!("(= (kind_of {sym}) {})", kind_symbol(k)))
                    .collect();
                parts.push(format!(
                    "(=> (or {}) {})",
                    applies.join(" "),
                    has(&sym, Scope::Agent, Permission::NoExecute)
                ));
            }
            Builtin::CredentialVisibility => {
                let lits = relation_literals(&sym, Scope::Agent, Relation::Equals, PermSet::single(Permission::Visible));
                parts.push(format!("(=> (credential {sym}) {})", and(lits)));
            }
        }
    }
    and(parts)
}

fn encode_static(model: &SecurityModel, index: usize, f: &StaticFormula) -> String {
    let c = f.constraint;
    let parts = domain(model)
        .map(|e| {
            let sym = entity_symbol(e);
            format!(
                "(=> (in_guard.{index} {sym}) {})",
                and(relation_literals(&sym, c.scope, c.relation, c.perms))
            )
        })
        .collect();
    and(parts)
}

/// Deterministic SMT-LIB2 script for `model`.
pub fn emit_smtlib(model: &SecurityModel) -> String {
    let elements: Vec<Element<'_>> = domain(model).collect();
    let mut out = String::new();
    let _ = writeln!(out, "; claw policy model: {} entities, {} policies", model.patterns.len(), model.policies.len());
    out.push_str("(set-logic QF_UFDT)\n");

    let ctors: Vec<String> = elements.iter().map(|e| format!("({})", entity_symbol(*e))).collect();
    let _ = writeln!(
        out,
        "(declare-datatypes ((Entity 0) (Scope 0) (Perm 0) (Kind 0)) (({}) ((Sandbox) (Agent) (Monitor)) ({}) ({})))",
        ctors.join(" "),
        Permission::ALL.map(|p| format!("({})", perm_symbol(p))).join(" "),
        [None, Some(EntityKind::File), Some(EntityKind::Directory), Some(EntityKind::Process), Some(EntityKind::Socket), Some(EntityKind::Device)]
            .map(|k| format!("({})", kind_symbol(k)))
            .join(" "),
    );
    out.push_str("(declare-fun has_perm (Entity Scope Perm) Bool)\n");
    out.push_str("(declare-fun kind_of (Entity) Kind)\n");
    out.push_str("(declare-fun credential (Entity) Bool)\n");

    out.push_str("; permission assignment\n");
    for e in &elements {
        let sym = entity_symbol(*e);
        for scope in Scope::ALL {
            let held = e.perms(model, scope);
            for p in Permission::ALL {
                let lit = has(&sym, scope, p);
                if held.contains(p) {
                    let _ = writeln!(out, "(assert {lit})");
                } else {
                    let _ = writeln!(out, "(assert (not {lit}))");
                }
            }
        }
        let _ = writeln!(out, "(assert (= (kind_of {sym}) {}))", kind_symbol(e.kind()));
        if e.is_credential() {
            let _ = writeln!(out, "(assert (credential {sym}))");
        } else {
            let _ = writeln!(out, "(assert (not (credential {sym})))");
        }
    }

    let mut encoded = Vec::new();
    for b in active_builtins(model) {
        let name = model
            .policies
            .iter()
            .find(|p| p.body == PolicyBody::Builtin(b))
            .map(|p| p.name.clone())
            .unwrap_or_else(|| b.id().to_string());
        encoded.push(Encoded {
            comment: format!("policy {name} (builtin {b})"),
            body: encode_builtin(model, b),
        });
    }
    for p in &model.policies {
        if let PolicyBody::Static(f) = &p.body {
            let index = encoded.len();
            let _ = writeln!(out, "(declare-fun in_guard.{index} (Entity) Bool)");
            for e in &elements {
                let sym = entity_symbol(*e);
                if in_extension(*e, f.guard.kind, &f.guard.attrs) {
                    let _ = writeln!(out, "(assert (in_guard.{index} {sym}))");
                } else {
                    let _ = writeln!(out, "(assert (not (in_guard.{index} {sym})))");
                }
            }
            encoded.push(Encoded {
                comment: format!("policy {} (static)", p.name),
                body: encode_static(model, index, f),
            });
        }
    }

    let mut names = Vec::new();
    for (i, enc) in encoded.iter().enumerate() {
        let _ = writeln!(out, "; {}", enc.comment);
        let _ = writeln!(out, "(define-fun policy.{i} () Bool {})", enc.body);
        names.push(format!("policy.{i}"));
    }
    out.push_str("; some policy is violated\n");
    let _ = writeln!(out, "(assert (not {}))", and(names));
    out.push_str("(check-sat)\n");
    out
}
