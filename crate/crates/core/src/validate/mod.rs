//! Static validation of a model against its policies.
//!
//! The internal evaluator is authoritative; [`emit_smtlib`] produces an
//! equivalent SMT-LIB2 script for cross-checking with an external solver.

mod extension;
mod leaks;
mod smt;

use std::fmt;

use thiserror::Error;

pub use extension::{domain, in_extension, target_covers, Element};
pub use leaks::{analyze_leaks, LeakFinding};
pub use smt::emit_smtlib;

use crate::lang::{Builtin, PolicyBody, StaticFormula};
use crate::model::{is_known_key, EntityKind, PermSet, Permission, Scope, SecurityModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub policy: String,
    /// Pattern name, or `defaults`.
    pub subject: String,
    /// The scope checked, or the (lower, upper) pair for hierarchy checks.
    pub scopes: Vec<Scope>,
    pub detail: String,
    /// Offending permission sets, in the order of `scopes`.
    pub witness: Vec<PermSet>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.policy, self.subject, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidateError {
    #[error("unknown builtin {0}")]
    UnknownBuiltin(String),
    #[error("guard of {policy} references unknown attribute key {key}")]
    UnknownGuardKey { policy: String, key: String },
}

/// Name under which a builtin's violations are reported: the first policy
/// declaring it, else the builtin id.
fn builtin_policy_name(model: &SecurityModel, builtin: Builtin) -> String {
    model
        .policies
        .iter()
        .find(|p| p.body == PolicyBody::Builtin(builtin))
        .map(|p| p.name.clone())
        .unwrap_or_else(|| builtin.id().to_string())
}

/// P(e,Sandbox) ⊆ P(e,Agent) ⊆ P(e,Monitor) for every pattern and the defaults.
pub fn check_scope_hierarchy(model: &SecurityModel) -> Vec<Violation> {
    let policy = builtin_policy_name(model, Builtin::ScopeHierarchy);
    let mut out = Vec::new();
    for element in domain(model) {
        for (lower, upper) in [(Scope::Sandbox, Scope::Agent), (Scope::Agent, Scope::Monitor)] {
            let lo = element.perms(model, lower);
            let hi = element.perms(model, upper);
            if !lo.is_subset(hi) {
                out.push(Violation {
                    policy: policy.clone(),
                    subject: element.name().to_string(),
                    scopes: vec![lower, upper],
                    detail: format!(
                        "{lower} permissions {lo} exceed {upper} permissions {hi} (extra {})",
                        lo.difference(hi)
                    ),
                    witness: vec![lo, hi],
                });
            }
        }
    }
    out
}

/// Runs one builtin policy by id.
pub fn check_builtin(model: &SecurityModel, builtin_id: &str) -> Result<Vec<Violation>, ValidateError> {
    let builtin = Builtin::from_id(builtin_id).ok_or_else(|| ValidateError::UnknownBuiltin(builtin_id.into()))?;
    Ok(run_builtin(model, builtin))
}

fn run_builtin(model: &SecurityModel, builtin: Builtin) -> Vec<Violation> {
    let policy = builtin_policy_name(model, builtin);
    match builtin {
        Builtin::ScopeHierarchy => check_scope_hierarchy(model),
        Builtin::NoExecAgent => domain(model)
            .filter(|e| no_exec_applies(e.kind()))
            .filter_map(|e| {
                let perms = e.perms(model, Scope::Agent);
                (!perms.contains(Permission::NoExecute)).then(|| Violation {
                    policy: policy.clone(),
                    subject: e.name().to_string(),
                    scopes: vec![Scope::Agent],
                    detail: format!("Agent permissions {perms} lack NoExec, so the agent may execute it outside the sandbox"),
                    witness: vec![perms],
                })
            })
            .collect(),
        Builtin::CredentialVisibility => domain(model)
            .filter(|e| e.is_credential())
            .filter_map(|e| {
                let perms = e.perms(model, Scope::Agent);
                (perms != PermSet::single(Permission::Visible)).then(|| Violation {
                    policy: policy.clone(),
                    subject: e.name().to_string(),
                    scopes: vec![Scope::Agent],
                    detail: format!("credential has Agent permissions {perms}, must be exactly {{ Visible }}"),
                    witness: vec![perms],
                })
            })
            .collect(),
    }
}

/// NoExec only has meaning for entities that can be executed or forked.
/// The defaults element (kind `None`) can stand for either.
pub(crate) fn no_exec_applies(kind: Option<EntityKind>) -> bool {
    matches!(kind, None | Some(EntityKind::File) | Some(EntityKind::Process))
}

/// Evaluates a static formula over the finite domain.
pub fn check_static(model: &SecurityModel, policy: &str, formula: &StaticFormula) -> Result<Vec<Violation>, ValidateError> {
    if let Some(bad) = formula.guard.attrs.iter().find(|a| !is_known_key(&a.key)) {
        return Err(ValidateError::UnknownGuardKey {
            policy: policy.into(),
            key: bad.key.clone(),
        });
    }
    let c = formula.constraint;
    Ok(domain(model)
        .filter(|e| in_extension(*e, formula.guard.kind, &formula.guard.attrs))
        .filter_map(|e| {
            let actual = e.perms(model, c.scope);
            (!c.relation.holds(actual, c.perms)).then(|| Violation {
                policy: policy.into(),
                subject: e.name().to_string(),
                scopes: vec![c.scope],
                detail: format!(
                    "perms({}, {}) = {actual}, required {} {}",
                    e.name(),
                    c.scope,
                    c.relation.symbol(),
                    c.perms
                ),
                witness: vec![actual],
            })
        })
        .collect())
}

/// Everything `validate` found.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub violations: Vec<Violation>,
    pub leaks: Vec<LeakFinding>,
}

impl Validation {
    pub fn unguarded_leaks(&self) -> impl Iterator<Item = &LeakFinding> {
        self.leaks.iter().filter(|l| !l.guarded)
    }

    /// No violations and no unguarded leaks.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.unguarded_leaks().next().is_none()
    }
}

/// Builtins that validation runs: the scope hierarchy always, the others
/// when some policy declares them. Each runs once.
pub(crate) fn active_builtins(model: &SecurityModel) -> Vec<Builtin> {
    Builtin::ALL
        .into_iter()
        .filter(|b| {
            *b == Builtin::ScopeHierarchy || model.policies.iter().any(|p| p.body == PolicyBody::Builtin(*b))
        })
        .collect()
}

/// Policy violations only (no leak analysis).
pub fn policy_violations(model: &SecurityModel) -> Result<Vec<Violation>, ValidateError> {
    let mut violations = Vec::new();
    for b in active_builtins(model) {
        violations.extend(run_builtin(model, b));
    }
    for p in &model.policies {
        if let PolicyBody::Static(f) = &p.body {
            violations.extend(check_static(model, &p.name, f)?);
        }
    }
    Ok(violations)
}

/// Runs every active builtin, every static formula, and leak analysis.
pub fn validate(model: &SecurityModel) -> Result<Validation, ValidateError> {
    Ok(Validation {
        violations: policy_violations(model)?,
        leaks: analyze_leaks(model),
    })
}
