//! Lowering a model to per-scope syscall rule tables.

mod signature;
mod table;
mod temporal;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use signature::{signature, signatures, syscalls_for, Demand, Role, RoleSpec, Signature, OPEN_MODES};
pub use table::{export_table, import_table, TableError};
pub use temporal::{compile_temporal, EventPredicate, Facet, MonitorSpec};

use crate::lang::{Builtin, PolicyBody};
use crate::model::{EntityKind, EntityPattern, PermSet, Permission, Scope, SecurityModel};

/// What a checked argument resolved to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Pattern(String),
    /// An entity of this kind that no pattern matches.
    Default(EntityKind),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Pattern(name) => f.write_str(name),
            Target::Default(kind) => write!(f, "default.{kind}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Allow => "allow",
            Decision::Deny => "deny",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub role: Role,
    pub target: Target,
    /// Held permissions the decision rests on.
    pub perms: PermSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub syscall: String,
    /// One per role of the syscall's signature, in signature order.
    pub checks: Vec<Check>,
    pub decision: Decision,
    pub provenance: Vec<String>,
}

impl Rule {
    /// Whether the rule applies to these resolved targets (in role order).
    pub fn applies_to(&self, targets: &[&Target]) -> bool {
        self.checks.len() == targets.len() && self.checks.iter().zip(targets).all(|(c, t)| c.target == **t)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.syscall)?;
        for c in &self.checks {
            write!(f, " {}={}:{}", c.role, c.target, perm_list(c.perms))?;
        }
        write!(f, " {} # {}", self.decision.as_str(), self.provenance.join("; "))
    }
}

/// `Read+Write`, or `-` for the empty set.
pub(crate) fn perm_list(perms: PermSet) -> String {
    if perms.is_empty() {
        return "-".into();
    }
    perms.iter().map(|p| p.keyword()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    pub scope: Scope,
    pub version: u64,
    /// Patterns the rules were compiled against, in declaration order.
    pub entities: Vec<EntityPattern>,
    /// Every dispatch key; an empty list denies everything.
    pub dispatch: BTreeMap<String, Vec<Rule>>,
}

impl RuleTable {
    /// A table with an empty rule list for every key.
    pub fn deny_all(scope: Scope, version: u64, entities: Vec<EntityPattern>) -> RuleTable {
        RuleTable {
            scope,
            version,
            entities,
            dispatch: signatures().iter().map(|s| (s.key.clone(), Vec::new())).collect(),
        }
    }

    pub fn rule_count(&self) -> usize {
        self.dispatch.values().map(Vec::len).sum()
    }

    /// First rule of `key` applying to `targets`.
    pub fn lookup(&self, key: &str, targets: &[&Target]) -> Option<&Rule> {
        self.dispatch.get(key)?.iter().find(|r| r.applies_to(targets))
    }
}

/// Output of the compiler: a table per scope plus the temporal monitors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compiled {
    /// Indexed by `Scope::index`.
    pub tables: [RuleTable; 3],
    pub specs: Vec<MonitorSpec>,
}

impl Compiled {
    pub fn table(&self, scope: Scope) -> &RuleTable {
        &self.tables[scope.index()]
    }

    pub fn with_version(mut self, version: u64) -> Compiled {
        for t in &mut self.tables {
            t.version = version;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("temporal policy {policy} references unknown pattern {pattern}")]
    UnknownPattern { policy: String, pattern: String },
}

fn candidates(model: &SecurityModel, spec: &RoleSpec) -> Vec<(Target, EntityKind)> {
    let mut out = Vec::new();
    for (kind, _) in &spec.kinds {
        out.extend(
            model
                .patterns
                .iter()
                .filter(|p| p.kind == *kind)
                .map(|p| (Target::Pattern(p.name.clone()), *kind)),
        );
        out.push((Target::Default(*kind), *kind));
    }
    out
}

fn held(model: &SecurityModel, target: &Target, scope: Scope) -> PermSet {
    match target {
        Target::Pattern(name) => model.granted(name, scope),
        Target::Default(_) => model.default_perms(scope),
    }
}

/// Where the permissions in `used` come from.
fn sources(model: &SecurityModel, target: &Target, scope: Scope, used: PermSet, out: &mut Vec<String>) {
    let mut push = |s: String| {
        if !out.contains(&s) {
            out.push(s);
        }
    };
    match target {
        Target::Pattern(name) => {
            for g in model.grants_on(name, scope) {
                if !g.perms.intersection(used).is_empty() {
                    push(format!("grant {scope} on {name} {}", g.perms));
                }
            }
        }
        Target::Default(_) => push(format!("default {scope} {}", model.default_perms(scope))),
    }
}

fn compile_key(model: &SecurityModel, scope: Scope, sig: &Signature) -> Vec<Rule> {
    if sig.roles.iter().any(|r| r.kinds.is_empty()) {
        return Vec::new();
    }
    let per_role: Vec<Vec<(Target, EntityKind)>> = sig.roles.iter().map(|r| candidates(model, r)).collect();
    let no_exec_policy = model
        .policies
        .iter()
        .find(|p| p.body == PolicyBody::Builtin(Builtin::NoExecAgent))
        .map(|p| p.name.clone());

    let mut rules = Vec::new();
    let mut combo = vec![0usize; per_role.len()];
    loop {
        let picked: Vec<&(Target, EntityKind)> = combo.iter().zip(&per_role).map(|(i, c)| &c[*i]).collect();
        let demands: Vec<&Demand> = picked
            .iter()
            .zip(&sig.roles)
            .filter_map(|((_, kind), spec)| spec.demand(*kind))
            .collect();
        let perms: Vec<PermSet> = picked.iter().map(|(t, _)| held(model, t, scope)).collect();

        let forbidding = demands.iter().zip(&perms).position(|(d, p)| d.forbidden(*p));
        let rule = if let Some(at) = forbidding {
            let forbid = demands[at].forbid.map(PermSet::single).unwrap_or(PermSet::EMPTY);
            let mut provenance = Vec::new();
            sources(model, &picked[at].0, scope, forbid, &mut provenance);
            if forbid.contains(Permission::NoExecute) && scope == Scope::Agent {
                if let Some(name) = &no_exec_policy {
                    provenance.push(format!("builtin no_exec_agent (policy {name})"));
                }
            }
            let checks = sig
                .roles
                .iter()
                .zip(&picked)
                .zip(&perms)
                .enumerate()
                .map(|(i, ((spec, (t, _)), p))| Check {
                    role: spec.role,
                    target: t.clone(),
                    perms: if i == at { forbid } else { p.intersection(demands[i].relevant()) },
                })
                .collect();
            Some(Rule {
                syscall: sig.key.clone(),
                checks,
                decision: Decision::Deny,
                provenance,
            })
        } else if demands.iter().zip(&perms).all(|(d, p)| d.satisfied(*p)) {
            let mut provenance = Vec::new();
            let mut checks = Vec::new();
            for ((spec, (t, _)), (d, p)) in sig.roles.iter().zip(&picked).zip(demands.iter().zip(&perms)) {
                let used = p.intersection(d.relevant());
                sources(model, t, scope, used, &mut provenance);
                checks.push(Check {
                    role: spec.role,
                    target: t.clone(),
                    perms: used,
                });
            }
            Some(Rule {
                syscall: sig.key.clone(),
                checks,
                decision: Decision::Allow,
                provenance,
            })
        } else {
            None
        };
        rules.extend(rule);

        // odometer over the candidate lists
        let mut i = combo.len();
        loop {
            if i == 0 {
                return rules;
            }
            i -= 1;
            combo[i] += 1;
            if combo[i] < per_role[i].len() {
                break;
            }
            combo[i] = 0;
        }
    }
}

/// Rule table for one scope, version 1.
pub fn compile_scope(model: &SecurityModel, scope: Scope) -> RuleTable {
    RuleTable {
        scope,
        version: 1,
        entities: model.patterns.clone(),
        dispatch: signatures()
            .iter()
            .map(|s| (s.key.clone(), compile_key(model, scope, s)))
            .collect(),
    }
}

/// Tables for all scopes and a monitor for every temporal policy.
pub fn compile(model: &SecurityModel) -> Result<Compiled, CompileError> {
    let specs = model
        .policies
        .iter()
        .filter_map(|p| match &p.body {
            PolicyBody::Temporal(rule) => Some(compile_temporal(&p.name, rule, model)),
            _ => None,
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Compiled {
        tables: Scope::ALL.map(|s| compile_scope(model, s)),
        specs,
    })
}
