//! The `.claw` policy language.
//!
//! ```text
//! entity file SecretKeys { path: "/secure/*", credential: true }
//! entity socket Outbound { addr: "*" }
//! grant Agent on SecretKeys { Visible }
//! default Sandbox { }
//! policy creds builtin credential_visibility
//! policy iso static { forall e : file { path: "/secure/*" } => perms(e, Sandbox) == {} }
//! policy exfil temporal { when Agent Reads SecretKeys always forbid Agent Writes Outbound }
//! ```

mod lexer;
mod parser;
mod render;

use std::fmt;

use crate::model::{AttributeMatcher, EntityKind, PermSet, Permission, Scope};

pub use parser::{parse, ParseError, ParseErrors};
pub use render::render;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Builtin {
    ScopeHierarchy,
    NoExecAgent,
    CredentialVisibility,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [
        Builtin::ScopeHierarchy,
        Builtin::NoExecAgent,
        Builtin::CredentialVisibility,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Builtin::ScopeHierarchy => "scope_hierarchy",
            Builtin::NoExecAgent => "no_exec_agent",
            Builtin::CredentialVisibility => "credential_visibility",
        }
    }

    pub fn from_id(s: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.id() == s)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub name: String,
    pub body: PolicyBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyBody {
    Builtin(Builtin),
    Static(StaticFormula),
    Temporal(TemporalRule),
}

/// `forall var : guard => perms(var, scope) REL perms`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticFormula {
    pub var: String,
    pub guard: Guard,
    pub constraint: Constraint,
}

/// Restricts the quantified variable; an empty guard admits every entity.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Guard {
    pub kind: Option<EntityKind>,
    pub attrs: Vec<AttributeMatcher>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraint {
    pub scope: Scope,
    pub relation: Relation,
    pub perms: PermSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Equals,
    SubsetOf,
    Contains,
    Excludes,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Equals => "==",
            Relation::SubsetOf => "<=",
            Relation::Contains => "contains",
            Relation::Excludes => "excludes",
        }
    }

    /// Whether `actual REL expected` holds.
    pub fn holds(self, actual: PermSet, expected: PermSet) -> bool {
        match self {
            Relation::Equals => actual == expected,
            Relation::SubsetOf => actual.is_subset(expected),
            Relation::Contains => expected.is_subset(actual),
            Relation::Excludes => actual.intersection(expected).is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalRule {
    pub trigger: EventMatcher,
    pub modality: Modality,
    pub body: EventMatcher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Once the trigger occurs, the body must never occur afterwards.
    AlwaysForbid,
    /// Once the trigger occurs, the body must occur at some later point.
    EventuallyRequire,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventMatcher {
    pub scope: Scope,
    pub action: Action,
    pub target: EventTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Reads,
    Writes,
    Appends,
    Execs,
    Stats,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Reads, Action::Writes, Action::Appends, Action::Execs, Action::Stats];

    pub fn keyword(self) -> &'static str {
        match self {
            Action::Reads => "Reads",
            Action::Writes => "Writes",
            Action::Appends => "Appends",
            Action::Execs => "Execs",
            Action::Stats => "Stats",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.keyword() == s)
    }

    /// Permission class the action exercises.
    pub fn permission(self) -> Permission {
        match self {
            Action::Reads => Permission::Read,
            Action::Writes => Permission::Write,
            Action::Appends => Permission::Append,
            Action::Execs => Permission::NoExecute,
            Action::Stats => Permission::Visible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventTarget {
    Pattern(String),
    Attrs { kind: EntityKind, attrs: Vec<AttributeMatcher> },
}
