//! Domain types of the security model: entities, scopes, permissions,
//! attribute matchers, grants, and per-scope permission lookup.

mod glob;
mod perm;

pub use glob::{glob_match, literal_prefix};
pub use perm::{PermSet, Permission, Scope};

use std::fmt;

use crate::lang::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    File,
    Directory,
    Process,
    Socket,
    Device,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::File,
        EntityKind::Directory,
        EntityKind::Process,
        EntityKind::Socket,
        EntityKind::Device,
    ];

    /// Keyword used by the policy language.
    pub fn keyword(self) -> &'static str {
        match self {
            EntityKind::File => "file",
            EntityKind::Directory => "dir",
            EntityKind::Process => "proc",
            EntityKind::Socket => "socket",
            EntityKind::Device => "dev",
        }
    }

    pub fn from_keyword(s: &str) -> Option<EntityKind> {
        EntityKind::ALL.into_iter().find(|k| k.keyword() == s)
    }

    /// Kinds whose primary attribute is a filesystem path.
    pub fn is_path_kind(self) -> bool {
        matches!(self, EntityKind::File | EntityKind::Directory | EntityKind::Device)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Matcher {
    Glob(String),
    Int(i64),
    /// Inclusive on both ends.
    IntRange(i64, i64),
    Bool(bool),
}

impl Matcher {
    fn type_name(&self) -> &'static str {
        match self {
            Matcher::Glob(_) => "string",
            Matcher::Int(_) | Matcher::IntRange(..) => "integer",
            Matcher::Bool(_) => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeMatcher {
    pub key: String,
    pub matcher: Matcher,
}

impl AttributeMatcher {
    pub fn new(key: impl Into<String>, matcher: Matcher) -> Self {
        AttributeMatcher {
            key: key.into(),
            matcher,
        }
    }

    pub fn glob(key: impl Into<String>, pattern: impl Into<String>) -> Self {
        Self::new(key, Matcher::Glob(pattern.into()))
    }

    pub fn flag(key: impl Into<String>, value: bool) -> Self {
        Self::new(key, Matcher::Bool(value))
    }
}

/// Attribute keys that label a pattern rather than describe an observable
/// property of a runtime object. They are ignored by [`SecurityModel::resolve`].
pub const LABEL_KEYS: [&str; 2] = ["credential", "sensitive"];

/// Why an attribute is not acceptable for a kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrKeyError {
    UnknownKey,
    WrongType { expected: &'static str, found: &'static str },
}

/// Checks `matcher` against the fixed key vocabulary of `kind`.
pub fn check_attribute(kind: EntityKind, key: &str, matcher: &Matcher) -> Result<(), AttrKeyError> {
    let expected = match (kind, key) {
        (_, "credential" | "sensitive") => "boolean",
        (k, "path") if k.is_path_kind() => "string",
        (EntityKind::Socket, "addr") => "string",
        (EntityKind::Process, "pid") => "integer",
        (EntityKind::Process, "scope") => "string",
        _ => return Err(AttrKeyError::UnknownKey),
    };
    let found = matcher.type_name();
    if expected == found {
        Ok(())
    } else {
        Err(AttrKeyError::WrongType { expected, found })
    }
}

/// True when `key` is valid for at least one kind.
pub fn is_known_key(key: &str) -> bool {
    matches!(key, "credential" | "sensitive" | "path" | "addr" | "pid" | "scope")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPattern {
    pub name: String,
    pub kind: EntityKind,
    /// Conjunction; every matcher must accept.
    pub attrs: Vec<AttributeMatcher>,
    pub declaration_index: usize,
}

impl EntityPattern {
    pub fn attr(&self, key: &str) -> Option<&Matcher> {
        self.attrs.iter().find(|a| a.key == key).map(|a| &a.matcher)
    }

    fn label(&self, key: &str) -> bool {
        matches!(self.attr(key), Some(Matcher::Bool(true)))
    }

    pub fn is_credential(&self) -> bool {
        self.label("credential")
    }

    pub fn is_sensitive(&self) -> bool {
        self.label("sensitive")
    }

    /// Whether every non-label matcher accepts the concrete object.
    pub fn matches(&self, concrete: &Concrete<'_>) -> bool {
        self.attrs
            .iter()
            .filter(|a| !LABEL_KEYS.contains(&a.key.as_str()))
            .all(|a| concrete.accepts(&a.key, &a.matcher))
    }
}

/// Observable attributes of a runtime object, keyed by the fixed vocabulary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Concrete<'a> {
    pub path: Option<&'a str>,
    pub addr: Option<&'a str>,
    pub pid: Option<i64>,
    pub scope: Option<Scope>,
}

impl<'a> Concrete<'a> {
    pub fn path(path: &'a str) -> Self {
        Concrete {
            path: Some(path),
            ..Default::default()
        }
    }

    pub fn addr(addr: &'a str) -> Self {
        Concrete {
            addr: Some(addr),
            ..Default::default()
        }
    }

    pub fn process(pid: i64, scope: Option<Scope>) -> Self {
        Concrete {
            pid: Some(pid),
            scope,
            ..Default::default()
        }
    }

    /// Matching is total: a missing value or a type mismatch is a non-match.
    pub fn accepts(&self, key: &str, matcher: &Matcher) -> bool {
        match (key, matcher) {
            ("path", Matcher::Glob(g)) => self.path.is_some_and(|p| glob_match(g, p)),
            ("addr", Matcher::Glob(g)) => self.addr.is_some_and(|a| glob_match(g, a)),
            ("scope", Matcher::Glob(g)) => self.scope.is_some_and(|s| glob_match(g, s.as_str())),
            ("pid", Matcher::Int(n)) => self.pid == Some(*n),
            ("pid", Matcher::IntRange(lo, hi)) => self.pid.is_some_and(|p| *lo <= p && p <= *hi),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub scope: Scope,
    pub pattern: String,
    pub perms: PermSet,
}

/// The agent system plus its proposition set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SecurityModel {
    pub patterns: Vec<EntityPattern>,
    pub grants: Vec<Grant>,
    /// Indexed by `Scope as usize`; applied to entities no pattern matches.
    pub defaults: [PermSet; 3],
    pub policies: Vec<Policy>,
}

impl SecurityModel {
    pub fn pattern(&self, name: &str) -> Option<&EntityPattern> {
        self.patterns.iter().find(|p| p.name == name)
    }

    pub fn pattern_index(&self, name: &str) -> Option<usize> {
        self.patterns.iter().position(|p| p.name == name)
    }

    pub fn default_perms(&self, scope: Scope) -> PermSet {
        self.defaults[scope.index()]
    }

    /// First declared pattern of `kind` whose matchers all accept `concrete`.
    pub fn resolve(&self, kind: EntityKind, concrete: &Concrete<'_>) -> Option<&EntityPattern> {
        self.patterns
            .iter()
            .find(|p| p.kind == kind && p.matches(concrete))
    }

    /// Union of all grants on `pattern` for `scope`.
    pub fn granted(&self, pattern: &str, scope: Scope) -> PermSet {
        self.grants
            .iter()
            .filter(|g| g.scope == scope && g.pattern == pattern)
            .fold(PermSet::EMPTY, |acc, g| acc.union(g.perms))
    }

    /// P(e, s): grants of the resolved pattern, or the scope default when nothing matches.
    pub fn perms_of(&self, kind: EntityKind, concrete: &Concrete<'_>, scope: Scope) -> PermSet {
        match self.resolve(kind, concrete) {
            Some(p) => self.granted(&p.name, scope),
            None => self.default_perms(scope),
        }
    }

    /// Grants on `pattern` for `scope`, in declaration order.
    pub fn grants_on<'a>(&'a self, pattern: &'a str, scope: Scope) -> impl Iterator<Item = &'a Grant> + 'a {
        self.grants
            .iter()
            .filter(move |g| g.scope == scope && g.pattern == pattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Permission::*;

    fn pattern(name: &str, kind: EntityKind, attrs: Vec<AttributeMatcher>, index: usize) -> EntityPattern {
        EntityPattern {
            name: name.into(),
            kind,
            attrs,
            declaration_index: index,
        }
    }

    fn secret_model() -> SecurityModel {
        SecurityModel {
            patterns: vec![pattern(
                "SecretKeys",
                EntityKind::File,
                vec![
                    AttributeMatcher::glob("path", "/secure/*"),
                    AttributeMatcher::flag("credential", true),
                ],
                0,
            )],
            grants: vec![Grant {
                scope: Scope::Agent,
                pattern: "SecretKeys".into(),
                perms: PermSet::single(Visible),
            }],
            ..Default::default()
        }
    }

    #[test]
    fn resolve_examples() {
        let m = secret_model();
        let hit = m.resolve(EntityKind::File, &Concrete::path("/secure/key"));
        assert_eq!(hit.map(|p| p.name.as_str()), Some("SecretKeys"));
        assert!(m.resolve(EntityKind::File, &Concrete::path("/tmp/x")).is_none());
        // kind must agree
        assert!(m.resolve(EntityKind::Directory, &Concrete::path("/secure/key")).is_none());
    }

    #[test]
    fn first_declared_wins() {
        let m = SecurityModel {
            patterns: vec![
                pattern("A", EntityKind::File, vec![AttributeMatcher::glob("path", "/secure/*")], 0),
                pattern("B", EntityKind::File, vec![AttributeMatcher::glob("path", "/secure/key")], 1),
            ],
            ..Default::default()
        };
        let hit = m.resolve(EntityKind::File, &Concrete::path("/secure/key")).unwrap();
        assert_eq!(hit.name, "A");
    }

    #[test]
    fn perms_of_examples() {
        let mut m = secret_model();
        assert_eq!(
            m.perms_of(EntityKind::File, &Concrete::path("/secure/key"), Scope::Agent),
            PermSet::single(Visible)
        );
        assert_eq!(
            m.perms_of(EntityKind::File, &Concrete::path("/elsewhere"), Scope::Agent),
            PermSet::EMPTY
        );
        // matched pattern without a grant for the scope gets nothing, not the default
        m.defaults[Scope::Sandbox.index()] = PermSet::single(Read);
        assert_eq!(
            m.perms_of(EntityKind::File, &Concrete::path("/secure/key"), Scope::Sandbox),
            PermSet::EMPTY
        );
        m.grants.push(Grant {
            scope: Scope::Agent,
            pattern: "SecretKeys".into(),
            perms: PermSet::from([Read]),
        });
        m.grants.push(Grant {
            scope: Scope::Agent,
            pattern: "SecretKeys".into(),
            perms: PermSet::from([Append]),
        });
        assert_eq!(
            m.perms_of(EntityKind::File, &Concrete::path("/secure/key"), Scope::Agent),
            PermSet::from([Read, Append, Visible])
        );
    }

    #[test]
    fn process_and_socket_attributes() {
        let m = SecurityModel {
            patterns: vec![
                pattern("Workers", EntityKind::Process, vec![AttributeMatcher::new("pid", Matcher::IntRange(100, 199))], 0),
                pattern("Tools", EntityKind::Process, vec![AttributeMatcher::glob("scope", "Sandbox")], 1),
                pattern("Web", EntityKind::Socket, vec![AttributeMatcher::glob("addr", "*:443")], 2),
            ],
            ..Default::default()
        };
        let name = |k, c: Concrete<'_>| m.resolve(k, &c).map(|p| p.name.clone());
        assert_eq!(name(EntityKind::Process, Concrete::process(150, Some(Scope::Agent))), Some("Workers".into()));
        assert_eq!(name(EntityKind::Process, Concrete::process(7, Some(Scope::Sandbox))), Some("Tools".into()));
        assert_eq!(name(EntityKind::Process, Concrete::process(7, None)), None);
        assert_eq!(name(EntityKind::Socket, Concrete::addr("evil.example:443")), Some("Web".into()));
        assert_eq!(name(EntityKind::Socket, Concrete::addr("evil.example:80")), None);
    }

    #[test]
    fn attribute_vocabulary() {
        assert!(check_attribute(EntityKind::File, "path", &Matcher::Glob("/x".into())).is_ok());
        assert!(check_attribute(EntityKind::Socket, "addr", &Matcher::Glob("*".into())).is_ok());
        assert!(check_attribute(EntityKind::Process, "pid", &Matcher::IntRange(1, 2)).is_ok());
        assert_eq!(
            check_attribute(EntityKind::Socket, "path", &Matcher::Glob("/x".into())),
            Err(AttrKeyError::UnknownKey)
        );
        assert!(matches!(
            check_attribute(EntityKind::File, "credential", &Matcher::Int(1)),
            Err(AttrKeyError::WrongType { .. })
        ));
    }
}
