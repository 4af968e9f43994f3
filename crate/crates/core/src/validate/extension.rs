//! Which elements of the finite validation domain a guard can denote.
//!
//! The domain is the declared patterns plus one synthetic element standing
//! for every entity no pattern matches. Glob overlap is a prefix test: a
//! pattern glob overlaps a guard glob when the pattern's literal prefix (up
//! to its first `*`) is accepted by the guard.

use crate::lang::EventTarget;
use crate::model::{
    check_attribute, glob_match, literal_prefix, AttrKeyError, AttributeMatcher, EntityKind,
    EntityPattern, Matcher, PermSet, Scope, SecurityModel, LABEL_KEYS,
};

/// One element of the validation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element<'a> {
    Pattern(&'a EntityPattern),
    /// Any entity not matched by a declared pattern.
    Defaults,
}

impl<'a> Element<'a> {
    pub fn name(&self) -> &'a str {
        match self {
            Element::Pattern(p) => &p.name,
            Element::Defaults => "defaults",
        }
    }

    pub fn perms(&self, model: &SecurityModel, scope: Scope) -> PermSet {
        match self {
            Element::Pattern(p) => model.granted(&p.name, scope),
            Element::Defaults => model.default_perms(scope),
        }
    }

    pub fn kind(&self) -> Option<EntityKind> {
        match self {
            Element::Pattern(p) => Some(p.kind),
            Element::Defaults => None,
        }
    }

    pub fn is_credential(&self) -> bool {
        matches!(self, Element::Pattern(p) if p.is_credential())
    }
}

/// Patterns in declaration order followed by the defaults element.
pub fn domain(model: &SecurityModel) -> impl Iterator<Item = Element<'_>> {
    model
        .patterns
        .iter()
        .map(Element::Pattern)
        .chain(std::iter::once(Element::Defaults))
}

fn ranges_overlap(a: (i64, i64), b: (i64, i64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

fn as_range(m: &Matcher) -> Option<(i64, i64)> {
    match m {
        Matcher::Int(n) => Some((*n, *n)),
        Matcher::IntRange(lo, hi) => Some((*lo, *hi)),
        _ => None,
    }
}

/// Whether some entity denoted by `pattern` satisfies `guard`.
fn attr_overlaps(pattern: &EntityPattern, guard: &AttributeMatcher) -> bool {
    if let Err(AttrKeyError::UnknownKey) = check_attribute(pattern.kind, &guard.key, &guard.matcher) {
        return false;
    }
    let own = pattern.attr(&guard.key);
    if LABEL_KEYS.contains(&guard.key.as_str()) {
        let value = matches!(own, Some(Matcher::Bool(true)));
        return guard.matcher == Matcher::Bool(value);
    }
    match (&guard.matcher, own) {
        (_, None) => true,
        (Matcher::Glob(g), Some(Matcher::Glob(p))) => glob_match(g, literal_prefix(p)),
        (g, Some(p)) => match (as_range(g), as_range(p)) {
            (Some(a), Some(b)) => ranges_overlap(a, b),
            _ => false,
        },
    }
}

/// Unmatched entities carry no labels but may have any other attribute value.
fn defaults_overlap(guard: &AttributeMatcher) -> bool {
    if LABEL_KEYS.contains(&guard.key.as_str()) {
        guard.matcher == Matcher::Bool(false)
    } else {
        true
    }
}

/// Guard-extension membership for an element.
pub fn in_extension(element: Element<'_>, kind: Option<EntityKind>, attrs: &[AttributeMatcher]) -> bool {
    match element {
        Element::Pattern(p) => {
            kind.is_none_or(|k| k == p.kind) && attrs.iter().all(|a| attr_overlaps(p, a))
        }
        Element::Defaults => attrs.iter().all(defaults_overlap),
    }
}

/// Whether an event target can denote `element`.
pub fn target_covers(target: &EventTarget, element: Element<'_>) -> bool {
    match (target, element) {
        (EventTarget::Pattern(name), Element::Pattern(p)) => *name == p.name,
        (EventTarget::Pattern(_), Element::Defaults) => false,
        (EventTarget::Attrs { kind, attrs }, e) => in_extension(e, Some(*kind), attrs),
    }
}
