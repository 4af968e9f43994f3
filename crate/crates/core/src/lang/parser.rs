use std::fmt;

use thiserror::Error;

use super::lexer::{tokenize, Pos, Tok, Token};
use super::{
    Action, Builtin, Constraint, EventMatcher, EventTarget, Guard, Modality, Policy, PolicyBody,
    Relation, StaticFormula, TemporalRule,
};
use crate::model::{
    check_attribute, is_known_key, AttrKeyError, AttributeMatcher, EntityKind, EntityPattern,
    Grant, Matcher, PermSet, Permission, Scope, SecurityModel,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(" | "))?;
        }
        Ok(())
    }
}

/// Every problem found in one input, ordered by position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseErrors(pub Vec<ParseError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Parses policy text into a well-formed model, or reports every error found.
pub fn parse(text: &str) -> Result<SecurityModel, ParseErrors> {
    let (tokens, lex_errors) = tokenize(text);
    let mut p = Parser {
        tokens,
        i: 0,
        errors: lex_errors
            .into_iter()
            .map(|e| ParseError {
                line: e.pos.line,
                column: e.pos.column,
                message: e.message,
                expected: vec![],
            })
            .collect(),
        entities: vec![],
        grants: vec![],
        defaults: [None; 3],
        policies: vec![],
    };
    p.items();
    p.finish()
}

type PResult<T> = Result<T, ()>;

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    errors: Vec<ParseError>,
    entities: Vec<(EntityPattern, Pos)>,
    grants: Vec<(Grant, Pos)>,
    defaults: [Option<PermSet>; 3],
    /// Policies with the positions of pattern names they reference.
    policies: Vec<(Policy, Pos, Vec<(String, Pos)>)>,
}

const ITEM_KEYWORDS: [&str; 4] = ["entity", "grant", "default", "policy"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.i].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let j = (self.i + n).min(self.tokens.len() - 1);
        &self.tokens[j].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.i].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.i].clone();
        if self.i + 1 < self.tokens.len() {
            self.i += 1;
        }
        t
    }

    fn error_at(&mut self, pos: Pos, message: impl Into<String>, expected: &[&str]) {
        self.errors.push(ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }

    fn error_here(&mut self, message: impl Into<String>, expected: &[&str]) {
        let pos = self.pos();
        self.error_at(pos, message, expected);
    }

    fn unexpected<T>(&mut self, expected: &[&str]) -> PResult<T> {
        let found = self.peek().to_string();
        self.error_here(format!("unexpected {found}"), expected);
        Err(())
    }

    fn expect(&mut self, tok: Tok) -> PResult<Pos> {
        if *self.peek() == tok {
            Ok(self.advance().pos)
        } else {
            let label = tok.to_string();
            self.unexpected(&[&label])
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Pos)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.advance().pos;
                Ok((s, pos))
            }
            _ => self.unexpected(&[what]),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<Pos> {
        match self.peek() {
            Tok::Ident(s) if s == kw => Ok(self.advance().pos),
            _ => self.unexpected(&[&format!("`{kw}`")]),
        }
    }

    /// Skips to the next item keyword so later items are still checked.
    fn recover(&mut self, item_start: usize) {
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::Ident(s) if self.i > item_start && ITEM_KEYWORDS.contains(&s.as_str()) => return,
                _ => {
                    self.advance();
                }
            }
        }
    }

    fn items(&mut self) {
        while *self.peek() != Tok::Eof {
            let start = self.i;
            let ok = match self.peek().clone() {
                Tok::Ident(kw) if kw == "entity" => self.entity(),
                Tok::Ident(kw) if kw == "grant" => self.grant(),
                Tok::Ident(kw) if kw == "default" => self.default(),
                Tok::Ident(kw) if kw == "policy" => self.policy(),
                _ => self.unexpected(&["`entity`", "`grant`", "`default`", "`policy`"]),
            };
            if ok.is_err() {
                self.recover(start);
            }
        }
    }

    fn kind(&mut self) -> PResult<EntityKind> {
        if let Tok::Ident(s) = self.peek() {
            if let Some(k) = EntityKind::from_keyword(s) {
                self.advance();
                return Ok(k);
            }
        }
        self.unexpected(&["`file`", "`dir`", "`proc`", "`socket`", "`dev`"])
    }

    fn scope(&mut self) -> PResult<Scope> {
        if let Tok::Ident(s) = self.peek() {
            if let Ok(scope) = s.parse::<Scope>() {
                self.advance();
                return Ok(scope);
            }
        }
        self.unexpected(&["`Sandbox`", "`Agent`", "`Monitor`"])
    }

    fn permset(&mut self) -> PResult<PermSet> {
        self.expect(Tok::LBrace)?;
        let mut set = PermSet::EMPTY;
        if *self.peek() == Tok::RBrace {
            self.advance();
            return Ok(set);
        }
        loop {
            let perm = match self.peek() {
                Tok::Ident(s) => Permission::from_keyword(s),
                _ => None,
            };
            match perm {
                Some(p) => {
                    self.advance();
                    set.insert(p);
                }
                None => {
                    return self.unexpected(&["`Read`", "`Write`", "`Append`", "`NoExec`", "`Visible`"])
                }
            }
            match self.peek() {
                Tok::Comma => {
                    self.advance();
                }
                Tok::RBrace => {
                    self.advance();
                    return Ok(set);
                }
                _ => return self.unexpected(&["`,`", "`}`"]),
            }
        }
    }

    fn attr_value(&mut self) -> PResult<Matcher> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(Matcher::Glob(s))
            }
            Tok::Int(lo) => {
                self.advance();
                if *self.peek() != Tok::DotDot {
                    return Ok(Matcher::Int(lo));
                }
                self.advance();
                let pos = self.pos();
                match self.peek().clone() {
                    Tok::Int(hi) => {
                        self.advance();
                        if lo > hi {
                            self.error_at(pos, format!("empty range {lo}..{hi}"), &[]);
                            return Err(());
                        }
                        Ok(Matcher::IntRange(lo, hi))
                    }
                    _ => self.unexpected(&["integer"]),
                }
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.advance();
                Ok(Matcher::Bool(s == "true"))
            }
            _ => self.unexpected(&["string", "integer", "`true`", "`false`"]),
        }
    }

    /// `{ key: value, ... }`, with each key checked by `check`.
    fn attrs(
        &mut self,
        mut check: impl FnMut(&str, &Matcher) -> Result<(), String>,
    ) -> PResult<Vec<AttributeMatcher>> {
        self.expect(Tok::LBrace)?;
        let mut attrs: Vec<AttributeMatcher> = Vec::new();
        if *self.peek() == Tok::RBrace {
            self.advance();
            return Ok(attrs);
        }
        loop {
            let (key, key_pos) = self.ident("attribute name")?;
            self.expect(Tok::Colon)?;
            let matcher = self.attr_value()?;
            if attrs.iter().any(|a| a.key == key) {
                self.error_at(key_pos, format!("duplicate attribute {key}"), &[]);
            } else if let Err(msg) = check(&key, &matcher) {
                self.error_at(key_pos, msg, &[]);
            }
            attrs.push(AttributeMatcher { key, matcher });
            match self.peek() {
                Tok::Comma => {
                    self.advance();
                }
                Tok::RBrace => {
                    self.advance();
                    return Ok(attrs);
                }
                _ => return self.unexpected(&["`,`", "`}`"]),
            }
        }
    }

    fn kind_attrs(&mut self, kind: EntityKind) -> PResult<Vec<AttributeMatcher>> {
        self.attrs(|key, m| attr_message(kind, key, m))
    }

    fn entity(&mut self) -> PResult<()> {
        self.keyword("entity")?;
        let kind = self.kind()?;
        let (name, pos) = self.ident("entity name")?;
        let attrs = self.kind_attrs(kind)?;
        let declaration_index = self.entities.len();
        self.entities.push((
            EntityPattern {
                name,
                kind,
                attrs,
                declaration_index,
            },
            pos,
        ));
        Ok(())
    }

    fn grant(&mut self) -> PResult<()> {
        self.keyword("grant")?;
        let scope = self.scope()?;
        self.keyword("on")?;
        let (pattern, pos) = self.ident("entity name")?;
        let perms = self.permset()?;
        self.grants.push((Grant { scope, pattern, perms }, pos));
        Ok(())
    }

    fn default(&mut self) -> PResult<()> {
        self.keyword("default")?;
        let pos = self.pos();
        let scope = self.scope()?;
        let perms = self.permset()?;
        let slot = &mut self.defaults[scope as usize];
        if slot.is_some() {
            self.error_at(pos, format!("duplicate default for {scope}"), &[]);
        } else {
            *slot = Some(perms);
        }
        Ok(())
    }

    fn policy(&mut self) -> PResult<()> {
        self.keyword("policy")?;
        let (name, pos) = self.ident("policy name")?;
        let mut refs = Vec::new();
        let body = match self.peek().clone() {
            Tok::Ident(s) if s == "builtin" => {
                self.advance();
                let (id, id_pos) = self.ident("builtin id")?;
                match Builtin::from_id(&id) {
                    Some(b) => PolicyBody::Builtin(b),
                    None => {
                        self.error_at(
                            id_pos,
                            format!("unknown builtin {id}"),
                            &["`scope_hierarchy`", "`no_exec_agent`", "`credential_visibility`"],
                        );
                        return Err(());
                    }
                }
            }
            Tok::Ident(s) if s == "static" => {
                self.advance();
                PolicyBody::Static(self.static_formula()?)
            }
            Tok::Ident(s) if s == "temporal" => {
                self.advance();
                PolicyBody::Temporal(self.temporal(&mut refs)?)
            }
            _ => return self.unexpected(&["`builtin`", "`static`", "`temporal`"]),
        };
        self.policies.push((Policy { name, body }, pos, refs));
        Ok(())
    }

    fn static_formula(&mut self) -> PResult<StaticFormula> {
        self.expect(Tok::LBrace)?;
        self.keyword("forall")?;
        let (var, _) = self.ident("variable")?;
        self.expect(Tok::Colon)?;

        let mut guard = Guard::default();
        let mut any = false;
        if let Tok::Ident(s) = self.peek() {
            if let Some(k) = EntityKind::from_keyword(s) {
                self.advance();
                guard.kind = Some(k);
                any = true;
            }
        }
        if *self.peek() == Tok::LBrace {
            let kind = guard.kind;
            guard.attrs = self.attrs(|key, m| match kind {
                Some(k) => attr_message(k, key, m),
                None => guard_message(key, m),
            })?;
            any = true;
        }
        if !any {
            return self.unexpected(&["entity kind", "`{`"]);
        }

        self.expect(Tok::Arrow)?;
        self.keyword("perms")?;
        self.expect(Tok::LParen)?;
        let (used, used_pos) = self.ident("variable")?;
        if used != var {
            self.error_at(used_pos, format!("unbound variable {used}"), &[]);
        }
        self.expect(Tok::Comma)?;
        let scope = self.scope()?;
        self.expect(Tok::RParen)?;
        let relation = match self.peek() {
            Tok::EqEq => Relation::Equals,
            Tok::Le => Relation::SubsetOf,
            Tok::Ident(s) if s == "contains" => Relation::Contains,
            Tok::Ident(s) if s == "excludes" => Relation::Excludes,
            _ => return self.unexpected(&["`==`", "`<=`", "`contains`", "`excludes`"]),
        };
        self.advance();
        let perms = self.permset()?;
        self.expect(Tok::RBrace)?;
        Ok(StaticFormula {
            var,
            guard,
            constraint: Constraint {
                scope,
                relation,
                perms,
            },
        })
    }

    fn temporal(&mut self, refs: &mut Vec<(String, Pos)>) -> PResult<TemporalRule> {
        self.expect(Tok::LBrace)?;
        self.keyword("when")?;
        let trigger = self.event(refs)?;
        let modality = match self.peek() {
            Tok::Ident(s) if s == "always" => {
                self.advance();
                self.keyword("forbid")?;
                Modality::AlwaysForbid
            }
            Tok::Ident(s) if s == "eventually" => {
                self.advance();
                self.keyword("require")?;
                Modality::EventuallyRequire
            }
            _ => return self.unexpected(&["`always`", "`eventually`"]),
        };
        let body = self.event(refs)?;
        self.expect(Tok::RBrace)?;
        Ok(TemporalRule {
            trigger,
            modality,
            body,
        })
    }

    fn event(&mut self, refs: &mut Vec<(String, Pos)>) -> PResult<EventMatcher> {
        let scope = self.scope()?;
        let action = match self.peek() {
            Tok::Ident(s) => Action::from_keyword(s),
            _ => None,
        };
        let Some(action) = action else {
            return self.unexpected(&["`Reads`", "`Writes`", "`Appends`", "`Execs`", "`Stats`"]);
        };
        self.advance();
        let (target, reference) = self.event_target()?;
        refs.extend(reference);
        Ok(EventMatcher {
            scope,
            action,
            target,
        })
    }

    fn event_target(&mut self) -> PResult<(EventTarget, Option<(String, Pos)>)> {
        if let Tok::Ident(s) = self.peek() {
            if let Some(kind) = EntityKind::from_keyword(s) {
                if *self.peek_at(1) == Tok::LBrace {
                    self.advance();
                    let attrs = self.kind_attrs(kind)?;
                    return Ok((EventTarget::Attrs { kind, attrs }, None));
                }
            }
        }
        let (name, pos) = self.ident("entity name or `kind { ... }`")?;
        Ok((EventTarget::Pattern(name.clone()), Some((name, pos))))
    }

    fn finish(mut self) -> Result<SecurityModel, ParseErrors> {
        let mut patterns: Vec<EntityPattern> = Vec::with_capacity(self.entities.len());
        for (pattern, pos) in std::mem::take(&mut self.entities) {
            if patterns.iter().any(|p| p.name == pattern.name) {
                self.error_at(pos, format!("duplicate entity {}", pattern.name), &[]);
            } else {
                patterns.push(EntityPattern {
                    declaration_index: patterns.len(),
                    ..pattern
                });
            }
        }
        let known = |name: &str| patterns.iter().any(|p| p.name == name);

        let mut grants = Vec::with_capacity(self.grants.len());
        let mut dangling = Vec::new();
        for (grant, pos) in std::mem::take(&mut self.grants) {
            if known(&grant.pattern) {
                grants.push(grant);
            } else {
                dangling.push((grant.pattern, pos));
            }
        }

        let mut policies: Vec<Policy> = Vec::with_capacity(self.policies.len());
        for (policy, pos, refs) in std::mem::take(&mut self.policies) {
            for (name, ref_pos) in refs {
                if !known(&name) {
                    dangling.push((name, ref_pos));
                }
            }
            if policies.iter().any(|p| p.name == policy.name) {
                self.error_at(pos, format!("duplicate policy {}", policy.name), &[]);
            } else {
                policies.push(policy);
            }
        }
        for (name, pos) in dangling {
            self.error_at(pos, format!("unknown pattern {name}"), &[]);
        }

        if !self.errors.is_empty() {
            let mut errors = self.errors;
            errors.sort_by_key(|e| (e.line, e.column));
            return Err(ParseErrors(errors));
        }
        Ok(SecurityModel {
            patterns,
            grants,
            defaults: self.defaults.map(Option::unwrap_or_default),
            policies,
        })
    }
}

fn attr_message(kind: EntityKind, key: &str, m: &Matcher) -> Result<(), String> {
    check_attribute(kind, key, m).map_err(|e| match e {
        AttrKeyError::UnknownKey => format!("unknown attribute key {key} for {kind}"),
        AttrKeyError::WrongType { expected, found } => {
            format!("attribute {key} expects {expected}, found {found}")
        }
    })
}

/// Guards without a kind accept any key that is valid for some kind.
fn guard_message(key: &str, m: &Matcher) -> Result<(), String> {
    if !is_known_key(key) {
        return Err(format!("unknown attribute key {key}"));
    }
    if EntityKind::ALL.iter().any(|k| check_attribute(*k, key, m).is_ok()) {
        Ok(())
    } else {
        attr_message(
            *EntityKind::ALL
                .iter()
                .find(|k| check_attribute(**k, key, m) != Err(AttrKeyError::UnknownKey))
                .expect("known key belongs to some kind"),
            key,
            m,
        )
    }
}
