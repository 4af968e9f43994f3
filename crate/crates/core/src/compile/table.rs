//! The `clawtable v1` text format.
//!
//! ```text
//! clawtable v1
//! entity file Data { path: "/data/*" }
//! policy exfil temporal { when Agent Reads Data always forbid Agent Writes Net }
//! scope Agent version 1
//! syscall read
//! read fd=Data:Read allow # grant Agent on Data { Read }
//! ```
//!
//! Entity and temporal policy lines use the policy language. Every scope
//! lists a `syscall` header for each dispatch key followed by its rules.
//! Lines starting with `#` are comments.

use std::collections::HashSet;
use std::fmt::Write;

use thiserror::Error;

use super::{compile_temporal, signature, Check, Compiled, Decision, Role, Rule, RuleTable, Target};
use crate::lang::{parse, render, Policy, PolicyBody};
use crate::model::{EntityKind, EntityPattern, PermSet, Permission, Scope, SecurityModel};

pub const HEADER: &str = "clawtable v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TableError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, TableError> {
    Err(TableError {
        line,
        message: message.into(),
    })
}

pub fn export_table(compiled: &Compiled) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let preamble = SecurityModel {
        patterns: compiled.tables[0].entities.clone(),
        policies: compiled
            .specs
            .iter()
            .map(|s| Policy {
                name: s.name.clone(),
                body: PolicyBody::Temporal(s.rule.clone()),
            })
            .collect(),
        ..Default::default()
    };
    out.push_str(&render(&preamble));
    for spec in &compiled.specs {
        let _ = writeln!(
            out,
            "# monitor {}: trigger {} {{{}}} body {} {{{}}}",
            spec.name,
            spec.trigger.scope,
            spec.trigger.syscalls.join(","),
            spec.body.scope,
            spec.body.syscalls.join(",")
        );
    }
    for table in &compiled.tables {
        let _ = writeln!(out, "scope {} version {}", table.scope, table.version);
        for (key, rules) in &table.dispatch {
            let _ = writeln!(out, "syscall {key}");
            for rule in rules {
                let _ = writeln!(out, "{rule}");
            }
        }
    }
    out
}

fn parse_perms(line: usize, text: &str) -> Result<PermSet, TableError> {
    if text == "-" {
        return Ok(PermSet::EMPTY);
    }
    text.split('+')
        .map(|p| Permission::from_keyword(p).map_or_else(|| err(line, format!("unknown permission {p}")), Ok))
        .collect()
}

fn parse_target(line: usize, text: &str, entities: &[EntityPattern]) -> Result<(Target, EntityKind), TableError> {
    if let Some(kind) = text.strip_prefix("default.") {
        let kind = EntityKind::from_keyword(kind).map_or_else(|| err(line, format!("unknown kind {kind}")), Ok)?;
        return Ok((Target::Default(kind), kind));
    }
    match entities.iter().find(|e| e.name == text) {
        Some(e) => Ok((Target::Pattern(text.into()), e.kind)),
        None => err(line, format!("unknown entity {text}")),
    }
}

fn parse_rule(line: usize, text: &str, key: &str, entities: &[EntityPattern]) -> Result<Rule, TableError> {
    let (body, provenance) = match text.split_once('#') {
        Some((b, p)) => (b, p),
        None => return err(line, "rule without provenance"),
    };
    let provenance: Vec<String> = provenance
        .split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if provenance.is_empty() {
        return err(line, "rule without provenance");
    }
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let (Some(first), Some(last)) = (tokens.first(), tokens.last()) else {
        return err(line, "empty rule");
    };
    if *first != key {
        return err(line, format!("rule for {first} under syscall {key}"));
    }
    let decision = match *last {
        "allow" => Decision::Allow,
        "deny" => Decision::Deny,
        other => return err(line, format!("expected allow or deny, found {other}")),
    };
    let sig = signature(key).map_or_else(|| err(line, format!("unknown syscall {key}")), Ok)?;
    let check_tokens = &tokens[1..tokens.len() - 1];
    if check_tokens.len() != sig.roles.len() || tokens.len() < 2 {
        return err(line, format!("{key} takes {} checks", sig.roles.len()));
    }
    let mut checks = Vec::new();
    for (tok, spec) in check_tokens.iter().zip(&sig.roles) {
        let Some((role, rest)) = tok.split_once('=') else {
            return err(line, format!("malformed check {tok}"));
        };
        let Some((target, perms)) = rest.rsplit_once(':') else {
            return err(line, format!("malformed check {tok}"));
        };
        let role: Role = role.parse().map_or_else(|_| err(line, format!("unknown role {role}")), Ok)?;
        if role != spec.role {
            return err(line, format!("expected role {}, found {role}", spec.role));
        }
        let (target, kind) = parse_target(line, target, entities)?;
        if spec.demand(kind).is_none() {
            return err(line, format!("{key} {role} cannot be a {kind}"));
        }
        checks.push(Check {
            role,
            target,
            perms: parse_perms(line, perms)?,
        });
    }
    Ok(Rule {
        syscall: key.into(),
        checks,
        decision,
        provenance,
    })
}

pub fn import_table(text: &str) -> Result<Compiled, TableError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return err(n, format!("expected `{HEADER}`, found `{other}`")),
        None => return err(1, format!("missing `{HEADER}` header")),
    }

    let mut preamble = String::new();
    let mut preamble_lines = Vec::new();
    let mut model: Option<SecurityModel> = None;
    let mut tables: [Option<RuleTable>; 3] = [None, None, None];
    let mut current: Option<Scope> = None;
    let mut key: Option<String> = None;
    let mut seen = HashSet::new();

    for (n, line) in lines {
        let word = line.split_whitespace().next().unwrap_or("");
        if current.is_none() && (word == "entity" || word == "policy") {
            preamble.push_str(line);
            preamble.push('\n');
            preamble_lines.push(n);
            continue;
        }
        if model.is_none() {
            model = Some(parse_preamble(&preamble, &preamble_lines)?);
        }
        let entities: &[EntityPattern] = model.as_ref().map_or(&[], |m| &m.patterns);
        match word {
            "scope" => {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let (scope, version) = match parts.as_slice() {
                    ["scope", s, "version", v] => match (s.parse::<Scope>(), v.parse::<u64>()) {
                        (Ok(s), Ok(v)) => (s, v),
                        _ => return err(n, "malformed scope header"),
                    },
                    _ => return err(n, "expected `scope <Scope> version <n>`"),
                };
                if tables[scope.index()].is_some() {
                    return err(n, format!("duplicate scope {scope}"));
                }
                tables[scope.index()] = Some(RuleTable::deny_all(scope, version, entities.to_vec()));
                current = Some(scope);
                key = None;
                seen.clear();
            }
            "syscall" => {
                let Some(scope) = current else {
                    return err(n, "syscall before any scope");
                };
                let parts: Vec<&str> = line.split_whitespace().collect();
                let [_, k] = parts.as_slice() else {
                    return err(n, "expected `syscall <name>`");
                };
                if signature(k).is_none() {
                    return err(n, format!("unknown syscall {k}"));
                }
                if current.is_none() || !seen.insert(k.to_string()) {
                    return err(n, format!("duplicate syscall {k} in scope {scope}"));
                }
                key = Some(k.to_string());
            }
            "entity" | "policy" => return err(n, format!("{word} after the first scope")),
            _ => {
                let (Some(scope), Some(k)) = (current, key.as_deref()) else {
                    if signature(word).is_none() {
                        return err(n, format!("unknown syscall {word}"));
                    }
                    return err(n, "rule outside a syscall section");
                };
                if signature(word).is_none() {
                    return err(n, format!("unknown syscall {word}"));
                }
                let rule = parse_rule(n, line, k, entities)?;
                let table = tables[scope.index()].as_mut().expect("scope table exists");
                table.dispatch.get_mut(k).expect("known key").push(rule);
            }
        }
    }
    let model = match model {
        Some(m) => m,
        None => parse_preamble(&preamble, &preamble_lines)?,
    };
    let mut out = Vec::new();
    for (scope, table) in Scope::ALL.into_iter().zip(tables) {
        let Some(table) = table else {
            return err(text.lines().count().max(1), format!("missing scope {scope}"));
        };
        out.push(table);
    }
    let Ok(tables) = <[RuleTable; 3]>::try_from(out) else {
        unreachable!("three scopes")
    };
    let specs = model
        .policies
        .iter()
        .filter_map(|p| match &p.body {
            PolicyBody::Temporal(r) => Some(compile_temporal(&p.name, r, &model)),
            _ => None,
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TableError {
            line: 1,
            message: e.to_string(),
        })?;
    Ok(Compiled { tables, specs })
}

fn parse_preamble(text: &str, lines: &[usize]) -> Result<SecurityModel, TableError> {
    let model = parse(text).map_err(|errs| {
        let first = errs.0.into_iter().next();
        let line = first
            .as_ref()
            .and_then(|e| lines.get(e.line.saturating_sub(1)).copied())
            .unwrap_or(1);
        TableError {
            line,
            message: first.map_or_else(|| "invalid preamble".into(), |e| e.message),
        }
    })?;
    if let Some(p) = model.policies.iter().find(|p| !matches!(p.body, PolicyBody::Temporal(_))) {
        let line = lines.get(model.patterns.len()).copied().unwrap_or(1);
        return err(line, format!("policy {} is not temporal", p.name));
    }
    Ok(model)
}
