//! Anchored glob matching where `*` is the only metacharacter.
//!
//! `*` matches any (possibly empty) byte sequence, path separators included,
//! so `/secure/*` covers everything below `/secure/`. Matching is
//! case-sensitive and never fails.

/// Returns true iff `value` is in the language of `pattern`.
pub fn glob_match(pattern: &str, value: &str) -> bool {
    let p = pattern.as_bytes();
    let v = value.as_bytes();
    let (mut pi, mut vi) = (0usize, 0usize);
    // Most recent `*` seen and the value position it is currently absorbing up to.
    let mut star: Option<(usize, usize)> = None;

    while vi < v.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, vi));
            pi += 1;
        } else if pi < p.len() && p[pi] == v[vi] {
            pi += 1;
            vi += 1;
        } else if let Some((sp, sv)) = star {
            pi = sp + 1;
            vi = sv + 1;
            star = Some((sp, sv + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&b| b == b'*')
}

/// The part of `pattern` before its first `*` (the whole pattern if it has none).
pub fn literal_prefix(pattern: &str) -> &str {
    match pattern.find('*') {
        Some(i) => &pattern[..i],
        None => pattern,
    }
}
