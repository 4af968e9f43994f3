use std::fmt;
use std::str::FromStr;

/// Trust domain a process runs in. Ordered by trust: `Sandbox < Agent < Monitor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Sandbox,
    Agent,
    Monitor,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Sandbox, Scope::Agent, Scope::Monitor];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Sandbox => "Sandbox",
            Scope::Agent => "Agent",
            Scope::Monitor => "Monitor",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Sandbox" => Ok(Scope::Sandbox),
            "Agent" => Ok(Scope::Agent),
            "Monitor" => Ok(Scope::Monitor),
            _ => Err(()),
        }
    }
}

/// A single permission. `NoExecute` is restrictive: holding it forbids exec and fork.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Permission {
    Read,
    Write,
    Append,
    NoExecute,
    Visible,
}

impl Permission {
    /// Canonical order used everywhere perms are printed.
    pub const ALL: [Permission; 5] = [
        Permission::Read,
        Permission::Write,
        Permission::Append,
        Permission::NoExecute,
        Permission::Visible,
    ];

    /// Surface keyword (`NoExec` for `NoExecute`).
    pub fn keyword(self) -> &'static str {
        match self {
            Permission::Read => "Read",
            Permission::Write => "Write",
            Permission::Append => "Append",
            Permission::NoExecute => "NoExec",
            Permission::Visible => "Visible",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Permission> {
        Permission::ALL.into_iter().find(|p| p.keyword() == s)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A subset of [`Permission`]. The empty set grants nothing, not even `Visible`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PermSet(u8);

impl PermSet {
    pub const EMPTY: PermSet = PermSet(0);
    pub const FULL: PermSet = PermSet(0b1_1111);

    pub fn from_bits(bits: u8) -> PermSet {
        PermSet(bits & Self::FULL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn single(p: Permission) -> PermSet {
        PermSet(p.bit())
    }

    pub fn contains(self, p: Permission) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn insert(&mut self, p: Permission) {
        self.0 |= p.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: PermSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: PermSet) -> PermSet {
        PermSet(self.0 | other.0)
    }

    pub fn intersection(self, other: PermSet) -> PermSet {
        PermSet(self.0 & other.0)
    }

    pub fn difference(self, other: PermSet) -> PermSet {
        PermSet(self.0 & !other.0)
    }

    /// Members in canonical order.
    pub fn iter(self) -> impl Iterator<Item = Permission> {
        Permission::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl FromIterator<Permission> for PermSet {
    fn from_iter<I: IntoIterator<Item = Permission>>(iter: I) -> Self {
        let mut set = PermSet::EMPTY;
        for p in iter {
            set.insert(p);
        }
        set
    }
}

impl<const N: usize> From<[Permission; N]> for PermSet {
    fn from(perms: [Permission; N]) -> Self {
        perms.into_iter().collect()
    }
}

/// Renders as `{ Read, Visible }`, or `{}` when empty.
impl fmt::Display for PermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("{}");
        }
        f.write_str("{ ")?;
        for (i, p) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(p.keyword())?;
        }
        f.write_str(" }")
    }
}

impl fmt::Debug for PermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
