//! Symbols, integer constraints, probabilistic path constraints, substitutions and the
//! left/relational/right split of a trace's constraint set.

mod expr;
mod omega;
mod prob;
mod subst;

pub use expr::*;
pub use omega::*;
pub use prob::*;
pub use subst::*;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::lang::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Input,
    /// A sample turned into an integer symbol by a coupling or by avoiding one.
    Sample,
    Branch,
    /// Coupling shift `K` in `X1 + K = X2`.
    Shift,
    /// Coupling bound `K'`.
    Bound,
    /// Privacy budget accumulators.
    Budget,
    /// Logical variables of assertions (output-domain wildcards and `forall`).
    Logic,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Sort {
    Int,
    Array,
}

/// An integer (or integer-array) symbol. Ordering and equality go by id.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SymInt {
    pub id: u32,
    pub side: Side,
    pub origin: Origin,
    pub sort: Sort,
}

impl PartialEq for SymInt {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for SymInt {}
impl std::hash::Hash for SymInt {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}
impl PartialOrd for SymInt {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SymInt {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id.cmp(&other.id)
    }
}

/// A symbol standing for a random value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ProbSym {
    pub id: u32,
    pub side: Side,
}

impl fmt::Display for ProbSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Y{}", self.id)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymInfo {
    pub sym: SymInt,
    pub name: String,
    /// Fixed length for array symbols.
    pub len: Option<i64>,
}

/// Issues fresh symbols. Integer and probabilistic symbols share one id counter, so an id is
/// never reused across the two namespaces either.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Registry {
    next: u32,
    ints: BTreeMap<u32, SymInfo>,
    probs: BTreeMap<u32, ProbSym>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    fn bump(&mut self) -> u32 {
        self.next += 1;
        self.next
    }

    /// Fresh integer symbol named `{hint}_{id}`.
    pub fn fresh(&mut self, side: Side, origin: Origin, hint: &str) -> SymInt {
        let id = self.bump();
        self.insert(SymInt { id, side, origin, sort: Sort::Int }, format!("{hint}_{id}"), None)
    }

    /// Fresh integer symbol with an exact name (inputs such as `q1d1`, `t_1`).
    pub fn fresh_named(&mut self, side: Side, origin: Origin, name: &str) -> SymInt {
        let id = self.bump();
        self.insert(SymInt { id, side, origin, sort: Sort::Int }, name.to_string(), None)
    }

    pub fn fresh_array(&mut self, side: Side, origin: Origin, hint: &str, len: i64) -> SymInt {
        let id = self.bump();
        self.insert(SymInt { id, side, origin, sort: Sort::Array }, format!("{hint}_{id}"), Some(len))
    }

    pub fn fresh_array_named(&mut self, side: Side, origin: Origin, name: &str, len: i64) -> SymInt {
        let id = self.bump();
        self.insert(SymInt { id, side, origin, sort: Sort::Array }, name.to_string(), Some(len))
    }

    fn insert(&mut self, sym: SymInt, name: String, len: Option<i64>) -> SymInt {
        let prev = self.ints.insert(sym.id, SymInfo { sym, name, len });
        assert!(prev.is_none(), "symbol id {} issued twice", sym.id);
        sym
    }

    pub fn fresh_prob(&mut self, side: Side) -> ProbSym {
        let id = self.bump();
        let y = ProbSym { id, side };
        self.probs.insert(id, y);
        y
    }

    pub fn name(&self, s: SymInt) -> &str {
        self.ints.get(&s.id).map(|i| i.name.as_str()).unwrap_or("?")
    }

    pub fn array_len(&self, s: SymInt) -> Option<i64> {
        self.ints.get(&s.id).and_then(|i| i.len)
    }

    pub fn get(&self, id: u32) -> Option<&SymInfo> {
        self.ints.get(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<SymInt> {
        self.ints.values().find(|i| i.name == name).map(|i| i.sym)
    }

    pub fn int_symbols(&self) -> impl Iterator<Item = &SymInfo> {
        self.ints.values()
    }

    /// Number of ids issued so far, across both namespaces.
    pub fn issued(&self) -> u32 {
        self.next
    }

    /// Every issued id is recorded exactly once in one namespace.
    pub fn audit(&self) -> bool {
        let n = self.ints.len() + self.probs.len();
        n == self.next as usize && self.ints.keys().all(|k| !self.probs.contains_key(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_symbols_are_distinct() {
        let mut r = Registry::new();
        let y1 = r.fresh_prob(Side::Left);
        let y2 = r.fresh_prob(Side::Left);
        assert_ne!(y1, y2);
        assert_eq!(y1.to_string(), "Y1");
        let e1 = r.fresh(Side::Shared, Origin::Budget, "E");
        let e2 = r.fresh(Side::Shared, Origin::Budget, "E");
        assert_ne!(e1.id, e2.id);
        assert_eq!(r.name(e2), "E_4");
        assert!(r.audit());
    }
}
