use serde::Serialize;

use super::{Constraint, ConstraintSet, Origin, Registry, SymInt};
use crate::lang::Side;

/// Left-only constraints, right-only constraints, and everything relating the two runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OmegaTriple {
    pub omega1: ConstraintSet,
    pub omega2: ConstraintSet,
    pub relational: ConstraintSet,
    /// Coupling shifts in creation order.
    pub k_vec: Vec<SymInt>,
}

fn only_side(c: &Constraint, side: Side) -> bool {
    let syms = c.symbol_set();
    !syms.is_empty() && syms.iter().all(|s| s.side == side && s.origin != Origin::Shift)
}

/// The constraints of `s` whose symbols all belong to run `side`.
pub fn project_side(side: Side, s: &ConstraintSet) -> ConstraintSet {
    s.filter(|e| only_side(&e.c, side))
}

pub fn omega_decompose(s: &ConstraintSet) -> OmegaTriple {
    let omega1 = project_side(Side::Left, s);
    let omega2 = project_side(Side::Right, s);
    let relational = s.filter(|e| !only_side(&e.c, Side::Left) && !only_side(&e.c, Side::Right));
    let k_vec = s.symbols().into_iter().filter(|x| x.origin == Origin::Shift).collect();
    OmegaTriple { omega1, omega2, relational, k_vec }
}

impl OmegaTriple {
    pub fn to_json(&self, reg: &Registry) -> serde_json::Value {
        serde_json::json!({
            "omega1": self.omega1.to_text(reg),
            "relational": self.relational.to_text(reg),
            "omega2": self.omega2.to_text(reg),
            "k": self.k_vec.iter().map(|k| reg.name(*k)).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{CExpr, Role};

    #[test]
    fn empty_set() {
        let o = omega_decompose(&ConstraintSet::new());
        assert!(o.omega1.is_empty() && o.omega2.is_empty() && o.relational.is_empty() && o.k_vec.is_empty());
    }

    #[test]
    fn partition() {
        let mut r = Registry::new();
        let t1 = r.fresh(Side::Left, Origin::Sample, "T");
        let t2 = r.fresh(Side::Right, Origin::Sample, "T");
        let k = r.fresh(Side::Shared, Origin::Shift, "K");
        let mut s = ConstraintSet::new();
        s.push(Constraint::gt0(CExpr::sym(t1)), Role::Guard);
        s.push(Constraint::gt0(CExpr::sym(t2)), Role::Guard);
        s.push(Constraint::eq(CExpr::add(CExpr::sym(t1), CExpr::sym(k)), CExpr::sym(t2)), Role::Def(t2));
        s.push(Constraint::gt0(CExpr::Lit(1)), Role::Guard);
        let o = omega_decompose(&s);
        assert_eq!(o.omega1.len(), 1);
        assert_eq!(o.omega2.len(), 1);
        assert_eq!(o.relational.len(), 2);
        assert_eq!(o.k_vec, vec![k]);
    }
}
