//! Equivalence-preserving CNF by implication elimination, negation pushing
//! and distribution. No auxiliary variables are introduced, so model counts
//! over the original propositions are preserved.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::logic::{Formula, PropId};
use crate::error::{Error, Result};

pub const DEFAULT_CLAUSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub var: PropId,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: PropId) -> Self {
        Literal { var, positive: true }
    }

    pub fn neg(var: PropId) -> Self {
        Literal {
            var,
            positive: false,
        }
    }

    pub fn negated(self) -> Self {
        Literal {
            var: self.var,
            positive: !self.positive,
        }
    }

    pub fn holds(self, value: bool) -> bool {
        value == self.positive
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "p{}", self.var)
        } else {
            write!(f, "¬p{}", self.var)
        }
    }
}

/// Sorted literals, no duplicates.
pub type Clause = Vec<Literal>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CnfFormula {
    pub clauses: Vec<Clause>,
}

impl CnfFormula {
    pub fn eval(&self, assignment: &dyn Fn(PropId) -> bool) -> bool {
        self.clauses
            .iter()
            .all(|c| c.iter().any(|l| l.holds(assignment(l.var))))
    }

    pub fn variables(&self) -> Vec<PropId> {
        let set: BTreeSet<PropId> = self.clauses.iter().flatten().map(|l| l.var).collect();
        set.into_iter().collect()
    }

    pub fn is_trivially_false(&self) -> bool {
        self.clauses.iter().any(|c| c.is_empty())
    }
}

impl fmt::Display for CnfFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return write!(f, "⊤");
        }
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                write!(f, " ∧ ")?;
            }
            if c.is_empty() {
                write!(f, "⊥")?;
                continue;
            }
            write!(f, "(")?;
            for (j, l) in c.iter().enumerate() {
                if j > 0 {
                    write!(f, " ∨ ")?;
                }
                write!(f, "{l}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

enum Nnf {
    Lit(Literal),
    And(Vec<Nnf>),
    Or(Vec<Nnf>),
}

fn to_nnf(f: &Formula, negate: bool) -> Nnf {
    match f {
        Formula::Leaf(p) => Nnf::Lit(Literal {
            var: *p,
            positive: !negate,
        }),
        Formula::Not(g) => to_nnf(g, !negate),
        Formula::And(gs) => {
            let kids = gs.iter().map(|g| to_nnf(g, negate)).collect();
            if negate {
                Nnf::Or(kids)
            } else {
                Nnf::And(kids)
            }
        }
        Formula::Or(gs) => {
            let kids = gs.iter().map(|g| to_nnf(g, negate)).collect();
            if negate {
                Nnf::And(kids)
            } else {
                Nnf::Or(kids)
            }
        }
        // a ⇒ b  ≡  ¬a ∨ b ;  ¬(a ⇒ b) ≡ a ∧ ¬b
        Formula::Implies(a, b) => {
            if negate {
                Nnf::And(vec![to_nnf(a, false), to_nnf(b, true)])
            } else {
                Nnf::Or(vec![to_nnf(a, true), to_nnf(b, false)])
            }
        }
    }
}

// Returns None for tautological clauses.
fn normalize_clause(mut lits: Vec<Literal>) -> Option<Clause> {
    lits.sort_unstable();
    lits.dedup();
    if lits.windows(2).any(|w| w[0].var == w[1].var) {
        None
    } else {
        Some(lits)
    }
}

fn dedup_clauses(clauses: Vec<Clause>) -> Vec<Clause> {
    let mut seen = BTreeSet::new();
    clauses.into_iter().filter(|c| seen.insert(c.clone())).collect()
}

fn nnf_to_clauses(n: &Nnf, limit: usize) -> Result<Vec<Clause>> {
    match n {
        Nnf::Lit(l) => Ok(vec![vec![*l]]),
        Nnf::And(kids) => {
            let mut out = Vec::new();
            for k in kids {
                out.extend(nnf_to_clauses(k, limit)?);
                if out.len() > limit {
                    return Err(Error::CnfTooLarge { limit });
                }
            }
            Ok(dedup_clauses(out))
        }
        Nnf::Or(kids) => {
            // Distribute: the product of the children's clause sets.
            let mut acc: Vec<Clause> = vec![Vec::new()];
            for k in kids {
                let rhs = nnf_to_clauses(k, limit)?;
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for a in &acc {
                    for b in &rhs {
                        let merged: Vec<Literal> = a.iter().chain(b.iter()).copied().collect();
                        if let Some(c) = normalize_clause(merged) {
                            next.push(c);
                        }
                    }
                }
                acc = dedup_clauses(next);
                if acc.len() > limit {
                    return Err(Error::CnfTooLarge { limit });
                }
            }
            Ok(acc)
        }
    }
}

pub fn formula_to_cnf(f: &Formula) -> Result<CnfFormula> {
    formula_to_cnf_bounded(f, DEFAULT_CLAUSE_LIMIT)
}

pub fn formula_to_cnf_bounded(f: &Formula, limit: usize) -> Result<CnfFormula> {
    let clauses = nnf_to_clauses(&to_nnf(f, false), limit)?;
    // A surviving empty clause means the formula is unsatisfiable; keep
    // exactly one.
    let clauses = if clauses.iter().any(|c| c.is_empty()) {
        vec![Vec::new()]
    } else {
        clauses
    };
    Ok(CnfFormula { clauses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(p: PropId) -> Formula {
        Formula::Leaf(p)
    }

    #[test]
    fn implication_example() {
        let f = Formula::implies(Formula::And(vec![leaf(0), leaf(1)]), leaf(2));
        let cnf = formula_to_cnf(&f).unwrap();
        assert_eq!(
            cnf.clauses,
            vec![vec![Literal::neg(0), Literal::neg(1), Literal::pos(2)]]
        );
    }

    #[test]
    fn leaf_is_unit_clause() {
        assert_eq!(formula_to_cnf(&leaf(4)).unwrap().clauses, vec![vec![Literal::pos(4)]]);
    }

    #[test]
    fn tautology_and_contradiction() {
        let taut = Formula::Or(vec![leaf(0), Formula::not(leaf(0))]);
        assert!(formula_to_cnf(&taut).unwrap().clauses.is_empty());
        let contra = Formula::And(vec![leaf(0), Formula::not(leaf(0))]);
        let cnf = formula_to_cnf(&contra).unwrap();
        // {p} ∧ {¬p}: unsatisfiable but no empty clause arises syntactically
        assert!(!cnf.eval(&|_| true) && !cnf.eval(&|_| false));
        assert!(cnf.clauses.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn blowup_is_reported() {
        // (a1∧b1) ∨ … ∨ (a13∧b13) distributes to 2^13 clauses
        let f = Formula::Or(
            (0..13)
                .map(|i| Formula::And(vec![leaf(2 * i), leaf(2 * i + 1)]))
                .collect(),
        );
        assert!(matches!(
            formula_to_cnf(&f),
            Err(Error::CnfTooLarge { limit: DEFAULT_CLAUSE_LIMIT })
        ));
        assert_eq!(formula_to_cnf_bounded(&f, 1 << 13).unwrap().clauses.len(), 1 << 13);
    }
}
