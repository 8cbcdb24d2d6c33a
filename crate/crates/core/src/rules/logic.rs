//! Propositional view of rules: `p1 ∧ … ∧ pk ⇒ q`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::dsl::Rule;

pub type PropId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposition {
    pub id: PropId,
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// Interned propositions, keyed by (subject, predicate, object).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PropTable {
    props: Vec<Proposition>,
    #[serde(skip)]
    index: HashMap<(String, String, String), PropId>,
}

impl PropTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, subject: &str, predicate: &str, object: &str) -> PropId {
        if self.index.is_empty() && !self.props.is_empty() {
            self.reindex();
        }
        let key = (subject.to_string(), predicate.to_string(), object.to_string());
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.props.len() as PropId;
        self.props.push(Proposition {
            id,
            subject: key.0.clone(),
            predicate: key.1.clone(),
            object: key.2.clone(),
        });
        self.index.insert(key, id);
        id
    }

    fn reindex(&mut self) {
        self.index = self
            .props
            .iter()
            .map(|p| ((p.subject.clone(), p.predicate.clone(), p.object.clone()), p.id))
            .collect();
    }

    pub fn get(&self, id: PropId) -> Option<&Proposition> {
        self.props.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Proposition> {
        self.props.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    Leaf(PropId),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, assignment: &dyn Fn(PropId) -> bool) -> bool {
        match self {
            Formula::Leaf(p) => assignment(*p),
            Formula::Not(f) => !f.eval(assignment),
            Formula::And(fs) => fs.iter().all(|f| f.eval(assignment)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval(assignment)),
            Formula::Implies(a, b) => !a.eval(assignment) || b.eval(assignment),
        }
    }

    /// Sorted, deduplicated proposition ids.
    pub fn variables(&self) -> Vec<PropId> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<PropId>) {
        match self {
            Formula::Leaf(p) => out.push(*p),
            Formula::Not(f) => f.collect_vars(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_vars(out)),
            Formula::Implies(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Checks the arity invariants: n-ary connectives have at least two
    /// operands and every leaf resolves in `table`.
    pub fn is_well_formed(&self, table: &PropTable) -> bool {
        match self {
            Formula::Leaf(p) => table.get(*p).is_some(),
            Formula::Not(f) => f.is_well_formed(table),
            Formula::And(fs) | Formula::Or(fs) => {
                fs.len() >= 2 && fs.iter().all(|f| f.is_well_formed(table))
            }
            Formula::Implies(a, b) => a.is_well_formed(table) && b.is_well_formed(table),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Leaf(p) => write!(f, "p{p}"),
            Formula::Not(g) => write!(f, "¬{g}"),
            Formula::And(gs) | Formula::Or(gs) => {
                let sep = if matches!(self, Formula::And(_)) { " ∧ " } else { " ∨ " };
                write!(f, "(")?;
                for (i, g) in gs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    write!(f, "{g}")?;
                }
                write!(f, ")")
            }
            Formula::Implies(a, b) => write!(f, "({a} ⇒ {b})"),
        }
    }
}

/// Encodes `rule` as `(c1 ∧ … ∧ ck) ⇒ (anomaly is <consequent>)`, interning
/// propositions into `table` so identical conditions share an id.
pub fn rule_to_formula(rule: &Rule, table: &mut PropTable) -> Formula {
    let mut antecedent: Vec<Formula> = rule
        .conditions
        .iter()
        .map(|c| {
            Formula::Leaf(table.intern(
                &c.attribute,
                c.predicate.symbol(),
                &c.threshold.to_string(),
            ))
        })
        .collect();
    let mut seen = std::collections::HashSet::new();
    antecedent.retain(|f| seen.insert(f.clone()));
    let consequent = table.intern(
        "anomaly",
        "is",
        if rule.consequent { "True" } else { "False" },
    );
    let lhs = if antecedent.len() == 1 {
        antecedent.pop().expect("one element")
    } else {
        Formula::And(antecedent)
    };
    Formula::implies(lhs, Formula::Leaf(consequent))
}

/// Converts a rule set into formulae over one shared proposition table.
pub fn rules_to_formulae(rules: &[Rule]) -> (PropTable, Vec<Formula>) {
    let mut table = PropTable::new();
    let formulae = rules.iter().map(|r| rule_to_formula(r, &mut table)).collect();
    (table, formulae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::dsl::parse_rule;

    #[test]
    fn worked_example() {
        let rule = parse_rule("IF attr_1 > 5 AND attr_2 = 0 THEN anomaly IS true").unwrap();
        let mut table = PropTable::new();
        let f = rule_to_formula(&rule, &mut table);
        assert_eq!(
            f,
            Formula::implies(
                Formula::And(vec![Formula::Leaf(0), Formula::Leaf(1)]),
                Formula::Leaf(2)
            )
        );
        let p = |i| table.get(i).unwrap().clone();
        assert_eq!((p(0).subject.as_str(), p(0).predicate.as_str(), p(0).object.as_str()), ("attr_1", ">", "5"));
        assert_eq!((p(1).subject.as_str(), p(1).predicate.as_str(), p(1).object.as_str()), ("attr_2", "=", "0"));
        assert_eq!((p(2).subject.as_str(), p(2).predicate.as_str(), p(2).object.as_str()), ("anomaly", "is", "True"));
        assert!(f.is_well_formed(&table));
    }

    #[test]
    fn single_condition_is_plain_implication() {
        let rule = parse_rule("IF x >= 0 THEN anomaly IS true").unwrap();
        let mut table = PropTable::new();
        let f = rule_to_formula(&rule, &mut table);
        assert_eq!(f, Formula::implies(Formula::Leaf(0), Formula::Leaf(1)));
    }

    #[test]
    fn shared_conditions_reuse_ids() {
        let a = parse_rule("IF attr_1 > 5 AND b < 1 THEN anomaly IS true").unwrap();
        let b = parse_rule("IF c = 2 AND attr_1 > 5 THEN anomaly IS true").unwrap();
        let (table, fs) = rules_to_formulae(&[a, b]);
        let shared = table
            .iter()
            .find(|p| p.subject == "attr_1")
            .map(|p| p.id)
            .unwrap();
        assert!(fs[0].variables().contains(&shared));
        assert!(fs[1].variables().contains(&shared));
        // attr_1>5, b<1, anomaly, c=2
        assert_eq!(table.len(), 4);
    }

    #[test]
    fn table_survives_serde() {
        let rule = parse_rule("IF a > 1 THEN anomaly IS true").unwrap();
        let (table, _) = rules_to_formulae(&[rule]);
        let json = serde_json::to_string(&table).unwrap();
        let mut back: PropTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.intern("a", ">", "1"), 0);
        assert_eq!(back.len(), 2);
    }
}
