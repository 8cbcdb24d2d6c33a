//! Rule knowledge: parsing, propositional encoding, CNF and d-DNNF
//! compilation, and evaluation against samples.

pub mod cnf;
pub mod ddnnf;
pub mod dsl;
pub mod logic;
pub mod matching;

pub use cnf::{formula_to_cnf, CnfFormula, Literal};
pub use ddnnf::{compile_ddnnf, model_count, DNode, DdnnfGraph};
pub use dsl::{load_rules, parse_rule, parse_rule_text, render_rule_text, Condition, Predicate, Rule};
pub use logic::{rule_to_formula, rules_to_formulae, Formula, PropTable, Proposition};
pub use matching::{match_rule, rule_match_stats, FeatureIndex, MatchStats};

use crate::error::Result;

/// One rule carried through the whole compilation pipeline.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: Rule,
    pub formula: Formula,
    pub cnf: CnfFormula,
    pub graph: DdnnfGraph,
}

/// Compiles every rule against one shared proposition table.
pub fn compile_rules(rules: &[Rule]) -> Result<(PropTable, Vec<CompiledRule>)> {
    let (table, formulae) = rules_to_formulae(rules);
    let compiled = rules
        .iter()
        .zip(formulae)
        .map(|(rule, formula)| {
            let cnf = formula_to_cnf(&formula)?;
            let graph = compile_ddnnf(&cnf)?;
            Ok(CompiledRule {
                rule: rule.clone(),
                formula,
                cnf,
                graph,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table, compiled))
}
