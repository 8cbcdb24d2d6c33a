//! Exact compilation of small CNFs to d-DNNF.
//!
//! The compiler splits variable-disjoint components into AND nodes and
//! otherwise Shannon-expands on the smallest remaining variable, so every OR
//! node has exactly the children `x ∧ hi` and `¬x ∧ lo`. Sub-problems are
//! memoized on their residual clause set and nodes are hash-consed.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::cnf::{Clause, CnfFormula, Literal};
use super::logic::PropId;
use crate::error::{Error, Result};

pub const MAX_COMPILE_VARS: usize = 20;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DNode {
    True,
    False,
    Lit(Literal),
    And(Vec<NodeId>),
    Or(Vec<NodeId>),
}

/// Rooted DAG; children always have smaller ids than their parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdnnfGraph {
    nodes: Vec<DNode>,
    root: NodeId,
    vars: Vec<Vec<PropId>>,
}

impl DdnnfGraph {
    fn from_nodes(nodes: Vec<DNode>, root: NodeId) -> Self {
        let (nodes, root) = compact(&nodes, root);
        let mut vars: Vec<Vec<PropId>> = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let v = match n {
                DNode::True | DNode::False => Vec::new(),
                DNode::Lit(l) => vec![l.var],
                DNode::And(cs) | DNode::Or(cs) => {
                    let set: BTreeSet<PropId> =
                        cs.iter().flat_map(|&c| vars[c].iter().copied()).collect();
                    set.into_iter().collect()
                }
            };
            vars.push(v);
        }
        DdnnfGraph { nodes, root, vars }
    }

    /// The conjunction of `lits` (a single leaf for one literal, TRUE for none).
    pub fn conjunction(lits: &[Literal]) -> Self {
        let mut nodes: Vec<DNode> = lits.iter().map(|&l| DNode::Lit(l)).collect();
        let root = match nodes.len() {
            0 => {
                nodes.push(DNode::True);
                0
            }
            1 => 0,
            n => {
                nodes.push(DNode::And((0..n).collect()));
                n
            }
        };
        Self::from_nodes(nodes, root)
    }

    pub fn nodes(&self) -> &[DNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sorted variables mentioned below `id`.
    pub fn vars(&self, id: NodeId) -> &[PropId] {
        &self.vars[id]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        match &self.nodes[id] {
            DNode::And(cs) | DNode::Or(cs) => cs,
            _ => &[],
        }
    }

    /// Truth value of every node under `assignment`.
    pub fn eval_all(&self, assignment: &dyn Fn(PropId) -> bool) -> Vec<bool> {
        let mut val = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let v = match n {
                DNode::True => true,
                DNode::False => false,
                DNode::Lit(l) => l.holds(assignment(l.var)),
                DNode::And(cs) => cs.iter().all(|&c| val[c]),
                DNode::Or(cs) => cs.iter().any(|&c| val[c]),
            };
            val.push(v);
        }
        val
    }

    pub fn eval(&self, assignment: &dyn Fn(PropId) -> bool) -> bool {
        self.eval_all(assignment)[self.root]
    }

    /// Children of every AND node mention pairwise-disjoint variables.
    pub fn check_decomposable(&self) -> std::result::Result<(), String> {
        for (id, n) in self.nodes.iter().enumerate() {
            if let DNode::And(cs) = n {
                let mut seen = BTreeSet::new();
                for &c in cs {
                    for &v in &self.vars[c] {
                        if !seen.insert(v) {
                            return Err(format!("AND node {id} shares variable p{v}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// No assignment satisfies two children of the same OR node. Checked
    /// exhaustively over each OR's variables, up to `max_vars` of them.
    pub fn check_deterministic(&self, max_vars: usize) -> std::result::Result<(), String> {
        for (id, n) in self.nodes.iter().enumerate() {
            let DNode::Or(cs) = n else { continue };
            let vars = &self.vars[id];
            if vars.len() > max_vars {
                return Err(format!("OR node {id} has {} variables", vars.len()));
            }
            for bits in 0u64..(1u64 << vars.len()) {
                let assign = |p: PropId| {
                    vars.iter()
                        .position(|&v| v == p)
                        .is_some_and(|i| bits >> i & 1 == 1)
                };
                let val = self.eval_all(&assign);
                if cs.iter().filter(|&&c| val[c]).count() > 1 {
                    return Err(format!("OR node {id} has overlapping children"));
                }
            }
        }
        Ok(())
    }
}

// Keeps only nodes reachable from `root`, renumbered children-first.
fn compact(nodes: &[DNode], root: NodeId) -> (Vec<DNode>, NodeId) {
    let mut remap: HashMap<NodeId, NodeId> = HashMap::new();
    let mut out = Vec::new();
    // iterative post-order
    let mut stack = vec![(root, false)];
    while let Some((id, expanded)) = stack.pop() {
        if remap.contains_key(&id) {
            continue;
        }
        let kids: &[NodeId] = match &nodes[id] {
            DNode::And(cs) | DNode::Or(cs) => cs,
            _ => &[],
        };
        if expanded {
            let node = match &nodes[id] {
                DNode::And(cs) => DNode::And(cs.iter().map(|c| remap[c]).collect()),
                DNode::Or(cs) => DNode::Or(cs.iter().map(|c| remap[c]).collect()),
                other => other.clone(),
            };
            remap.insert(id, out.len());
            out.push(node);
        } else {
            stack.push((id, true));
            for &c in kids.iter().rev() {
                if !remap.contains_key(&c) {
                    stack.push((c, false));
                }
            }
        }
    }
    let root = remap[&root];
    (out, root)
}

struct Compiler {
    nodes: Vec<DNode>,
    unique: HashMap<DNode, NodeId>,
    memo: HashMap<Vec<Clause>, NodeId>,
}

impl Compiler {
    fn mk(&mut self, n: DNode) -> NodeId {
        if let Some(&id) = self.unique.get(&n) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(n.clone());
        self.unique.insert(n, id);
        id
    }

    fn mk_and(&mut self, kids: Vec<NodeId>) -> NodeId {
        let mut flat = Vec::new();
        for k in kids {
            match &self.nodes[k] {
                DNode::False => return self.mk(DNode::False),
                DNode::True => {}
                DNode::And(cs) => flat.extend(cs.iter().copied()),
                _ => flat.push(k),
            }
        }
        flat.sort_unstable();
        flat.dedup();
        match flat.len() {
            0 => self.mk(DNode::True),
            1 => flat[0],
            _ => self.mk(DNode::And(flat)),
        }
    }

    fn mk_or(&mut self, kids: Vec<NodeId>) -> NodeId {
        let kids: Vec<NodeId> = kids
            .into_iter()
            .filter(|&k| self.nodes[k] != DNode::False)
            .collect();
        match kids.len() {
            0 => self.mk(DNode::False),
            1 => kids[0],
            _ => self.mk(DNode::Or(kids)),
        }
    }

    fn compile(&mut self, mut clauses: Vec<Clause>) -> NodeId {
        clauses.sort();
        clauses.dedup();
        if clauses.is_empty() {
            return self.mk(DNode::True);
        }
        if clauses.iter().any(|c| c.is_empty()) {
            return self.mk(DNode::False);
        }
        if let Some(&id) = self.memo.get(&clauses) {
            return id;
        }
        let components = split_components(&clauses);
        let id = if components.len() > 1 {
            let kids = components.into_iter().map(|c| self.compile(c)).collect();
            self.mk_and(kids)
        } else {
            let var = clauses.iter().flatten().map(|l| l.var).min().expect("nonempty");
            let hi = self.compile(condition(&clauses, Literal::pos(var)));
            let lo = self.compile(condition(&clauses, Literal::neg(var)));
            let pos = self.mk(DNode::Lit(Literal::pos(var)));
            let neg = self.mk(DNode::Lit(Literal::neg(var)));
            let a = self.mk_and(vec![pos, hi]);
            let b = self.mk_and(vec![neg, lo]);
            self.mk_or(vec![a, b])
        };
        self.memo.insert(clauses, id);
        id
    }
}

fn condition(clauses: &[Clause], lit: Literal) -> Vec<Clause> {
    clauses
        .iter()
        .filter(|c| !c.contains(&lit))
        .map(|c| c.iter().copied().filter(|&l| l != lit.negated()).collect())
        .collect()
}

fn split_components(clauses: &[Clause]) -> Vec<Vec<Clause>> {
    let vars: Vec<PropId> = {
        let s: BTreeSet<PropId> = clauses.iter().flatten().map(|l| l.var).collect();
        s.into_iter().collect()
    };
    let idx = |v: PropId| vars.binary_search(&v).expect("known var");
    let mut parent: Vec<usize> = (0..vars.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for c in clauses {
        let first = idx(c[0].var);
        for l in &c[1..] {
            let a = find(&mut parent, first);
            let b = find(&mut parent, idx(l.var));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Clause>)> = Vec::new();
    for c in clauses {
        let r = find(&mut parent, idx(c[0].var));
        match groups.iter_mut().find(|(k, _)| *k == r) {
            Some((_, g)) => g.push(c.clone()),
            None => groups.push((r, vec![c.clone()])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

pub fn compile_ddnnf(cnf: &CnfFormula) -> Result<DdnnfGraph> {
    let nvars = cnf.variables().len();
    if nvars > MAX_COMPILE_VARS {
        return Err(Error::TooManyVariables {
            count: nvars,
            limit: MAX_COMPILE_VARS,
        });
    }
    let mut c = Compiler {
        nodes: Vec::new(),
        unique: HashMap::new(),
        memo: HashMap::new(),
    };
    let root = c.compile(cnf.clauses.clone());
    let g = DdnnfGraph::from_nodes(c.nodes, root);
    debug_assert!(g.check_decomposable().is_ok());
    Ok(g)
}

/// Number of satisfying assignments over `n_vars` variables, which must
/// cover every variable in the graph.
pub fn model_count(g: &DdnnfGraph, n_vars: usize) -> u128 {
    let mut counts: Vec<u128> = Vec::with_capacity(g.len());
    for (id, n) in g.nodes().iter().enumerate() {
        let c = match n {
            DNode::True | DNode::Lit(_) => 1,
            DNode::False => 0,
            DNode::And(cs) => cs.iter().map(|&k| counts[k]).product(),
            // smooth each child up to the OR's variable set
            DNode::Or(cs) => cs
                .iter()
                .map(|&k| counts[k] << (g.vars(id).len() - g.vars(k).len()))
                .sum(),
        };
        counts.push(c);
    }
    let free = n_vars.saturating_sub(g.vars(g.root()).len());
    counts[g.root()] << free
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cnf(clauses: Vec<Vec<Literal>>) -> CnfFormula {
        CnfFormula { clauses }
    }

    #[test]
    fn unit_clause_is_single_leaf() {
        let g = compile_ddnnf(&cnf(vec![vec![Literal::pos(3)]])).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.node(g.root()), &DNode::Lit(Literal::pos(3)));
        assert_eq!(model_count(&g, 1), 1);
    }

    #[test]
    fn implication_clause_counts_seven() {
        let g = compile_ddnnf(&cnf(vec![vec![
            Literal::neg(0),
            Literal::neg(1),
            Literal::pos(2),
        ]]))
        .unwrap();
        assert_eq!(model_count(&g, 3), 7);
        g.check_decomposable().unwrap();
        g.check_deterministic(16).unwrap();
        assert!(g.eval(&|_v| true));
        assert!(!g.eval(&|v| v != 2));
    }

    #[test]
    fn contradiction_is_false() {
        let g = compile_ddnnf(&cnf(vec![vec![Literal::pos(0)], vec![Literal::neg(0)]])).unwrap();
        assert_eq!(g.node(g.root()), &DNode::False);
        assert_eq!(g.len(), 1);
        assert_eq!(model_count(&g, 1), 0);
    }

    #[test]
    fn empty_cnf_is_true() {
        let g = compile_ddnnf(&cnf(vec![])).unwrap();
        assert_eq!(g.node(g.root()), &DNode::True);
        assert_eq!(model_count(&g, 4), 16);
    }

    #[test]
    fn components_become_and() {
        let g = compile_ddnnf(&cnf(vec![
            vec![Literal::pos(0), Literal::pos(1)],
            vec![Literal::pos(2), Literal::neg(3)],
        ]))
        .unwrap();
        assert!(matches!(g.node(g.root()), DNode::And(cs) if cs.len() == 2));
        assert_eq!(model_count(&g, 4), 9);
        g.check_decomposable().unwrap();
        g.check_deterministic(16).unwrap();
    }

    #[test]
    fn variable_bound() {
        let big = cnf(vec![(0..21).map(Literal::pos).collect()]);
        assert!(matches!(
            compile_ddnnf(&big),
            Err(Error::TooManyVariables { count: 21, .. })
        ));
    }

    #[test]
    fn conjunction_graph() {
        let g = DdnnfGraph::conjunction(&[Literal::pos(0), Literal::neg(1)]);
        assert_eq!(g.len(), 3);
        assert_eq!(model_count(&g, 2), 1);
        assert!(g.eval(&|v| v == 0));
        let single = DdnnfGraph::conjunction(&[Literal::neg(5)]);
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn checks_catch_violations() {
        let bad_and = DdnnfGraph::from_nodes(
            vec![
                DNode::Lit(Literal::pos(0)),
                DNode::Lit(Literal::neg(0)),
                DNode::And(vec![0, 1]),
            ],
            2,
        );
        assert!(bad_and.check_decomposable().is_err());
        let bad_or = DdnnfGraph::from_nodes(
            vec![
                DNode::Lit(Literal::pos(0)),
                DNode::Lit(Literal::pos(1)),
                DNode::Or(vec![0, 1]),
            ],
            2,
        );
        assert!(bad_or.check_deterministic(16).is_err());
    }
}
