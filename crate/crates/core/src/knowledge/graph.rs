use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rules::{DNode, DdnnfGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    And,
    Or,
    Leaf,
    Global,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [NodeKind::And, NodeKind::Or, NodeKind::Leaf, NodeKind::Global];

    pub fn index(self) -> usize {
        match self {
            NodeKind::And => 0,
            NodeKind::Or => 1,
            NodeKind::Leaf => 2,
            NodeKind::Global => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::And => "and",
            NodeKind::Or => "or",
            NodeKind::Leaf => "leaf",
            NodeKind::Global => "global",
        }
    }
}

/// Width of the node-type one-hot prefix in every feature row.
pub const KIND_FEATURES: usize = 4;

/// Undirected, self-looped view of a d-DNNF graph plus one global node.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaGraph {
    kinds: Vec<NodeKind>,
    features: Matrix,
    adjacency: Matrix,
    degree: Vec<f64>,
    global: usize,
    children: Vec<Vec<usize>>,
}

impl FormulaGraph {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// `Ã = A + I`.
    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// `D̃_ii = Σ_j Ã_ij`.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn global(&self) -> usize {
        self.global
    }

    /// Children of each logical node in the source DAG (empty for leaves
    /// and the global node).
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    pub fn normalized_adjacency(&self) -> Matrix {
        let n = self.len();
        Matrix::from_fn(n, n, |i, j| {
            self.adjacency.get(i, j) / (self.degree[i].sqrt() * self.degree[j].sqrt())
        })
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> FormulaGraph {
        let n = self.len();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let kinds = (0..n).map(|i| self.kinds[inv[i]]).collect();
        let features = self.features.select_rows(&inv);
        let adjacency = Matrix::from_fn(n, n, |i, j| self.adjacency.get(inv[i], inv[j]));
        let degree = (0..n).map(|i| self.degree[inv[i]]).collect();
        let children = (0..n)
            .map(|i| self.children[inv[i]].iter().map(|&c| perm[c]).collect())
            .collect();
        FormulaGraph {
            kinds,
            features,
            adjacency,
            degree,
            global: perm[self.global],
            children,
        }
    }
}

/// Builds the encoder's input graph. Leaf rows carry the literal's sign in
/// the column `KIND_FEATURES + var`; TRUE and FALSE sinks are typed as an
/// empty AND and an empty OR.
pub fn ddnnf_to_graph(g: &DdnnfGraph, input_width: usize) -> Result<FormulaGraph> {
    let n = g.len() + 1;
    let global = g.len();
    let mut kinds = Vec::with_capacity(n);
    let mut features = Matrix::zeros(n, input_width);
    let mut adjacency = Matrix::identity(n);
    let mut children = vec![Vec::new(); n];
    if input_width < KIND_FEATURES {
        return Err(Error::Data(format!(
            "knowledge input width {input_width} is below {KIND_FEATURES}"
        )));
    }
    for (id, node) in g.nodes().iter().enumerate() {
        let kind = match node {
            DNode::And(_) | DNode::True => NodeKind::And,
            DNode::Or(_) | DNode::False => NodeKind::Or,
            DNode::Lit(lit) => {
                let col = KIND_FEATURES + lit.var as usize;
                if col >= input_width {
                    return Err(Error::Data(format!(
                        "proposition p{} does not fit knowledge input width {input_width}",
                        lit.var
                    )));
                }
                features.set(id, col, if lit.positive { 1.0 } else { -1.0 });
                NodeKind::Leaf
            }
        };
        features.set(id, kind.index(), 1.0);
        kinds.push(kind);
        for &c in g.children(id) {
            adjacency.set(id, c, 1.0);
            adjacency.set(c, id, 1.0);
            children[id].push(c);
        }
    }
    kinds.push(NodeKind::Global);
    features.set(global, NodeKind::Global.index(), 1.0);
    for i in 0..global {
        adjacency.set(i, global, 1.0);
        adjacency.set(global, i, 1.0);
    }
    let degree = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    Ok(FormulaGraph {
        kinds,
        features,
        adjacency,
        degree,
        global,
        children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{compile_ddnnf, CnfFormula, Literal};

    #[test]
    fn single_leaf() {
        let g = DdnnfGraph::conjunction(&[Literal::pos(0)]);
        let fg = ddnnf_to_graph(&g, 8).unwrap();
        assert_eq!(fg.len(), 2);
        assert_eq!(fg.adjacency(), &Matrix::filled(2, 2, 1.0));
        assert_eq!(fg.kinds(), &[NodeKind::Leaf, NodeKind::Global]);
        assert_eq!(fg.features().row(0), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn implication_graph_shape() {
        let cnf = CnfFormula {
            clauses: vec![vec![Literal::neg(0), Literal::neg(1), Literal::pos(2)]],
        };
        let d = compile_ddnnf(&cnf).unwrap();
        let fg = ddnnf_to_graph(&d, 16).unwrap();
        assert_eq!(fg.len(), d.len() + 1);
        let n = fg.len();
        assert_eq!(fg.degree()[fg.global()], n as f64);
        let a = fg.adjacency();
        for i in 0..n {
            assert_eq!(a.get(i, i), 1.0);
            for j in 0..n {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
        assert_eq!(fg.kinds().iter().filter(|k| **k == NodeKind::Global).count(), 1);
    }

    #[test]
    fn width_overflow() {
        let g = DdnnfGraph::conjunction(&[Literal::pos(9)]);
        assert!(ddnnf_to_graph(&g, 8).is_err());
    }
}
