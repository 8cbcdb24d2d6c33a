//! Heterogeneous GCN: `Z' = σ(Â · Σ_t P_t Z W_t)` where `P_t` keeps the rows
//! of node type `t` and `Â = D̃^{-1/2} Ã D̃^{-1/2}`. Hidden layers use ReLU,
//! the output layer is linear.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{FormulaGraph, NodeKind};
use crate::autodiff::{glorot, Matrix, ParamSet, Tape, Var};
use crate::error::{Error, Result};

pub const NAMESPACE: &str = "know_encoder/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowEncoderSpec {
    pub input_width: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Must equal the data encoder's embedding width.
    pub output: usize,
}

impl KnowEncoderSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width];
        w.extend(std::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        w.push(self.output);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::Config(vec![
                "know_encoder: layers, hidden and output must be positive".into(),
            ]));
        }
        Ok(())
    }
}

pub fn weight_name(layer: usize, kind: NodeKind) -> String {
    format!("{NAMESPACE}l{layer}/{}", kind.name())
}

pub fn init_params(spec: &KnowEncoderSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let mut ps = ParamSet::new();
    for l in 0..spec.layers {
        for kind in NodeKind::ALL {
            ps.insert(weight_name(l, kind), glorot(widths[l], widths[l + 1], &mut rng))?;
        }
    }
    Ok(ps)
}

/// Node embeddings `Z^(L)` recorded on `tape`.
pub fn gcn_forward(
    tape: &mut Tape,
    fg: &FormulaGraph,
    params: &ParamSet,
    spec: &KnowEncoderSpec,
) -> Result<Var> {
    let widths = spec.widths();
    if fg.features().cols() != widths[0] {
        return Err(Error::shape(
            "gcn",
            format!(
                "feature width {} but encoder expects {}",
                fg.features().cols(),
                widths[0]
            ),
        ));
    }
    let n = fg.len();
    let a_hat = tape.constant(fg.normalized_adjacency());
    let mut z = tape.constant(fg.features().clone());
    for l in 0..spec.layers {
        let out = widths[l + 1];
        let mut mixed: Option<Var> = None;
        for kind in NodeKind::ALL {
            if !fg.kinds().contains(&kind) {
                continue;
            }
            let w = tape.param(params, &weight_name(l, kind))?;
            let zw = tape.matmul(z, w)?;
            let mask = tape.constant(Matrix::from_fn(n, out, |i, _| {
                if fg.kind(i) == kind {
                    1.0
                } else {
                    0.0
                }
            }));
            let part = tape.hadamard(zw, mask)?;
            mixed = Some(match mixed {
                Some(acc) => tape.add(acc, part)?,
                None => part,
            });
        }
        let h = tape.matmul(a_hat, mixed.expect("graph has a global node"))?;
        z = if l + 1 < spec.layers { tape.relu(h)? } else { h };
    }
    Ok(z)
}

/// The global node's row of `Z^(L)` (1×h).
pub fn readout(tape: &mut Tape, z: Var, fg: &FormulaGraph) -> Result<Var> {
    let sel = tape.constant(Matrix::from_fn(1, fg.len(), |_, j| {
        if j == fg.global() {
            1.0
        } else {
            0.0
        }
    }));
    tape.matmul(sel, z)
}

pub fn formula_embedding(
    fg: &FormulaGraph,
    params: &ParamSet,
    spec: &KnowEncoderSpec,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let z = gcn_forward(&mut tape, fg, params, spec)?;
    let e = readout(&mut tape, z, fg)?;
    Ok(tape.value(e).data().to_vec())
}

/// Stacks one embedding row per formula graph (`s×h`).
pub fn embed_knowledge_set(
    graphs: &[FormulaGraph],
    params: &ParamSet,
    spec: &KnowEncoderSpec,
) -> Result<Matrix> {
    let rows = graphs
        .iter()
        .map(|g| formula_embedding(g, params, spec))
        .collect::<Result<Vec<_>>>()?;
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite knowledge embedding".into()));
    }
    Ok(Matrix::from_fn(rows.len(), spec.output, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::graph::ddnnf_to_graph;
    use crate::rules::{DdnnfGraph, Literal};

    fn identity_params(width: usize) -> ParamSet {
        let mut ps = ParamSet::new();
        for kind in NodeKind::ALL {
            ps.insert(weight_name(0, kind), Matrix::identity(width)).unwrap();
        }
        ps
    }

    #[test]
    fn two_node_average() {
        let g = DdnnfGraph::conjunction(&[Literal::pos(1)]);
        let fg = ddnnf_to_graph(&g, 6).unwrap();
        let spec = KnowEncoderSpec {
            input_width: 6,
            layers: 1,
            hidden: 6,
            output: 6,
        };
        let mut t = Tape::new();
        let z = gcn_forward(&mut t, &fg, &identity_params(6), &spec).unwrap();
        let x = fg.features();
        for i in 0..2 {
            for c in 0..6 {
                let want = x.get(0, c) / 2.0 + x.get(1, c) / 2.0;
                assert!((t.value(z).get(i, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn widths_and_init() {
        let spec = KnowEncoderSpec {
            input_width: 10,
            layers: 3,
            hidden: 7,
            output: 4,
        };
        assert_eq!(spec.widths(), vec![10, 7, 7, 4]);
        let ps = init_params(&spec, 1).unwrap();
        assert_eq!(ps.len(), 12);
        assert_eq!(ps.get(&weight_name(2, NodeKind::Or)).unwrap().shape(), (7, 4));
        assert_eq!(init_params(&spec, 1).unwrap(), ps);
    }
}
