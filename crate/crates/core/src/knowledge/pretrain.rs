//! Encoder pretraining with a satisfying/unsatisfying-assignment triplet
//! objective plus AND/OR semantic regularizers.

use std::collections::HashMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gcn::{gcn_forward, init_params, readout, KnowEncoderSpec};
use super::graph::{ddnnf_to_graph, FormulaGraph, NodeKind};
use crate::autodiff::{sgd_step, Matrix, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rules::{DdnnfGraph, Literal};

/// Largest formula whose assignments are enumerated.
pub const MAX_ENUM_VARS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub margin: f64,
    pub reg_weight: f64,
    pub triples_per_step: usize,
    pub val_triples: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 300,
            lr: 0.3,
            margin: 1.0,
            reg_weight: 0.1,
            triples_per_step: 32,
            val_triples: 200,
            eval_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ParamSet,
    /// Training loss per step.
    pub losses: Vec<f64>,
    /// (step, held-out triplet accuracy) at every evaluation.
    pub val_curve: Vec<(usize, f64)>,
    pub best_val_accuracy: f64,
    /// Indices of formulae with no satisfying or no falsifying assignment.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Triple {
    formula: usize,
    sat: u32,
    unsat: u32,
}

struct Corpus {
    formulae: Vec<FormulaGraph>,
    vars: Vec<Vec<u32>>,
    sat: Vec<Vec<u32>>,
    unsat: Vec<Vec<u32>>,
    usable: Vec<usize>,
    assignment_graphs: HashMap<(usize, u32), FormulaGraph>,
    input_width: usize,
}

impl Corpus {
    fn assignment_graph(&mut self, formula: usize, bits: u32) -> Result<&FormulaGraph> {
        if !self.assignment_graphs.contains_key(&(formula, bits)) {
            let lits: Vec<Literal> = self.vars[formula]
                .iter()
                .enumerate()
                .map(|(i, &v)| Literal {
                    var: v,
                    positive: bits >> i & 1 == 1,
                })
                .collect();
            let g = ddnnf_to_graph(&DdnnfGraph::conjunction(&lits), self.input_width)?;
            self.assignment_graphs.insert((formula, bits), g);
        }
        Ok(&self.assignment_graphs[&(formula, bits)])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Triple {
        let formula = self.usable[rng.random_range(0..self.usable.len())];
        let sat = &self.sat[formula];
        let unsat = &self.unsat[formula];
        Triple {
            formula,
            sat: sat[rng.random_range(0..sat.len())],
            unsat: unsat[rng.random_range(0..unsat.len())],
        }
    }
}

fn build_corpus(graphs: &[DdnnfGraph], input_width: usize) -> Result<(Corpus, Vec<usize>)> {
    let mut corpus = Corpus {
        formulae: Vec::new(),
        vars: Vec::new(),
        sat: Vec::new(),
        unsat: Vec::new(),
        usable: Vec::new(),
        assignment_graphs: HashMap::new(),
        input_width,
    };
    let mut skipped = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        corpus.formulae.push(ddnnf_to_graph(g, input_width)?);
        let vars = g.vars(g.root()).to_vec();
        let (mut sat, mut unsat) = (Vec::new(), Vec::new());
        if vars.len() <= MAX_ENUM_VARS {
            for bits in 0u32..(1u32 << vars.len()) {
                let assign = |p: u32| {
                    vars.iter()
                        .position(|&v| v == p)
                        .is_some_and(|k| bits >> k & 1 == 1)
                };
                if g.eval(&assign) {
                    sat.push(bits);
                } else {
                    unsat.push(bits);
                }
            }
        }
        if sat.is_empty() || unsat.is_empty() {
            warn!("formula {i} has no usable triple (unsatisfiable, tautological or too wide); skipped");
            skipped.push(i);
        } else {
            corpus.usable.push(i);
        }
        corpus.vars.push(vars);
        corpus.sat.push(sat);
        corpus.unsat.push(unsat);
    }
    Ok((corpus, skipped))
}

fn sq_dist(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let s = tape.square(d)?;
    tape.row_sum(s)
}

// AND: ‖z_a − mean(z_children)‖²; OR: (mean pairwise ‖z_i − z_j‖² − 1)².
fn semantic_regularizer(tape: &mut Tape, z: Var, fg: &FormulaGraph) -> Result<Option<Var>> {
    let n = fg.len();
    let mut and_rows = Vec::new();
    let mut pair_rows = Vec::new();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let kids = fg.children(i);
        if kids.is_empty() {
            continue;
        }
        match fg.kind(i) {
            NodeKind::And => {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                for &c in kids {
                    row[c] -= 1.0 / kids.len() as f64;
                }
                and_rows.push(row);
            }
            NodeKind::Or if kids.len() >= 2 => {
                let start = pair_rows.len();
                for (a, &ci) in kids.iter().enumerate() {
                    for &cj in &kids[a + 1..] {
                        let mut row = vec![0.0; n];
                        row[ci] += 1.0;
                        row[cj] -= 1.0;
                        pair_rows.push(row);
                    }
                }
                groups.push((start, pair_rows.len()));
            }
            _ => {}
        }
    }
    let mut total: Option<Var> = None;
    if !and_rows.is_empty() {
        let sel = tape.constant(Matrix::from_rows(&and_rows));
        let d = tape.matmul(sel, z)?;
        let sq = tape.square(d)?;
        let s = tape.sum(sq)?;
        total = Some(s);
    }
    if !groups.is_empty() {
        let sel = tape.constant(Matrix::from_rows(&pair_rows));
        let d = tape.matmul(sel, z)?;
        let sq = tape.square(d)?;
        let per_pair = tape.row_sum(sq)?;
        let avg = tape.constant(Matrix::from_fn(groups.len(), pair_rows.len(), |g, p| {
            let (s, e) = groups[g];
            if p >= s && p < e {
                1.0 / (e - s) as f64
            } else {
                0.0
            }
        }));
        let spread = tape.matmul(avg, per_pair)?;
        let dev = tape.add_const(spread, Matrix::filled(groups.len(), 1, -1.0))?;
        let dev2 = tape.square(dev)?;
        let s = tape.sum(dev2)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total)
}

/// Fraction of `triples` whose formula embedding is strictly closer to the
/// satisfying assignment than to the falsifying one.
fn triplet_accuracy(
    corpus: &mut Corpus,
    triples: &[Triple],
    params: &ParamSet,
    spec: &KnowEncoderSpec,
) -> Result<f64> {
    let mut cache: HashMap<(usize, Option<u32>), Vec<f64>> = HashMap::new();
    let mut embed = |corpus: &mut Corpus, f: usize, bits: Option<u32>| -> Result<Vec<f64>> {
        if let Some(e) = cache.get(&(f, bits)) {
            return Ok(e.clone());
        }
        let fg = match bits {
            None => corpus.formulae[f].clone(),
            Some(b) => corpus.assignment_graph(f, b)?.clone(),
        };
        let e = super::gcn::formula_embedding(&fg, params, spec)?;
        cache.insert((f, bits), e.clone());
        Ok(e)
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut hits = 0;
    for t in triples {
        let ef = embed(corpus, t.formula, None)?;
        let es = embed(corpus, t.formula, Some(t.sat))?;
        let eu = embed(corpus, t.formula, Some(t.unsat))?;
        if dist(&ef, &es) < dist(&ef, &eu) {
            hits += 1;
        }
    }
    Ok(hits as f64 / triples.len().max(1) as f64)
}

pub fn pretrain_encoder(
    graphs: &[DdnnfGraph],
    spec: &KnowEncoderSpec,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if graphs.len() < 2 {
        return Err(Error::Data("pretraining needs at least two formulae".into()));
    }
    let (mut corpus, skipped) = build_corpus(graphs, spec.input_width)?;
    let mut params = init_params(spec, config.seed)?;
    if corpus.usable.is_empty() {
        warn!("no formula yields a training triple; encoder left at initialisation");
        return Ok(PretrainOutcome {
            params,
            losses: Vec::new(),
            val_curve: Vec::new(),
            best_val_accuracy: 0.0,
            skipped,
        });
    }
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1);
    let val: Vec<Triple> = (0..config.val_triples)
        .map(|_| corpus.sample(&mut val_rng))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut best = params.clone();
    let mut best_acc = triplet_accuracy(&mut corpus, &val, &params, spec)?;
    let mut val_curve = vec![(0, best_acc)];
    let mut losses = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let triples: Vec<Triple> = (0..config.triples_per_step)
            .map(|_| corpus.sample(&mut rng))
            .collect();
        let mut tape = Tape::new();
        let mut formula_z: HashMap<usize, (Var, Var)> = HashMap::new();
        let mut assign_e: HashMap<(usize, u32), Var> = HashMap::new();
        let mut hinge_terms = Vec::new();
        for t in &triples {
            if !formula_z.contains_key(&t.formula) {
                let fg = &corpus.formulae[t.formula];
                let z = gcn_forward(&mut tape, fg, &params, spec)?;
                let e = readout(&mut tape, z, fg)?;
                formula_z.insert(t.formula, (z, e));
            }
            let ef = formula_z[&t.formula].1;
            let mut embed_assignment = |bits: u32, tape: &mut Tape| -> Result<Var> {
                if let Some(&v) = assign_e.get(&(t.formula, bits)) {
                    return Ok(v);
                }
                let fg = corpus.assignment_graph(t.formula, bits)?.clone();
                let z = gcn_forward(tape, &fg, &params, spec)?;
                let e = readout(tape, z, &fg)?;
                assign_e.insert((t.formula, bits), e);
                Ok(e)
            };
            let es = embed_assignment(t.sat, &mut tape)?;
            let eu = embed_assignment(t.unsat, &mut tape)?;
            let dp = sq_dist(&mut tape, ef, es)?;
            let dn = sq_dist(&mut tape, ef, eu)?;
            let diff = tape.sub(dp, dn)?;
            let shifted = tape.add_const(diff, Matrix::scalar(config.margin))?;
            hinge_terms.push(tape.relu(shifted)?);
        }
        let stacked = tape.concat_rows(&hinge_terms)?;
        let mut loss = tape.mean(stacked)?;
        if config.reg_weight > 0.0 {
            let mut formulas: Vec<usize> = formula_z.keys().copied().collect();
            formulas.sort_unstable();
            let mut regs = Vec::new();
            for f in formulas {
                if let Some(r) = semantic_regularizer(&mut tape, formula_z[&f].0, &corpus.formulae[f])? {
                    regs.push(r);
                }
            }
            if !regs.is_empty() {
                let stacked = tape.concat_rows(&regs)?;
                let r = tape.mean(stacked)?;
                let r = tape.scale(r, config.reg_weight)?;
                loss = tape.add(loss, r)?;
            }
        }
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("pretraining loss is {value} at step {step}")));
        }
        losses.push(value);
        tape.backward_into(loss, &mut params)?;
        sgd_step(&mut params, config.lr);

        if step % config.eval_every.max(1) == 0 || step == config.steps {
            let acc = triplet_accuracy(&mut corpus, &val, &params, spec)?;
            val_curve.push((step, acc));
            if acc > best_acc {
                best_acc = acc;
                best = params.clone();
            }
        }
    }
    best.zero_grad();
    Ok(PretrainOutcome {
        params: best,
        losses,
        val_curve,
        best_val_accuracy: best_acc,
        skipped,
    })
}

/// Held-out triplet accuracy of `params` on `graphs`, sampled with `seed`.
pub fn evaluate_triplets(
    graphs: &[DdnnfGraph],
    params: &ParamSet,
    spec: &KnowEncoderSpec,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let (mut corpus, _) = build_corpus(graphs, spec.input_width)?;
    if corpus.usable.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<Triple> = (0..n).map(|_| corpus.sample(&mut rng)).collect();
    triplet_accuracy(&mut corpus, &triples, params, spec)
}
