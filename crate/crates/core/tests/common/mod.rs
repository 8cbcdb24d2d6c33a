#![allow(dead_code)]

use kdalign::autodiff::{evaluate, grad_check, Matrix, ParamSet, Primitive, Tape};
use kdalign::knowledge::{weight_name, FormulaGraph, KnowEncoderSpec, NodeKind};
use kdalign::rules::{compile_ddnnf, CnfFormula, DdnnfGraph, Formula, Literal};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Random propositional formula over `vars` variables, depth-limited.
pub fn random_formula(rng: &mut ChaCha8Rng, vars: u32, depth: usize) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        return Formula::Leaf(rng.random_range(0..vars));
    }
    match rng.random_range(0..4) {
        0 => Formula::not(random_formula(rng, vars, depth - 1)),
        1 => Formula::implies(random_formula(rng, vars, depth - 1), random_formula(rng, vars, depth - 1)),
        k => {
            let n = rng.random_range(2..=3);
            let parts = (0..n).map(|_| random_formula(rng, vars, depth - 1)).collect();
            if k == 2 {
                Formula::And(parts)
            } else {
                Formula::Or(parts)
            }
        }
    }
}

/// Every assignment of `n` variables as a lookup closure argument.
pub fn assignments(n: u32) -> impl Iterator<Item = u64> {
    0u64..(1u64 << n)
}

pub fn bit(bits: u64, p: u32) -> bool {
    bits >> p & 1 == 1
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact OT for square uniform marginals: the optimum is a permutation
/// matrix scaled by `1/n`.
pub fn exact_square_ot(c: &Matrix) -> f64 {
    let n = c.rows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Average precision by definition: for each positive, precision among all
/// samples scoring at least as high, averaged over positives.
pub fn brute_auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut total = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        let at_least: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = at_least.iter().filter(|&&j| labels[j] == 1).count() as f64;
        total += tp / at_least.len() as f64;
    }
    total / p
}

/// Recall among the first `k = #positives` samples of a stable descending sort.
pub fn brute_rec_at_k(scores: &[f64], labels: &[u8]) -> f64 {
    let k = labels.iter().filter(|&&y| y == 1).count();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // insertion sort keeps ties in input order
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && scores[idx[j - 1]] < scores[idx[j]] {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx[..k].iter().filter(|&&i| labels[i] == 1).count() as f64 / k as f64
}

pub fn random_cnf(rng: &mut ChaCha8Rng, vars: u32, clauses: usize) -> CnfFormula {
    CnfFormula {
        clauses: (0..clauses)
            .map(|_| {
                let len = rng.random_range(1..=3);
                (0..len)
                    .map(|_| Literal {
                        var: rng.random_range(0..vars),
                        positive: rng.random(),
                    })
                    .collect()
            })
            .collect(),
    }
}

pub fn homogeneous(spec: &KnowEncoderSpec, rng: &mut ChaCha8Rng) -> (ParamSet, Vec<Matrix>) {
    let widths = spec.widths();
    let mut ps = ParamSet::new();
    let mut ws = Vec::new();
    for l in 0..spec.layers {
        let w = Matrix::from_fn(widths[l], widths[l + 1], |_, _| rng.random_range(-1.0..1.0));
        for kind in NodeKind::ALL {
            ps.insert(weight_name(l, kind), w.clone()).unwrap();
        }
        ws.push(w);
    }
    (ps, ws)
}

// Dense propagation with plain loops, straight from the adjacency and degrees.
pub fn dense_oracle(fg: &FormulaGraph, ws: &[Matrix]) -> Vec<Vec<f64>> {
    let n = fg.len();
    let a = fg.adjacency();
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
    let mut z = fg.features().to_rows();
    for (l, w) in ws.iter().enumerate() {
        let zw: Vec<Vec<f64>> = z
            .iter()
            .map(|row| {
                (0..w.cols())
                    .map(|c| (0..w.rows()).map(|k| row[k] * w.get(k, c)).sum())
                    .collect()
            })
            .collect();
        z = (0..n)
            .map(|i| {
                (0..w.cols())
                    .map(|c| {
                        let v: f64 = (0..n)
                            .map(|j| a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()) * zw[j][c])
                            .sum();
                        if l + 1 < ws.len() {
                            v.max(0.0)
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
    }
    z
}

pub fn small_graphs(seed: u64, count: usize, max_nodes: usize) -> Vec<DdnnfGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let clauses = rng.random_range(1..4);
        let cnf = random_cnf(&mut rng, 4, clauses);
        let g = compile_ddnnf(&cnf).unwrap();
        if g.len() < max_nodes {
            out.push(g);
        }
    }
    out
}

pub const FD_STEP: f64 = 1e-5;

pub const ALL_PRIMITIVES: [Primitive; 18] = [
    Primitive::MatMul,
    Primitive::Add,
    Primitive::Sub,
    Primitive::Hadamard,
    Primitive::Scale(-1.7),
    Primitive::Exp,
    Primitive::Log,
    Primitive::Relu,
    Primitive::Sigmoid,
    Primitive::RowSum,
    Primitive::ColSum,
    Primitive::BroadcastRow(0),
    Primitive::BroadcastCol(0),
    Primitive::Transpose,
    Primitive::Square,
    Primitive::Mean,
    Primitive::Softplus,
    Primitive::ConcatRows,
];

// Input shapes for `p`, given a base (r, c) and an inner width k.
fn shapes(p: Primitive, r: usize, c: usize, k: usize) -> Vec<(usize, usize)> {
    match p {
        Primitive::MatMul => vec![(r, k), (k, c)],
        Primitive::Add | Primitive::Sub | Primitive::Hadamard => vec![(r, c), (r, c)],
        Primitive::BroadcastRow(_) => vec![(1, c)],
        Primitive::BroadcastCol(_) => vec![(r, 1)],
        Primitive::ConcatRows => vec![(r, c), (k, c)],
        _ => vec![(r, c)],
    }
}

fn sample_input(p: Primitive, rng: &mut ChaCha8Rng, (r, c): (usize, usize)) -> Matrix {
    match p {
        Primitive::Log => random_matrix(rng, r, c, 0.3, 3.0),
        Primitive::Exp | Primitive::Softplus | Primitive::Sigmoid => random_matrix(rng, r, c, -2.0, 2.0),
        // stay clear of the kink
        Primitive::Relu => Matrix::from_fn(r, c, |_, _| {
            let v: f64 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) { v } else { -v }
        }),
        _ => random_matrix(rng, r, c, -2.0, 2.0),
    }
}

/// Worst relative error of the adjoint of `p` against central differences,
/// on a random instance drawn from `seed`.
pub fn primitive_grad_error(p: Primitive, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c, k) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let p = match p {
        Primitive::BroadcastRow(_) => Primitive::BroadcastRow(r),
        Primitive::BroadcastCol(_) => Primitive::BroadcastCol(c),
        other => other,
    };
    let mut ps = ParamSet::new();
    let shapes = shapes(p, r, c, k);
    for (i, &s) in shapes.iter().enumerate() {
        ps.insert(format!("in{i}"), sample_input(p, &mut rng, s)).unwrap();
    }
    let probe_inputs: Vec<&Matrix> = (0..shapes.len()).map(|i| ps.get(&format!("in{i}")).unwrap()).collect();
    let out = evaluate(p, &probe_inputs).unwrap();
    let weights = random_matrix(&mut rng, out.rows(), out.cols(), -1.0, 1.0);
    let n = shapes.len();
    let report = grad_check(
        |t: &mut Tape, ps: &ParamSet| {
            let vars = (0..n).map(|i| t.param(ps, &format!("in{i}"))).collect::<Result<Vec<_>, _>>()?;
            let y = t.apply(p, &vars)?;
            let w = t.constant(weights.clone());
            let prod = t.hadamard(y, w)?;
            t.sum(prod)
        },
        &ps,
        FD_STEP,
        1e-4,
    )
    .unwrap();
    report.max_error
}
