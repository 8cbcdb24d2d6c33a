//! Entropic OT between knowledge and data embeddings, solved in the log
//! domain.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Marginals {
    pub fn uniform(s: usize, m: usize) -> Self {
        Marginals {
            mu: vec![1.0 / s as f64; s],
            nu: vec![1.0 / m as f64; m],
        }
    }

    /// Uniform `μ`; `ν` weights flagged samples by `boost` before normalizing.
    pub fn boosted(s: usize, flagged: &[bool], boost: f64) -> Self {
        let w: Vec<f64> = flagged.iter().map(|&f| if f { boost } else { 1.0 }).collect();
        let total: f64 = w.iter().sum();
        Marginals {
            mu: vec![1.0 / s as f64; s],
            nu: w.iter().map(|v| v / total).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", &self.mu), ("nu", &self.nu)] {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::Numeric(format!("marginal {name} must be positive and finite")));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Numeric(format!("marginal {name} sums to {total}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// `ε = epsilon_scale · mean(C)`.
    pub epsilon_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon_scale: 0.1,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn epsilon_for(&self, c: &Matrix) -> f64 {
        let mean = c.mean();
        if mean > 0.0 {
            self.epsilon_scale * mean
        } else {
            self.epsilon_scale
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// `‖S·1 − μ‖_∞`.
    pub row_residual: f64,
    /// `‖Sᵀ·1 − ν‖_∞`.
    pub col_residual: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub converged: bool,
}

impl TransportPlan {
    pub fn residual(&self) -> f64 {
        self.row_residual.max(self.col_residual)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn plan_from_potentials(c: &Matrix, f: &[f64], g: &[f64], eps: f64) -> Matrix {
    Matrix::from_fn(c.rows(), c.cols(), |i, j| ((f[i] + g[j] - c.get(i, j)) / eps).exp())
}

fn residuals(p: &Matrix, marg: &Marginals) -> (f64, f64) {
    let mut row = 0.0f64;
    for i in 0..p.rows() {
        row = row.max((p.row(i).iter().sum::<f64>() - marg.mu[i]).abs());
    }
    let mut col = 0.0f64;
    for j in 0..p.cols() {
        let s: f64 = (0..p.rows()).map(|i| p.get(i, j)).sum();
        col = col.max((s - marg.nu[j]).abs());
    }
    (row, col)
}

/// Alternating potential updates until the larger marginal residual is at
/// most `tol`. Non-convergence is reported through `converged`, not as an
/// error.
pub fn sinkhorn(c: &Matrix, marg: &Marginals, eps: f64, max_iter: usize, tol: f64) -> Result<TransportPlan> {
    if c.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in cost matrix".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Numeric(format!("sinkhorn epsilon must be positive, got {eps}")));
    }
    marg.validate()?;
    let (s, m) = c.shape();
    if marg.mu.len() != s || marg.nu.len() != m {
        return Err(Error::shape(
            "sinkhorn",
            format!("cost {s}x{m} vs marginals {}/{}", marg.mu.len(), marg.nu.len()),
        ));
    }
    let log_mu: Vec<f64> = marg.mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = marg.nu.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; s];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut plan = plan_from_potentials(c, &f, &g, eps);
    let (mut row_res, mut col_res) = residuals(&plan, marg);
    while iterations < max_iter && row_res.max(col_res) > tol {
        for i in 0..s {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - c.get(i, j)) / eps));
            f[i] = eps * (log_mu[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..s).map(|i| (f[i] - c.get(i, j)) / eps));
            g[j] = eps * (log_nu[j] - lse);
        }
        iterations += 1;
        plan = plan_from_potentials(c, &f, &g, eps);
        (row_res, col_res) = residuals(&plan, marg);
    }
    if !plan.all_finite() {
        return Err(Error::Numeric("sinkhorn produced a non-finite plan".into()));
    }
    Ok(TransportPlan {
        converged: row_res.max(col_res) <= tol,
        plan,
        row_residual: row_res,
        col_residual: col_res,
        iterations,
        epsilon: eps,
    })
}

/// `⟨C, S⟩`.
pub fn ot_distance(c: &Matrix, s: &Matrix) -> Result<f64> {
    Ok(c.zip_map(s, |a, b| a * b)?.sum())
}

/// `⟨C, S⟩` on the tape with `S` held constant.
pub fn ot_distance_tape(tape: &mut Tape, c: Var, plan: &Matrix) -> Result<Var> {
    let s = tape.constant(plan.clone());
    let prod = tape.hadamard(c, s)?;
    tape.sum(prod)
}

// Row-wise log-sum-exp of `x` (rows×cols → rows×1), shifted by the detached
// row maxima.
fn lse_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let v = tape.value(x);
    let cols = v.cols();
    let maxes: Vec<f64> = (0..v.rows())
        .map(|r| v.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let shift = Matrix::column(&maxes);
    let neg_shift = Matrix::from_fn(v.rows(), cols, |r, _| -maxes[r]);
    let centered = tape.add_const(x, neg_shift)?;
    let e = tape.exp(centered)?;
    let s = tape.row_sum(e)?;
    let l = tape.log(s)?;
    tape.add_const(l, shift)
}

/// Sinkhorn unrolled for exactly `iters` iterations on the tape, so the
/// plan itself carries gradients back to `c`. `eps` is a constant.
pub fn sinkhorn_tape(tape: &mut Tape, c: Var, marg: &Marginals, eps: f64, iters: usize) -> Result<Var> {
    marg.validate()?;
    let (s, m) = tape.value(c).shape();
    let log_mu = Matrix::column(&marg.mu.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let log_nu = Matrix::column(&marg.nu.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let neg_c = tape.scale(c, -1.0 / eps)?;
    let neg_ct = tape.transpose(neg_c)?;
    let mut f = tape.constant(Matrix::zeros(s, 1));
    let mut g = tape.constant(Matrix::zeros(m, 1));
    for _ in 0..iters {
        // f = ε(log μ − LSE_j((g_j − C_ij)/ε))
        let gt = tape.transpose(g)?;
        let gs = tape.scale(gt, 1.0 / eps)?;
        let gb = tape.broadcast_row(gs, s)?;
        let a = tape.add(neg_c, gb)?;
        let l = lse_rows(tape, a)?;
        let nl = tape.scale(l, -1.0)?;
        let fl = tape.add_const(nl, log_mu.clone())?;
        f = tape.scale(fl, eps)?;
        // g = ε(log ν − LSE_i((f_i − C_ij)/ε))
        let ft = tape.transpose(f)?;
        let fs = tape.scale(ft, 1.0 / eps)?;
        let fb = tape.broadcast_row(fs, m)?;
        let b = tape.add(neg_ct, fb)?;
        let l = lse_rows(tape, b)?;
        let nl = tape.scale(l, -1.0)?;
        let gl = tape.add_const(nl, log_nu.clone())?;
        g = tape.scale(gl, eps)?;
    }
    let fe = tape.scale(f, 1.0 / eps)?;
    let fb = tape.broadcast_col(fe, m)?;
    let gt = tape.transpose(g)?;
    let ge = tape.scale(gt, 1.0 / eps)?;
    let gb = tape.broadcast_row(ge, s)?;
    let pot = tape.add(fb, gb)?;
    let arg = tape.add(pot, neg_c)?;
    tape.exp(arg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub formula: usize,
    pub sample: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
}

/// Pairs every sample (column) with its highest-mass formula; ties go to
/// the lowest formula id.
pub fn extract_alignment(plan: &Matrix) -> Alignment {
    let pairs = (0..plan.cols())
        .filter(|_| plan.rows() > 0)
        .map(|j| {
            let mut best = 0;
            for i in 1..plan.rows() {
                if plan.get(i, j) > plan.get(best, j) {
                    best = i;
                }
            }
            AlignedPair {
                formula: best,
                sample: j,
                score: plan.get(best, j),
            }
        })
        .collect();
    Alignment { pairs }
}
