use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CostMetric {
    #[default]
    SquaredEuclidean,
    Cosine,
}

fn check_widths(ef: &Matrix, ex: &Matrix) -> Result<()> {
    if ef.cols() != ex.cols() {
        return Err(Error::shape(
            "cost_matrix",
            format!("knowledge width {} vs data width {}", ef.cols(), ex.cols()),
        ));
    }
    Ok(())
}

/// `C[i][j] = metric(E_F row i, E_X row j)`.
pub fn cost_matrix(ef: &Matrix, ex: &Matrix, metric: CostMetric) -> Result<Matrix> {
    check_widths(ef, ex)?;
    Ok(Matrix::from_fn(ef.rows(), ex.rows(), |i, j| {
        let (a, b) = (ef.row(i), ex.row(j));
        match metric {
            CostMetric::SquaredEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            CostMetric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }))
}

/// Differentiable cost matrix (`s×m`) between the rows of `ef` and `ex`.
pub fn cost_matrix_tape(tape: &mut Tape, ef: Var, ex: Var, metric: CostMetric) -> Result<Var> {
    check_widths(tape.value(ef), tape.value(ex))?;
    let s = tape.value(ef).rows();
    let m = tape.value(ex).rows();
    match metric {
        CostMetric::SquaredEuclidean => {
            let mut rows = Vec::with_capacity(s);
            for i in 0..s {
                let sel = tape.constant(Matrix::from_fn(1, s, |_, k| if k == i { 1.0 } else { 0.0 }));
                let fi = tape.matmul(sel, ef)?;
                let fb = tape.broadcast_row(fi, m)?;
                let d = tape.sub(ex, fb)?;
                let d2 = tape.square(d)?;
                let col = tape.row_sum(d2)?;
                rows.push(tape.transpose(col)?);
            }
            tape.concat_rows(&rows)
        }
        CostMetric::Cosine => {
            let ext = tape.transpose(ex)?;
            let dots = tape.matmul(ef, ext)?;
            let inv_norm = |tape: &mut Tape, v: Var| -> Result<Var> {
                let sq = tape.square(v)?;
                let n2 = tape.row_sum(sq)?;
                let l = tape.log(n2)?;
                let h = tape.scale(l, -0.5)?;
                tape.exp(h)
            };
            let nf = inv_norm(tape, ef)?;
            let nx = inv_norm(tape, ex)?;
            let nxt = tape.transpose(nx)?;
            let nfb = tape.broadcast_col(nf, m)?;
            let nxb = tape.broadcast_row(nxt, s)?;
            let cos = tape.hadamard(dots, nfb)?;
            let cos = tape.hadamard(cos, nxb)?;
            let neg = tape.scale(cos, -1.0)?;
            tape.add_const(neg, Matrix::filled(s, m, 1.0))
        }
    }
}
