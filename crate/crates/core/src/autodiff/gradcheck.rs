//! Central finite-difference checks of tape adjoints.

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in name order.
    pub per_param: Vec<(String, f64)>,
    pub max_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Error between an analytic and numeric derivative, relative to the larger
/// magnitude with a floor of `1e-3` so that near-zero entries are judged
/// absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `h`, entry by entry for every parameter.
pub fn grad_check<F>(f: F, params: &ParamSet, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, ps)?;
        Ok(t.value(l).item())
    };

    let mut per_param = Vec::new();
    let mut probe = params.clone();
    for name in params.names() {
        let analytic = grads
            .param(name)
            .unwrap_or_else(|| {
                let m = params.get(name).expect("listed");
                super::Matrix::zeros(m.rows(), m.cols())
            });
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = params.get(name).expect("listed").data()[k];
            probe.get_mut(name).expect("listed").data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("listed").data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("listed").data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        per_param.push((name.to_string(), worst));
    }
    let max_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_error,
        tol,
        passed: max_error <= tol,
    })
}
