//! Prediction losses `L_P`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-12;
pub const PRIOR_SAMPLES: usize = 5000;
pub const DEVIATION_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Deviation,
}

/// Mean binary cross-entropy of probabilities, clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let n = scores.len().max(1) as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum::<f64>()
        / n
}

/// BCE of `sigmoid(logits)` written as `mean(softplus(z) − y·z)`.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    let y = tape.constant(Matrix::column(labels));
    let sp = tape.softplus(logits)?;
    let yz = tape.hadamard(y, logits)?;
    let per = tape.sub(sp, yz)?;
    tape.mean(per)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub mean: f64,
    pub std: f64,
}

/// Reference score distribution from `n` standard-normal draws.
pub fn prior_stats(n: usize, seed: u64) -> Result<Prior> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mean = draws.iter().sum::<f64>() / n.max(1) as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::Numeric("deviation prior has zero spread".into()));
    }
    Ok(Prior { mean, std })
}

pub fn deviation_loss(scores: &[f64], labels: &[f64], prior: Prior, margin: f64) -> f64 {
    let n = scores.len().max(1) as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let dev = (s - prior.mean) / prior.std;
            (1.0 - y) * dev.abs() + y * (margin - dev).max(0.0)
        })
        .sum::<f64>()
        / n
}

pub fn deviation_loss_tape(tape: &mut Tape, raw: Var, labels: &[f64], prior: Prior, margin: f64) -> Result<Var> {
    let m = labels.len();
    let shifted = tape.add_const(raw, Matrix::filled(m, 1, -prior.mean))?;
    let dev = tape.scale(shifted, 1.0 / prior.std)?;
    let pos = tape.relu(dev)?;
    let neg_dev = tape.scale(dev, -1.0)?;
    let neg = tape.relu(neg_dev)?;
    let abs = tape.add(pos, neg)?;
    let gap = tape.add_const(neg_dev, Matrix::filled(m, 1, margin))?;
    let hinge = tape.relu(gap)?;
    let normal_w = tape.constant(Matrix::column(&labels.iter().map(|y| 1.0 - y).collect::<Vec<_>>()));
    let anomaly_w = tape.constant(Matrix::column(labels));
    let a = tape.hadamard(normal_w, abs)?;
    let b = tape.hadamard(anomaly_w, hinge)?;
    let per = tape.add(a, b)?;
    tape.mean(per)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half_is_ln2() {
        let l = bce_loss(&[0.5; 6], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]) < 1e-11);
    }

    #[test]
    fn logits_form_matches_probabilities() {
        let z = [-3.0, -0.2, 0.0, 1.5, 4.0];
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let mut t = Tape::new();
        let zv = t.constant(Matrix::column(&z));
        let l = bce_with_logits(&mut t, zv, &y).unwrap();
        let p: Vec<f64> = z.iter().map(|v| 1.0 / (1.0 + (-v as f64).exp())).collect();
        assert!((t.value(l).item() - bce_loss(&p, &y)).abs() < 1e-12);
    }

    #[test]
    fn deviation_margin_and_zero() {
        let prior = prior_stats(PRIOR_SAMPLES, 3).unwrap();
        assert!(prior.mean.abs() < 0.1 && (prior.std - 1.0).abs() < 0.05);
        assert!(deviation_loss(&[prior.mean; 4], &[0.0; 4], prior, 5.0).abs() < 1e-15);
        let high = prior.mean + 6.0 * prior.std;
        assert_eq!(deviation_loss(&[high], &[1.0], prior, 5.0), 0.0);
        assert!(prior_stats(1, 0).is_err());
    }

    #[test]
    fn deviation_tape_matches_scalar() {
        let prior = Prior { mean: 0.1, std: 0.9 };
        let s = [-2.0, 0.3, 4.9, 7.0, 0.1];
        let y = [0.0, 1.0, 1.0, 1.0, 0.0];
        let mut t = Tape::new();
        let sv = t.constant(Matrix::column(&s));
        let l = deviation_loss_tape(&mut t, sv, &y, prior, 5.0).unwrap();
        assert!((t.value(l).item() - deviation_loss(&s, &y, prior, 5.0)).abs() < 1e-12);
    }
}
