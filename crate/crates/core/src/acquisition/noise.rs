//! Perturbing rules into incompletely correct ones.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rules::{match_rule, FeatureIndex, Predicate, Rule};

const MAX_REDRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// Indices of the perturbed rules.
    pub modified: Vec<usize>,
    /// Normal training samples matched by each perturbed rule.
    pub normal_matches: Vec<usize>,
}

/// Number of rules perturbed at `ratio` out of `s`.
pub fn noisy_count(ratio: f64, s: usize) -> usize {
    ((ratio * s as f64) - 1e-9).ceil().max(0.0) as usize
}

struct Column {
    sorted: Vec<f64>,
}

impl Column {
    fn quantile_of(&self, v: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x <= v);
        below as f64 / self.sorted.len() as f64
    }

    /// Threshold at quantile `q`; beyond [0, 1] it steps past the extremes.
    fn value_at(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let (lo, hi) = (self.sorted[0], self.sorted[n - 1]);
        let span = (hi - lo).abs().max(1.0);
        if q <= 0.0 {
            lo - span
        } else if q >= 1.0 {
            hi + span
        } else {
            self.sorted[((q * (n - 1) as f64).round() as usize).min(n - 1)]
        }
    }
}

fn normal_matches(rule: &Rule, x: &Matrix, y: &[u8], fi: &FeatureIndex) -> Result<usize> {
    let mut n = 0;
    for r in 0..x.rows() {
        if y[r] == 0 && match_rule(rule, x.row(r), fi)? {
            n += 1;
        }
    }
    Ok(n)
}

// Direction that enlarges the set a condition accepts.
fn loosening_sign(p: Predicate) -> f64 {
    match p {
        Predicate::Gt | Predicate::Ge => -1.0,
        Predicate::Lt | Predicate::Le => 1.0,
        Predicate::Eq | Predicate::Ne => 1.0,
    }
}

/// Perturbs `⌈ratio·s⌉` rules, each by moving one condition's threshold
/// 10–30 percentiles along that feature's distribution in `x`. A
/// perturbation is kept only if the rule then matches a normal sample of
/// `(x, y)`; after 20 rejected draws the shift is widened step by step.
pub fn inject_noise(
    rules: &[Rule],
    ratio: f64,
    seed: u64,
    x: &Matrix,
    y: &[u8],
    features: &[String],
) -> Result<(Vec<Rule>, NoiseReport)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Data(format!("noise ratio {ratio} outside [0, 1]")));
    }
    let count = noisy_count(ratio, rules.len());
    let mut out = rules.to_vec();
    let mut report = NoiseReport {
        modified: Vec::new(),
        normal_matches: Vec::new(),
    };
    if count == 0 {
        return Ok((out, report));
    }
    if !y.contains(&0) {
        return Err(Error::Data("noise injection needs normal samples".into()));
    }
    let fi = FeatureIndex::new(features);
    let columns: Vec<Column> = (0..x.cols())
        .map(|c| {
            let mut sorted: Vec<f64> = (0..x.rows()).map(|r| x.get(r, c)).collect();
            sorted.sort_by(f64::total_cmp);
            Column { sorted }
        })
        .collect();
    let col_of = |attr: &str| fi.get(attr).ok_or_else(|| Error::UnknownAttribute(attr.to_string()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, rules.len(), count).into_vec();
    chosen.sort_unstable();
    for &ri in &chosen {
        let base = &rules[ri];
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let ci = rng.random_range(0..base.conditions.len());
            let cond = &base.conditions[ci];
            let col = &columns[col_of(&cond.attribute)?];
            let offset = rng.random_range(0.10..=0.30);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let q = col.quantile_of(cond.threshold) + sign * offset;
            let mut cand = base.clone();
            cand.conditions[ci].threshold = col.value_at(q);
            if cand.validate().is_ok() && normal_matches(&cand, x, y, &fi)? > 0 {
                accepted = Some(cand);
                break;
            }
        }
        if accepted.is_none() {
            // Widen: loosen conditions one after another in 10-point steps.
            let mut cand = base.clone();
            'widen: for ci in 0..cand.conditions.len() {
                let col = &columns[col_of(&cand.conditions[ci].attribute)?];
                let sign = loosening_sign(cand.conditions[ci].predicate);
                let start = col.quantile_of(cand.conditions[ci].threshold);
                for step in 3..=11 {
                    cand.conditions[ci].threshold = col.value_at(start + sign * step as f64 * 0.1);
                    if cand.validate().is_ok() && normal_matches(&cand, x, y, &fi)? > 0 {
                        break 'widen;
                    }
                }
            }
            accepted = Some(cand);
        }
        let noisy = accepted.expect("set above");
        report.normal_matches.push(normal_matches(&noisy, x, y, &fi)?);
        report.modified.push(ri);
        out[ri] = noisy;
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(noisy_count(0.0, 5), 0);
        assert_eq!(noisy_count(0.2, 5), 1);
        assert_eq!(noisy_count(1.0, 5), 5);
        assert_eq!(noisy_count(0.05, 14), 1);
        assert_eq!(noisy_count(0.1, 10), 1);
    }

    #[test]
    fn ratio_bounds() {
        let x = Matrix::zeros(1, 1);
        assert!(inject_noise(&[], 1.5, 0, &x, &[0], &["a".into()]).is_err());
        assert!(inject_noise(&[], -0.1, 0, &x, &[0], &["a".into()]).is_err());
    }
}
