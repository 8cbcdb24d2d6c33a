//! Hermetic tabular fixture: two Gaussian normal clusters, one anomaly
//! cluster that trees cannot isolate cleanly (source of labeled anomalies),
//! and one axis-separable anomaly cluster that acquired rules cover.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::TabularData;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_normal: usize,
    /// Anomalies mixed into the normal range; labeled anomalies come from here.
    pub n_hidden: usize,
    /// Anomalies beyond a single-feature threshold; covered by rules.
    pub n_rule: usize,
    /// Normal cluster centers sit at `±separation` on feature 0.
    pub separation: f64,
    pub hidden_scale: f64,
    /// Offset of the rule-covered cluster along feature 1.
    pub rule_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 6,
            n_normal: 1600,
            n_hidden: 120,
            n_rule: 120,
            separation: 3.0,
            hidden_scale: 2.0,
            rule_shift: 6.0,
            seed: 0,
        }
    }
}

pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f{i}")).collect()
}

/// Rows are shuffled; labels are 1 for both anomaly clusters.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<TabularData> {
    if cfg.dim < 2 {
        return Err(Error::Data("synthetic data needs at least 2 features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let mut rows: Vec<(Vec<f64>, u8)> = Vec::new();
    let gauss = |rng: &mut ChaCha8Rng, center: &[f64], scale: f64| -> Vec<f64> {
        center
            .iter()
            .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    for i in 0..cfg.n_normal {
        let mut c = vec![0.0; d];
        c[0] = if i % 2 == 0 { cfg.separation } else { -cfg.separation };
        rows.push((gauss(&mut rng, &c, 1.0), 0));
    }
    for _ in 0..cfg.n_hidden {
        // Between the normal clusters, spread wider in the remaining features.
        let mut v = gauss(&mut rng, &vec![0.0; d], cfg.hidden_scale);
        v[0] *= 0.5 / cfg.hidden_scale;
        rows.push((v, 1));
    }
    for _ in 0..cfg.n_rule {
        let mut c = vec![0.0; d];
        c[1] = cfg.rule_shift;
        rows.push((gauss(&mut rng, &c, 0.6), 1));
    }
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let n = rows.len();
    let x = Matrix::from_fn(n, d, |r, c| rows[r].0[c]);
    let y = rows.iter().map(|r| r.1).collect();
    TabularData::new(feature_names(d), x, y)
}
