use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn positives(labels: &[u8]) -> Result<usize> {
    let p = labels.iter().filter(|&&y| y == 1).count();
    if p == 0 {
        return Err(Error::Data("metric needs at least one positive label".into()));
    }
    Ok(p)
}

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable, so equal scores keep input order.
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Average precision: `Σ_t (R_t − R_{t−1})·P_t` over a descending sweep with
/// tied scores forming a single threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auprc", format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let p = positives(labels)? as f64;
    let order = descending_order(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let mut group_pos = 0;
        while k < order.len() && scores[order[k]] == s {
            group_pos += usize::from(labels[order[k]] == 1);
            seen += 1;
            k += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            ap += group_pos as f64 / p * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecAtK {
    pub value: f64,
    pub k: usize,
    /// The k-th and (k+1)-th ranked samples share a score; the cut then
    /// follows input order.
    pub tie_at_cut: bool,
}

fn top_k_hits(scores: &[f64], labels: &[u8], k: usize) -> (usize, bool) {
    let order = descending_order(scores);
    let hits = order[..k].iter().filter(|&&i| labels[i] == 1).count();
    let tie = k > 0 && k < order.len() && scores[order[k - 1]] == scores[order[k]];
    (hits, tie)
}

/// Recall among the `k` top-scored samples, `k` = number of positives.
pub fn rec_at_k(scores: &[f64], labels: &[u8]) -> Result<RecAtK> {
    if scores.len() != labels.len() {
        return Err(Error::shape("rec_at_k", format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let k = positives(labels)?;
    let (hits, tie_at_cut) = top_k_hits(scores, labels, k);
    if tie_at_cut {
        warn!("tied scores at the top-{k} cut; resolved by input order");
    }
    Ok(RecAtK {
        value: hits as f64 / k as f64,
        k,
        tie_at_cut,
    })
}

pub fn precision_at_k(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let k = k.min(scores.len());
    if k == 0 {
        return 0.0;
    }
    top_k_hits(scores, labels, k).0 as f64 / k as f64
}

pub fn f1_at_k(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let p_total = labels.iter().filter(|&&y| y == 1).count();
    let k = k.min(scores.len());
    let hits = top_k_hits(scores, labels, k).0 as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / k as f64;
    let recall = hits / p_total as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_summed_example() {
        let ap = auprc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert!((auprc(&[0.3; 8], &[1, 0, 0, 1, 0, 0, 0, 1]).unwrap() - 3.0 / 8.0).abs() < 1e-15);
        assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn recall_at_k_cases() {
        let r = rec_at_k(&[0.9, 0.8, 0.1, 0.05], &[1, 1, 0, 0]).unwrap();
        assert_eq!((r.value, r.k, r.tie_at_cut), (1.0, 2, false));
        assert_eq!(rec_at_k(&[0.1, 0.2, 0.8, 0.9, 0.7], &[1, 1, 0, 0, 0]).unwrap().value, 0.0);
        let t = rec_at_k(&[0.5, 0.5, 0.5], &[0, 1, 0]).unwrap();
        assert!(t.tie_at_cut);
        assert_eq!(t.value, 0.0);
    }
}
