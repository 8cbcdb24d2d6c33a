use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dsl::Rule;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Feature name to column lookup.
#[derive(Debug, Clone, Default)]
pub struct FeatureIndex {
    names: Vec<String>,
    by_name: HashMap<String, usize>,
}

impl FeatureIndex {
    pub fn new(names: &[String]) -> Self {
        FeatureIndex {
            names: names.to_vec(),
            by_name: names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Whether every antecedent condition of `rule` holds for `sample`.
pub fn match_rule(rule: &Rule, sample: &[f64], features: &FeatureIndex) -> Result<bool> {
    for c in &rule.conditions {
        let col = features
            .get(&c.attribute)
            .filter(|&i| i < sample.len())
            .ok_or_else(|| Error::UnknownAttribute(c.attribute.clone()))?;
        if !c.predicate.holds(sample[col], c.threshold) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Row-wise match mask of `rule` over `x`.
pub fn match_rows(rule: &Rule, x: &Matrix, features: &FeatureIndex) -> Result<Vec<bool>> {
    (0..x.rows()).map(|r| match_rule(rule, x.row(r), features)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub id: String,
    /// Samples of either class matched by the rule.
    pub matched: usize,
    pub matched_anomalies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub per_rule: Vec<RuleStats>,
    /// Labeled anomalies matched by at least one rule.
    pub rule_detect: usize,
    pub anomalies: usize,
    /// `rule_detect / anomalies`, or 0 without anomalies.
    pub rate: f64,
}

pub fn rule_match_stats(
    rules: &[Rule],
    x: &Matrix,
    labels: &[u8],
    features: &FeatureIndex,
) -> Result<MatchStats> {
    if labels.len() != x.rows() {
        return Err(Error::Data(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let mut any = vec![false; x.rows()];
    let mut per_rule = Vec::with_capacity(rules.len());
    for rule in rules {
        let mask = match_rows(rule, x, features)?;
        let mut s = RuleStats {
            id: rule.id.clone(),
            matched: 0,
            matched_anomalies: 0,
        };
        for (i, &m) in mask.iter().enumerate() {
            if m {
                s.matched += 1;
                s.matched_anomalies += usize::from(labels[i] == 1);
                any[i] = true;
            }
        }
        per_rule.push(s);
    }
    let anomalies = labels.iter().filter(|&&y| y == 1).count();
    let rule_detect = any
        .iter()
        .zip(labels)
        .filter(|(&m, &y)| m && y == 1)
        .count();
    let rate = if anomalies == 0 {
        0.0
    } else {
        rule_detect as f64 / anomalies as f64
    };
    Ok(MatchStats {
        per_rule,
        rule_detect,
        anomalies,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::dsl::parse_rule;

    fn idx() -> FeatureIndex {
        FeatureIndex::new(&["attr_1".to_string(), "attr_2".to_string()])
    }

    #[test]
    fn strict_boundary() {
        let r = parse_rule("IF attr_1 > 5 AND attr_2 = 0 THEN anomaly IS true").unwrap();
        assert!(match_rule(&r, &[6.0, 0.0], &idx()).unwrap());
        assert!(!match_rule(&r, &[5.0, 0.0], &idx()).unwrap());
    }

    #[test]
    fn missing_attribute_errors() {
        let r = parse_rule("IF attr_1 > 5 AND attr_2 = 0 THEN anomaly IS true").unwrap();
        let only_first = FeatureIndex::new(&["attr_1".to_string()]);
        assert!(matches!(
            match_rule(&r, &[6.0], &only_first),
            Err(Error::UnknownAttribute(a)) if a == "attr_2"
        ));
    }

    #[test]
    fn stats() {
        let x = Matrix::from_rows(&[
            vec![6.0, 0.0],
            vec![7.0, 0.0],
            vec![8.0, 1.0],
            vec![1.0, 0.0],
            vec![9.0, 0.0],
            vec![0.0, 0.0],
            vec![6.5, 0.0],
        ]);
        let y = [1, 1, 1, 1, 1, 0, 0];
        let r = parse_rule("IF attr_1 > 5 AND attr_2 = 0 THEN anomaly IS true").unwrap();
        let s = rule_match_stats(&[r], &x, &y, &idx()).unwrap();
        assert_eq!(s.rule_detect, 3);
        assert_eq!(s.per_rule[0].matched, 4);
        assert!((s.rate - 0.6).abs() < 1e-15);
        let none = rule_match_stats(&[], &x, &y, &idx()).unwrap();
        assert_eq!(none.rate, 0.0);
    }
}
