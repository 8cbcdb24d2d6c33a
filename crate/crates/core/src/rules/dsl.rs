//! Textual if/else rules.
//!
//! ```text
//! RULE := [ID ":"] "IF" COND ("AND" COND)* "THEN" "anomaly" "IS" ("true" | "false")
//! COND := IDENT PRED NUMBER
//! PRED := ">" | ">=" | "<" | "<=" | "=" | "!="
//! ```
//!
//! Keywords are case-insensitive. Rule files hold one rule per line and
//! treat everything after `#` as a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predicate {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Predicate {
    pub fn symbol(self) -> &'static str {
        match self {
            Predicate::Gt => ">",
            Predicate::Ge => ">=",
            Predicate::Lt => "<",
            Predicate::Le => "<=",
            Predicate::Eq => "=",
            Predicate::Ne => "!=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            ">" => Predicate::Gt,
            ">=" => Predicate::Ge,
            "<" => Predicate::Lt,
            "<=" => Predicate::Le,
            "=" => Predicate::Eq,
            "!=" => Predicate::Ne,
            _ => return None,
        })
    }

    /// Exact IEEE comparison of `value` against `threshold`.
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Predicate::Gt => value > threshold,
            Predicate::Ge => value >= threshold,
            Predicate::Lt => value < threshold,
            Predicate::Le => value <= threshold,
            Predicate::Eq => value == threshold,
            Predicate::Ne => value != threshold,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(rename = "attr")]
    pub attribute: String,
    #[serde(rename = "op")]
    pub predicate: Predicate,
    pub threshold: f64,
}

impl Condition {
    pub fn new(attribute: impl Into<String>, predicate: Predicate, threshold: f64) -> Result<Self> {
        let attribute = attribute.into();
        if attribute.is_empty() {
            return Err(Error::InvalidRule("empty attribute name".into()));
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidRule(format!(
                "threshold for `{attribute}` is not finite"
            )));
        }
        Ok(Condition {
            attribute,
            predicate,
            threshold,
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.attribute, self.predicate, self.threshold)
    }
}

/// A conjunctive antecedent implying an anomaly verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub conditions: Vec<Condition>,
    pub consequent: bool,
}

impl Rule {
    /// Builds a rule, rejecting empty or unsatisfiable antecedents.
    pub fn new(id: impl Into<String>, conditions: Vec<Condition>, consequent: bool) -> Result<Self> {
        let rule = Rule {
            id: id.into(),
            conditions,
            consequent,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::InvalidRule(format!("rule `{}` has no conditions", self.id)));
        }
        for c in &self.conditions {
            Condition::new(c.attribute.clone(), c.predicate, c.threshold)?;
        }
        let mut by_attr: BTreeMap<&str, Vec<&Condition>> = BTreeMap::new();
        for c in &self.conditions {
            by_attr.entry(c.attribute.as_str()).or_default().push(c);
        }
        for (attr, conds) in by_attr {
            if !satisfiable(&conds) {
                return Err(Error::InvalidRule(format!(
                    "rule `{}`: conditions on `{attr}` cannot hold together",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Canonical single-line DSL text (without the id prefix).
    pub fn render(&self) -> String {
        let conds: Vec<String> = self.conditions.iter().map(|c| c.to_string()).collect();
        format!(
            "IF {} THEN anomaly IS {}",
            conds.join(" AND "),
            self.consequent
        )
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.render())
    }
}

// Interval feasibility for the conditions on one attribute.
fn satisfiable(conds: &[&Condition]) -> bool {
    // (value, inclusive)
    let mut lo: Option<(f64, bool)> = None;
    let mut hi: Option<(f64, bool)> = None;
    let mut eq: Option<f64> = None;
    let mut excluded = Vec::new();
    for c in conds {
        let t = c.threshold;
        match c.predicate {
            Predicate::Gt | Predicate::Ge => {
                let inc = c.predicate == Predicate::Ge;
                lo = Some(match lo {
                    Some((v, i)) if v > t || (v == t && !i) => (v, i),
                    Some((v, i)) if v == t => (v, i && inc),
                    _ => (t, inc),
                });
            }
            Predicate::Lt | Predicate::Le => {
                let inc = c.predicate == Predicate::Le;
                hi = Some(match hi {
                    Some((v, i)) if v < t || (v == t && !i) => (v, i),
                    Some((v, i)) if v == t => (v, i && inc),
                    _ => (t, inc),
                });
            }
            Predicate::Eq => match eq {
                Some(v) if v != t => return false,
                _ => eq = Some(t),
            },
            Predicate::Ne => excluded.push(t),
        }
    }
    let admits = |x: f64| {
        lo.is_none_or(|(v, i)| x > v || (i && x == v))
            && hi.is_none_or(|(v, i)| x < v || (i && x == v))
            && !excluded.contains(&x)
    };
    if let Some(v) = eq {
        return admits(v);
    }
    match (lo, hi) {
        (Some((l, li)), Some((h, hi_inc))) => {
            if l < h {
                true
            } else {
                l == h && li && hi_inc && !excluded.contains(&l)
            }
        }
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Pred(String),
    Num(String),
    Colon,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
            {
                i += 1;
            }
            out.push((start, Tok::Word(text[start..i].to_string())));
        } else if b"<>=!".contains(&c) {
            while i < bytes.len() && b"<>=!".contains(&bytes[i]) {
                i += 1;
            }
            out.push((start, Tok::Pred(text[start..i].to_string())));
        } else if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' {
            i += 1;
            while i < bytes.len() {
                let b = bytes[i];
                let exp_sign = (b == b'-' || b == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                if b.is_ascii_alphanumeric() || b == b'.' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((start, Tok::Num(text[start..i].to_string())));
        } else if c == b':' {
            i += 1;
            out.push((start, Tok::Colon));
        } else {
            let ch = text[start..].chars().next().unwrap_or('?');
            return Err(Error::Parse {
                offset: start,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(o, _)| *o)
            .unwrap_or(self.text.len())
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.toks.get(self.pos), Some((_, Tok::Word(w))) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{kw}`"))
        }
    }

    fn condition(&mut self) -> Result<Condition> {
        let attribute = match self.toks.get(self.pos) {
            Some((_, Tok::Word(w)))
                if !["and", "then", "if"].iter().any(|k| w.eq_ignore_ascii_case(k)) =>
            {
                w.clone()
            }
            _ => return self.err("expected attribute name"),
        };
        self.pos += 1;
        let predicate = match self.toks.get(self.pos) {
            Some((_, Tok::Pred(p))) => match Predicate::from_symbol(p) {
                Some(p) => p,
                None => return self.err(format!("unknown predicate `{p}`")),
            },
            _ => return self.err("expected predicate"),
        };
        self.pos += 1;
        let threshold = match self.toks.get(self.pos) {
            Some((_, Tok::Num(n))) | Some((_, Tok::Word(n))) => match n.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return self.err(format!("threshold `{n}` is not a finite number")),
            },
            _ => return self.err("expected numeric threshold"),
        };
        self.pos += 1;
        Condition::new(attribute, predicate, threshold)
    }
}

/// Parses one rule. A leading `id:` prefix sets the rule id; otherwise it
/// is `"rule"`.
pub fn parse_rule(text: &str) -> Result<Rule> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        text,
    };
    let mut id = "rule".to_string();
    if let (Some((_, Tok::Word(w))), Some((_, Tok::Colon))) = (p.toks.first(), p.toks.get(1)) {
        id = w.clone();
        p.pos = 2;
    }
    p.keyword("if")?;
    if p.peek_keyword("then") {
        return p.err("empty antecedent");
    }
    let mut conditions = vec![p.condition()?];
    while p.peek_keyword("and") {
        p.pos += 1;
        conditions.push(p.condition()?);
    }
    p.keyword("then")?;
    p.keyword("anomaly")?;
    p.keyword("is")?;
    let consequent = if p.peek_keyword("true") {
        true
    } else if p.peek_keyword("false") {
        false
    } else {
        return p.err("expected `true` or `false`");
    };
    p.pos += 1;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Rule::new(id, conditions, consequent)
}

/// Parses a line-oriented rule file. Rules without an explicit id get
/// `r<n>` by position.
pub fn parse_rule_text(text: &str) -> Result<Vec<Rule>> {
    let mut rules = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("");
        if !body.trim().is_empty() {
            let mut rule = parse_rule(body).map_err(|e| match e {
                Error::Parse { offset, message } => Error::Parse {
                    offset: line_start + offset,
                    message,
                },
                other => other,
            })?;
            if !body.contains(':') {
                rule.id = format!("r{}", rules.len());
            }
            rules.push(rule);
        }
        line_start += line.len();
    }
    check_unique_ids(&rules)?;
    Ok(rules)
}

pub fn render_rule_text(rules: &[Rule]) -> String {
    rules.iter().map(|r| format!("{r}\n")).collect()
}

fn check_unique_ids(rules: &[Rule]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in rules {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidRule(format!("duplicate rule id `{}`", r.id)));
        }
    }
    Ok(())
}

/// Reads either the line DSL or the structured JSON form (detected by a
/// leading `[`).
pub fn load_rules(path: &Path) -> Result<Vec<Rule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        let rules: Vec<Rule> = serde_json::from_str(&text)?;
        for r in &rules {
            r.validate()?;
        }
        check_unique_ids(&rules)?;
        Ok(rules)
    } else {
        parse_rule_text(&text)
    }
}

pub fn rules_to_json(rules: &[Rule]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rules)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_condition_rule() {
        let r = parse_rule("IF attr_1 > 5 AND attr_2 = 0 THEN anomaly IS true").unwrap();
        assert_eq!(
            r.conditions,
            vec![
                Condition::new("attr_1", Predicate::Gt, 5.0).unwrap(),
                Condition::new("attr_2", Predicate::Eq, 0.0).unwrap(),
            ]
        );
        assert!(r.consequent);
    }

    #[test]
    fn single_condition_and_case_insensitive() {
        let r = parse_rule("if x >= 0 then Anomaly is TRUE").unwrap();
        assert_eq!(r.conditions.len(), 1);
        assert_eq!(r.conditions[0].predicate, Predicate::Ge);
        let r = parse_rule("if x<-1.5e-3 then anomaly is false").unwrap();
        assert_eq!(r.conditions[0].threshold, -1.5e-3);
        assert!(!r.consequent);
    }

    #[test]
    fn empty_antecedent_offset() {
        match parse_rule("IF THEN anomaly IS true") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 3);
                assert!(message.contains("empty antecedent"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_kinds() {
        let e = parse_rule("IF x => 3 THEN anomaly IS true").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 5, ref message } if message.contains("unknown predicate")));
        let e = parse_rule("IF x > abc THEN anomaly IS true").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 7, ref message } if message.contains("not a finite")));
        let e = parse_rule("IF x > 1 THEN anomaly IS maybe").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
        let e = parse_rule("IF x > 1 THEN anomaly IS true extra").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn contradictory_antecedent_rejected() {
        assert!(parse_rule("IF x > 5 AND x < 2 THEN anomaly IS true").is_err());
        assert!(parse_rule("IF x = 1 AND x = 2 THEN anomaly IS true").is_err());
        assert!(parse_rule("IF x >= 2 AND x <= 2 AND x != 2 THEN anomaly IS true").is_err());
        assert!(parse_rule("IF x > 2 AND x <= 2 THEN anomaly IS true").is_err());
        assert!(parse_rule("IF x >= 2 AND x <= 2 THEN anomaly IS true").is_ok());
        assert!(parse_rule("IF x > 1 AND x < 2 AND x != 1.5 THEN anomaly IS true").is_ok());
    }

    #[test]
    fn rule_file_ids_and_comments() {
        let text = "# header\nIF a > 1 THEN anomaly IS true\n\nk9: IF b <= 2 THEN anomaly IS true # tail\n";
        let rules = parse_rule_text(text).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].id, "r0");
        assert_eq!(rules[1].id, "k9");
        let again = parse_rule_text(&render_rule_text(&rules)).unwrap();
        assert_eq!(again, rules);
    }

    #[test]
    fn file_offsets_are_absolute() {
        let e = parse_rule_text("IF a > 1 THEN anomaly IS true\nIF THEN anomaly IS true\n").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 33, .. }));
    }

    #[test]
    fn json_round_trip() {
        let rules = parse_rule_text("IF a > 1 AND b != 0.25 THEN anomaly IS true\n").unwrap();
        let json = rules_to_json(&rules).unwrap();
        assert!(json.contains("\"attr\": \"a\""));
        let back: Vec<Rule> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rules);
    }
}
