//! Tabular data ingestion and the weakly-supervised split protocol.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rules::{match_rule, FeatureIndex, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Raw labeled table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub features: Vec<String>,
    pub x: Matrix,
    pub y: Vec<u8>,
    /// Fixed assignment from a `split` column, when present.
    pub split: Option<Vec<Split>>,
}

impl TabularData {
    pub fn new(features: Vec<String>, x: Matrix, y: Vec<u8>) -> Result<Self> {
        if x.rows() != y.len() || x.cols() != features.len() {
            return Err(Error::Data(format!(
                "{}x{} matrix with {} labels and {} feature names",
                x.rows(),
                x.cols(),
                y.len(),
                features.len()
            )));
        }
        Ok(TabularData {
            features,
            x,
            y,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_index(&self) -> FeatureIndex {
        FeatureIndex::new(&self.features)
    }

    pub fn subset(&self, rows: &[usize]) -> TabularData {
        TabularData {
            features: self.features.clone(),
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            split: self.split.as_ref().map(|s| rows.iter().map(|&r| s[r]).collect()),
        }
    }
}

/// Reads a CSV with a header row, numeric feature columns, a `label`
/// column in {0,1} and an optional `split` column.
pub fn read_csv(path: &Path) -> Result<TabularData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv(input: impl std::io::Read) -> Result<TabularData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Data("CSV has no `label` column".into()))?;
    let split_col = header.iter().position(|h| h == "split");
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != label_col && Some(c) != split_col)
        .collect();
    let features: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();

    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut split = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // Line numbers count the header as line 1.
        let line = r + 2;
        let rec = rec.map_err(|e| Error::Data(format!("CSV line {line}: {e}")))?;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |c: usize, what: &str| {
            Error::Data(format!(
                "CSV line {line}, column {} (`{}`): {what} `{}`",
                c + 1,
                header[c],
                cell(c)
            ))
        };
        for &c in &feature_cols {
            let v: f64 = cell(c).parse().map_err(|_| bad(c, "not a number:"))?;
            if !v.is_finite() {
                return Err(bad(c, "non-finite value"));
            }
            data.push(v);
        }
        y.push(match cell(label_col) {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad(label_col, "label must be 0 or 1, got")),
        });
        if let Some(sc) = split_col {
            split.push(Split::parse(cell(sc)).ok_or_else(|| bad(sc, "split must be train/val/test, got"))?);
        }
    }
    let x = Matrix::new(y.len(), features.len(), data)?;
    let mut t = TabularData::new(features, x, y)?;
    if split_col.is_some() {
        t.split = Some(split);
    }
    Ok(t)
}

pub fn write_csv(data: &TabularData, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("CSV write: {e}"));
    let mut header = data.features.clone();
    header.push("label".into());
    if data.split.is_some() {
        header.push("split".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[r].to_string());
        if let Some(s) = &data.split {
            rec.push(s[r].name().into());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("CSV write: {e}")))?;
    Ok(())
}

/// Train/val/test partition as the detector sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<String>,
    pub train_x: Matrix,
    /// Training labels as used for fitting: 1 only for `X_A`.
    pub train_y: Vec<u8>,
    /// Ground truth for the training rows (diagnostics only).
    pub train_truth: Vec<u8>,
    /// Row ids of `X_A` within the training rows.
    pub labeled: Vec<usize>,
    pub val_x: Matrix,
    pub val_y: Vec<u8>,
    pub test_x: Matrix,
    pub test_y: Vec<u8>,
    /// Rule-matched training anomalies deleted from the training split.
    pub removed: usize,
    /// Unmatched training anomalies left in the unlabeled pool as normal.
    pub relabeled: usize,
    pub stratified: bool,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

fn shuffled(mut v: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    v.shuffle(rng);
    v
}

/// Stratified 7:1:2 split (or the fixed `split` column), removal of
/// rule-matched training anomalies, and selection of `k` labeled anomalies.
pub fn split_dataset(data: &TabularData, rules: &[Rule], k_labeled: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let stratified = data.split.is_none();
    match &data.split {
        Some(tags) => {
            for (i, t) in tags.iter().enumerate() {
                match t {
                    Split::Train => train.push(i),
                    Split::Val => val.push(i),
                    Split::Test => test.push(i),
                }
            }
        }
        None => {
            for class in [0u8, 1] {
                let idx: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == class).collect();
                let n = idx.len();
                let n_train = (0.7 * n as f64).round() as usize;
                let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
                let idx = shuffled(idx, &mut rng);
                train.extend_from_slice(&idx[..n_train]);
                val.extend_from_slice(&idx[n_train..n_train + n_val]);
                test.extend_from_slice(&idx[n_train + n_val..]);
            }
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
        }
    }

    let fi = data.feature_index();
    let mut kept = Vec::with_capacity(train.len());
    let mut removed = 0;
    for &i in &train {
        if data.y[i] == 1 {
            let mut hit = false;
            for rule in rules {
                if match_rule(rule, data.x.row(i), &fi)? {
                    hit = true;
                    break;
                }
            }
            if hit {
                removed += 1;
                continue;
            }
        }
        kept.push(i);
    }
    let pool: Vec<usize> = (0..kept.len()).filter(|&p| data.y[kept[p]] == 1).collect();
    if pool.len() < k_labeled {
        return Err(Error::Data(format!(
            "need {k_labeled} labeled anomalies but only {} training anomalies remain after removing {removed} rule-matched ones (short by {})",
            pool.len(),
            k_labeled - pool.len()
        )));
    }
    let mut labeled: Vec<usize> = shuffled(pool.clone(), &mut rng)[..k_labeled].to_vec();
    labeled.sort_unstable();
    let mut train_y = vec![0u8; kept.len()];
    for &p in &labeled {
        train_y[p] = 1;
    }
    let sub = |rows: &[usize]| (data.x.select_rows(rows), rows.iter().map(|&r| data.y[r]).collect::<Vec<u8>>());
    let (train_x, train_truth) = sub(&kept);
    let (val_x, val_y) = sub(&val);
    let (test_x, test_y) = sub(&test);
    Ok(Dataset {
        features: data.features.clone(),
        train_x,
        train_y,
        train_truth,
        labeled,
        val_x,
        val_y,
        test_x,
        test_y,
        removed,
        relabeled: pool.len() - k_labeled,
        stratified,
    })
}
