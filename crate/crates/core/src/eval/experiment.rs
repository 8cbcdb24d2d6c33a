//! Per-seed pipeline: rules → compile → pretrain → split → train → test
//! metrics, for the plain detector and the knowledge-aligned one.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::dataset::{split_dataset, Dataset, TabularData};
use super::metrics::{auprc, rec_at_k};
use crate::acquisition::{acquire_rules, inject_noise, AcquireConfig};
use crate::autodiff::{Matrix, ParamSet};
use crate::encoder::{EncoderSpec, HeadOutput, HeadSpec};
use crate::error::{Error, Result};
use crate::knowledge::{
    ddnnf_to_graph, embed_knowledge_set, pretrain_encoder, KnowEncoderSpec, PretrainConfig,
    KIND_FEATURES,
};
use crate::rules::{compile_rules, Rule};
use crate::train::{infer, train, ModelSpec, TrainConfig, TrainOutcome};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgeSetup {
    pub layers: usize,
    pub hidden: usize,
    /// 0 = one column per proposition plus the node-type block.
    pub input_width: usize,
    pub pretrain: PretrainConfig,
}

impl Default for KnowledgeSetup {
    fn default() -> Self {
        KnowledgeSetup {
            layers: 2,
            hidden: 0,
            input_width: 0,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub k_labeled: usize,
    pub acquire: AcquireConfig,
    pub knowledge: KnowledgeSetup,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Candidate `λ` values; the one with the best validation AUPRC is kept.
    pub lambdas: Vec<f64>,
    pub noise_ratio: f64,
}

impl ExperimentConfig {
    /// Desk-scale setup for `d`-feature data: MLP 64→32, five seeds, ten
    /// labeled anomalies.
    pub fn desk(d: usize) -> Self {
        ExperimentConfig {
            seeds: (0..5).collect(),
            k_labeled: 10,
            acquire: AcquireConfig::default(),
            knowledge: KnowledgeSetup::default(),
            model: ModelSpec {
                encoder: EncoderSpec::mlp(d, vec![64], 32),
                head: HeadSpec {
                    hidden: Vec::new(),
                    output: HeadOutput::Sigmoid,
                },
            },
            train: TrainConfig {
                epochs: 60,
                lr: 1e-2,
                ..TrainConfig::default()
            },
            lambdas: vec![0.01, 0.03, 0.1, 0.3, 1.0],
            noise_ratio: 0.0,
        }
    }
}

/// Frozen knowledge embeddings with their encoder.
#[derive(Debug, Clone)]
pub struct Knowledge {
    pub spec: KnowEncoderSpec,
    pub params: ParamSet,
    pub embeddings: Matrix,
    pub best_val_accuracy: f64,
}

/// Compiles `rules`, pretrains the knowledge encoder, and embeds the set.
pub fn build_knowledge(rules: &[Rule], setup: &KnowledgeSetup, embed_dim: usize, seed: u64) -> Result<Knowledge> {
    if rules.is_empty() {
        return Err(Error::Data("no rules to embed".into()));
    }
    let (table, compiled) = compile_rules(rules)?;
    let input_width = if setup.input_width == 0 {
        KIND_FEATURES + table.len()
    } else {
        setup.input_width
    };
    let spec = KnowEncoderSpec {
        input_width,
        layers: setup.layers,
        hidden: if setup.hidden == 0 { embed_dim } else { setup.hidden },
        output: embed_dim,
    };
    let graphs: Vec<_> = compiled.iter().map(|c| c.graph.clone()).collect();
    let pre = PretrainConfig {
        seed: derive_seed(seed, "pretrain"),
        ..setup.pretrain.clone()
    };
    let (params, acc) = if graphs.len() >= 2 {
        let out = pretrain_encoder(&graphs, &spec, &pre)?;
        (out.params, out.best_val_accuracy)
    } else {
        (crate::knowledge::init_params(&spec, pre.seed)?, f64::NAN)
    };
    let fgs = graphs
        .iter()
        .map(|g| ddnnf_to_graph(g, spec.input_width))
        .collect::<Result<Vec<_>>>()?;
    let embeddings = embed_knowledge_set(&fgs, &params, &spec)?;
    Ok(Knowledge {
        spec,
        params,
        embeddings,
        best_val_accuracy: acc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub variant: String,
    pub lambda: f64,
    pub val_auprc: f64,
    pub test_auprc: f64,
    pub rec_at_k: f64,
    pub k: usize,
    pub rules: usize,
    pub removed: usize,
    pub noise_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub runs: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub rec_mean: f64,
    pub rec_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<RunRow>,
    pub summary: Vec<Summary>,
    pub stratified: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn summarize(rows: &[RunRow]) -> Vec<Summary> {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let sel: Vec<&RunRow> = rows.iter().filter(|r| r.variant == v).collect();
            let (am, asd) = mean_std(&sel.iter().map(|r| r.test_auprc).collect::<Vec<_>>());
            let (rm, rsd) = mean_std(&sel.iter().map(|r| r.rec_at_k).collect::<Vec<_>>());
            Summary {
                variant: v.to_string(),
                runs: sel.len(),
                auprc_mean: am,
                auprc_std: asd,
                rec_mean: rm,
                rec_std: rsd,
            }
        })
        .collect()
}

fn test_metrics(out: &TrainOutcome, data: &Dataset) -> Result<(f64, f64, usize)> {
    let scores = infer(&out.checkpoint, &data.test_x)?;
    let ap = auprc(&scores, &data.test_y)?;
    let rk = rec_at_k(&scores, &data.test_y)?;
    Ok((ap, rk.value, rk.k))
}

/// Rules for one seed: acquired on the full labeled data, then perturbed.
pub fn seed_rules(data: &TabularData, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Rule>> {
    let mut acq = cfg.acquire.clone();
    acq.tree.seed = derive_seed(seed, "acquire");
    let (rules, _, _) = acquire_rules(&data.x, &data.y, &data.features, &acq)?;
    let (noisy, _) = inject_noise(&rules, cfg.noise_ratio, derive_seed(seed, "noise"), &data.x, &data.y, &data.features)?;
    Ok(noisy)
}

/// Baseline and knowledge-aligned rows for a single seed.
pub fn run_seed(data: &TabularData, rules: &[Rule], cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunRow>> {
    let split = split_dataset(data, rules, cfg.k_labeled, derive_seed(seed, "split"))?;
    let embed_dim = cfg.model.encoder.embed_dim;
    let know = build_knowledge(rules, &cfg.knowledge, embed_dim, seed)?;
    let base_cfg = TrainConfig {
        seed: derive_seed(seed, "train"),
        lambda: 0.0,
        ot: crate::train::OtConfig {
            enabled: false,
            ..cfg.train.ot.clone()
        },
        ..cfg.train.clone()
    };
    let row = |variant: &str, lambda: f64, out: &TrainOutcome| -> Result<RunRow> {
        let (ap, rk, k) = test_metrics(out, &split)?;
        Ok(RunRow {
            seed,
            variant: variant.to_string(),
            lambda,
            val_auprc: out.checkpoint.meta.val_auprc.unwrap_or(f64::NAN),
            test_auprc: ap,
            rec_at_k: rk,
            k,
            rules: rules.len(),
            removed: split.removed,
            noise_ratio: cfg.noise_ratio,
        })
    };
    let base = train(&split, None, &cfg.model, &base_cfg)?;
    let mut rows = vec![row("baseline", 0.0, &base)?];

    let mut best: Option<(f64, RunRow)> = None;
    for &lambda in &cfg.lambdas {
        let kd_cfg = TrainConfig {
            lambda,
            ot: crate::train::OtConfig {
                enabled: true,
                ..cfg.train.ot.clone()
            },
            ..base_cfg.clone()
        };
        let out = match train(&split, Some(&know.embeddings), &cfg.model, &kd_cfg) {
            Ok(o) => o,
            // A diverging candidate is dropped from the search, not fatal.
            Err(e @ Error::Numeric(_)) if cfg.lambdas.len() > 1 => {
                warn!("seed {seed} lambda {lambda} skipped: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let r = row("kdalign", lambda, &out)?;
        info!("seed {seed} lambda {lambda}: val {:.4} test {:.4}", r.val_auprc, r.test_auprc);
        if best.as_ref().is_none_or(|(v, _)| r.val_auprc > *v) {
            best = Some((r.val_auprc, r));
        }
    }
    match best {
        Some((_, r)) => rows.push(r),
        None if !cfg.lambdas.is_empty() => {
            return Err(Error::Numeric(format!("seed {seed}: every lambda candidate diverged")))
        }
        None => {}
    }
    Ok(rows)
}

pub fn run_experiment(data: &TabularData, cfg: &ExperimentConfig) -> Result<MetricReport> {
    run_experiment_with_rules(data, None, cfg)
}

/// As [`run_experiment`], but with a fixed rule set (perturbed per seed at
/// `cfg.noise_ratio`) instead of rules acquired from the data.
pub fn run_experiment_with_rules(data: &TabularData, rules: Option<&[Rule]>, cfg: &ExperimentConfig) -> Result<MetricReport> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let rules = match rules {
            Some(r) => {
                inject_noise(r, cfg.noise_ratio, derive_seed(seed, "noise"), &data.x, &data.y, &data.features)?.0
            }
            None => seed_rules(data, cfg, seed)?,
        };
        rows.extend(run_seed(data, &rules, cfg, seed)?);
    }
    Ok(MetricReport {
        summary: summarize(&rows),
        rows,
        stratified: data.split.is_none(),
    })
}

/// One experiment per noise ratio.
pub fn noise_study(
    data: &TabularData,
    rules: Option<&[Rule]>,
    cfg: &ExperimentConfig,
    ratios: &[f64],
) -> Result<Vec<(f64, MetricReport)>> {
    ratios
        .iter()
        .map(|&r| {
            let c = ExperimentConfig {
                noise_ratio: r,
                ..cfg.clone()
            };
            Ok((r, run_experiment_with_rules(data, rules, &c)?))
        })
        .collect()
}

pub fn report_table(report: &MetricReport) -> String {
    let mut s = String::from("variant    runs  auprc_mean  auprc_std  rec@k_mean  rec@k_std\n");
    for v in &report.summary {
        s.push_str(&format!(
            "{:<10} {:>4}  {:>10.4}  {:>9.4}  {:>10.4}  {:>9.4}\n",
            v.variant, v.runs, v.auprc_mean, v.auprc_std, v.rec_mean, v.rec_std
        ));
    }
    s
}

pub fn report_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(r).map_err(|e| Error::Data(format!("report CSV: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("report CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}
