//! Run configuration: a TOML file with per-stage sections, overridable
//! key by key with `section.key=value` strings.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::acquisition::{AcquireConfig, TreeConfig};
use crate::encoder::{Activation, EncoderKind, EncoderSpec, HeadOutput, HeadSpec, LossKind};
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, KnowledgeSetup, SyntheticConfig};
use crate::train::{ModelSpec, OtConfig, TrainConfig};
use crate::util::derive_step_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// CSV path; empty means the bundled synthetic generator.
    pub path: String,
    pub k_labeled: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: String::new(),
            k_labeled: 10,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesSection {
    /// Rule file; empty means rules are acquired from the data.
    pub path: String,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: f64,
    pub bootstrap: bool,
    pub noise_ratio: f64,
}

impl Default for RulesSection {
    fn default() -> Self {
        let a = AcquireConfig::default();
        RulesSection {
            path: String::new(),
            trees: a.trees,
            max_depth: a.tree.max_depth,
            min_leaf: a.tree.min_leaf,
            feature_subsample: a.tree.feature_subsample,
            bootstrap: a.bootstrap,
            noise_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub kind: EncoderKind,
    /// MLP hidden widths before the embedding layer.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub blocks: usize,
    pub block_hidden: usize,
    pub dropout_first: f64,
    pub dropout_second: f64,
    pub embed_activation: Activation,
    pub head_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: EncoderKind::Mlp,
            hidden: vec![64],
            embed_dim: 32,
            blocks: 2,
            block_hidden: 64,
            dropout_first: 0.0,
            dropout_second: 0.0,
            embed_activation: Activation::Relu,
            head_hidden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// `λ` for a single training run.
    pub lambda: f64,
    /// `λ` candidates searched by experiments.
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss: LossKind,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let desk = ExperimentConfig::desk(1);
        let t = desk.train;
        TrainSection {
            lambda: t.lambda,
            lambdas: desk.lambdas,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            loss: t.loss,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Independent repetitions, each with a seed derived from the global one.
    pub runs: usize,
    pub noise_ratios: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            runs: 5,
            noise_ratios: vec![0.0, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub rules: RulesSection,
    pub know_encoder: KnowledgeSetup,
    pub model: ModelSection,
    pub ot: OtConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

// Leaf keys of `t` as dotted paths.
fn leaves(t: &Table, prefix: &str, out: &mut Vec<(String, Value)>) {
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(sub) => leaves(sub, &path, out),
            _ => out.push((path, v.clone())),
        }
    }
}

fn set_path(t: &mut Table, path: &str, v: Value) -> std::result::Result<(), String> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| format!("empty key in `{path}`"))?;
    let mut cur = t;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(sub) => sub,
            _ => return Err(format!("`{path}`: `{p}` is not a section")),
        };
    }
    cur.insert(last.to_string(), v);
    Ok(())
}

/// Value of an override: any TOML literal, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn decode(t: Table) -> std::result::Result<(RunConfig, Vec<String>), String> {
    let mut unknown = Vec::new();
    let cfg = serde_ignored::deserialize(Value::Table(t), |p| unknown.push(p.to_string())).map_err(|e| {
        let msg = e.to_string();
        msg.lines().next().unwrap_or_default().to_string()
    })?;
    Ok((cfg, unknown))
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (`section.key=value`) and checks
    /// the result; every offending key is reported in one error.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut errs = Vec::new();
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("config file: {}", e.message())]))?;
        for o in overrides {
            let o = o.trim_start_matches("--");
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = set_path(&mut table, k.trim(), parse_value(v.trim())) {
                        errs.push(e);
                    }
                }
                None => errs.push(format!("override `{o}` is not of the form section.key=value")),
            }
        }
        let mut keys = Vec::new();
        leaves(&table, "", &mut keys);
        for (path, v) in &keys {
            let mut single = Table::new();
            set_path(&mut single, path, v.clone()).expect("path came from a table");
            match decode(single) {
                Ok((_, unknown)) if !unknown.is_empty() => errs.push(format!("unknown key `{path}`")),
                Ok(_) => {}
                Err(e) => errs.push(format!("`{path}`: {e}")),
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let (cfg, _) = decode(table).map_err(|e| Error::Config(vec![e]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut take = |r: Result<()>| match r {
            Err(Error::Config(v)) => errs.extend(v),
            Err(e) => errs.push(e.to_string()),
            Ok(()) => {}
        };
        take(self.train_config(self.train.lambda).validate());
        take(self.encoder_spec(1).validate());
        take(self.head_spec().validate());
        if !(0.0..=1.0).contains(&self.rules.noise_ratio) {
            errs.push("rules.noise_ratio must lie in [0, 1]".into());
        }
        if self.eval.noise_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            errs.push("eval.noise_ratios must lie in [0, 1]".into());
        }
        if self.rules.trees == 0 {
            errs.push("rules.trees must be >= 1".into());
        }
        if self.eval.runs == 0 {
            errs.push("eval.runs must be >= 1".into());
        }
        if self.know_encoder.layers == 0 {
            errs.push("know_encoder.layers must be >= 1".into());
        }
        if self.train.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            errs.push("train.lambdas must be finite and >= 0".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn encoder_spec(&self, input_dim: usize) -> EncoderSpec {
        let m = &self.model;
        EncoderSpec {
            kind: m.kind,
            input_dim,
            hidden: m.hidden.clone(),
            embed_dim: m.embed_dim,
            blocks: m.blocks,
            block_hidden: m.block_hidden,
            dropout_first: m.dropout_first,
            dropout_second: m.dropout_second,
            embed_activation: m.embed_activation,
        }
    }

    pub fn head_spec(&self) -> HeadSpec {
        HeadSpec {
            hidden: self.model.head_hidden.clone(),
            output: match self.train.loss {
                LossKind::Bce => HeadOutput::Sigmoid,
                LossKind::Deviation => HeadOutput::Raw,
            },
        }
    }

    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder_spec(input_dim),
            head: self.head_spec(),
        }
    }

    pub fn train_config(&self, lambda: f64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            seed: self.seed,
            loss: t.loss,
            patience: t.patience,
            ot: self.ot.clone(),
            record_ot: false,
        }
    }

    pub fn acquire_config(&self) -> AcquireConfig {
        let r = &self.rules;
        AcquireConfig {
            trees: r.trees,
            bootstrap: r.bootstrap,
            tree: TreeConfig {
                max_depth: r.max_depth,
                min_leaf: r.min_leaf,
                feature_subsample: r.feature_subsample,
                seed: self.seed,
            },
        }
    }

    /// Per-run seeds, all derived from the global one.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.eval.runs as u64).map(|i| derive_step_seed(self.seed, "run", i)).collect()
    }

    pub fn experiment(&self, input_dim: usize) -> ExperimentConfig {
        ExperimentConfig {
            seeds: self.run_seeds(),
            k_labeled: self.data.k_labeled,
            acquire: self.acquire_config(),
            knowledge: self.know_encoder.clone(),
            model: self.model_spec(input_dim),
            train: self.train_config(self.train.lambda),
            lambdas: self.train.lambdas.clone(),
            noise_ratio: self.rules.noise_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str, overrides: &[&str]) -> Vec<String> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        match RunConfig::from_toml(text, &o) {
            Err(Error::Config(v)) => v,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml(
            "seed = 3\n[train]\nepochs = 4\n",
            &["--train.lambda=0.5".into(), "ot.metric=cosine".into(), "model.hidden=[8, 4]".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.ot.metric, crate::ot::CostMetric::Cosine);
        assert_eq!(c.model.hidden, vec![8, 4]);
    }

    #[test]
    fn every_bad_key_is_reported() {
        let errs = errors(
            "[train]\nepochs = \"many\"\nlamda = 1\n[bogus]\nx = 1\n",
            &["ot.max_iter=-3", "data.synthetic.dims=4"],
        );
        assert_eq!(errs.len(), 5, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("train.epochs")));
        assert!(errs.iter().any(|e| e.contains("unknown key `train.lamda`")));
        assert!(errs.iter().any(|e| e.contains("unknown key `bogus.x`")));
        assert!(errs.iter().any(|e| e.contains("ot.max_iter")));
        assert!(errs.iter().any(|e| e.contains("unknown key `data.synthetic.dims`")));
    }

    #[test]
    fn semantic_errors_are_collected() {
        let errs = errors("", &["train.epochs=0", "train.lambda=-1", "rules.noise_ratio=2"]);
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_toml("", &["ot.epsilon=0.2".into()]).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
    }
}
