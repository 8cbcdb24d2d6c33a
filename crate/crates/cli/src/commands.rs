use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use kdalign::acquisition::acquire_rules;
use kdalign::autodiff::Matrix;
use kdalign::config::RunConfig;
use kdalign::eval::{
    auprc, build_knowledge, make_synthetic, noise_study, read_csv, rec_at_k, report_csv, report_table,
    run_experiment_with_rules, split_dataset, write_csv, MetricReport, TabularData,
};
use kdalign::knowledge::{ddnnf_to_graph, embed_knowledge_set};
use kdalign::rules::{compile_rules, load_rules, model_count, render_rule_text, Rule};
use kdalign::train::{
    infer, load_checkpoint, save_checkpoint, train, Checkpoint, CheckpointMeta, OtDiagnostics, KNOWLEDGE_TENSOR,
};
use kdalign::util::{derive_seed, write_atomic};
use kdalign::{Error, Result};

use crate::{Cli, Command, ConfigArg};

pub fn run(cli: &Cli, overrides: &[String]) -> Result<()> {
    let cfg = |c: &ConfigArg| load_config(c, overrides, cli.seed);
    let no_config = || -> Result<()> {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(vec![format!(
                "this command takes no config overrides (got {})",
                overrides.join(", ")
            )]))
        }
    };
    match &cli.command {
        Command::Synth { config, out } => synth(&cfg(config)?, out),
        Command::AcquireRules {
            data,
            trees,
            max_depth,
            config,
            out,
        } => {
            let mut c = cfg(config)?;
            if let Some(t) = trees {
                c.rules.trees = *t;
            }
            if let Some(d) = max_depth {
                c.rules.max_depth = *d;
            }
            c.validate()?;
            acquire(&c, data, out)
        }
        Command::CompileRules { rules, out } => {
            no_config()?;
            compile(rules, out)
        }
        Command::Pretrain { rules, config, out } => pretrain(&cfg(config)?, rules, out),
        Command::Train {
            data,
            rules,
            encoder,
            config,
            out,
            dump_ot,
        } => train_cmd(&cfg(config)?, data, rules.as_deref(), encoder.as_deref(), out, *dump_ot),
        Command::Infer { checkpoint, data, out } => {
            no_config()?;
            infer_cmd(checkpoint, data, out)
        }
        Command::Eval { scores, labels } => {
            no_config()?;
            eval_cmd(scores, labels)
        }
        Command::Experiment { config, out } => experiment(&cfg(config)?, out),
        Command::NoiseStudy { config, out } => noise(&cfg(config)?, out),
    }
}

fn load_config(c: &ConfigArg, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml(&text, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    info!("effective config:\n{}", cfg.to_toml());
    Ok(cfg)
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn load_data(cfg: &RunConfig) -> Result<TabularData> {
    if cfg.data.path.is_empty() {
        make_synthetic(&cfg.data.synthetic)
    } else {
        read_csv(Path::new(&cfg.data.path))
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = make_synthetic(&cfg.data.synthetic)?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    write_atomic(out, &buf)?;
    write_text(&sidecar(out, ".config.toml"), &cfg.to_toml())
}

fn acquire(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let d = read_csv(data)?;
    let (rules, prov, _) = acquire_rules(&d.x, &d.y, &d.features, &cfg.acquire_config())?;
    info!("{} rules from {} trees", rules.len(), cfg.rules.trees);
    write_text(out, &render_rule_text(&rules))?;
    write_json(&sidecar(out, ".provenance.json"), &prov)?;
    write_text(&sidecar(out, ".config.toml"), &cfg.to_toml())
}

#[derive(Serialize)]
struct CompiledSummary {
    id: String,
    rule: String,
    cnf: String,
    nodes: usize,
    edges: usize,
    model_count: String,
}

fn compile(rules: &Path, out: &Path) -> Result<()> {
    let rules = load_rules(rules)?;
    let (table, compiled) = compile_rules(&rules)?;
    let n = table.len();
    let summary: Vec<CompiledSummary> = compiled
        .iter()
        .map(|c| CompiledSummary {
            id: c.rule.id.clone(),
            rule: c.rule.render(),
            cnf: c.cnf.to_string(),
            nodes: c.graph.len(),
            edges: (0..c.graph.len()).map(|i| c.graph.children(i).len()).sum(),
            model_count: model_count(&c.graph, n).to_string(),
        })
        .collect();
    #[derive(Serialize)]
    struct Out<'a> {
        propositions: Vec<&'a kdalign::rules::Proposition>,
        rules: Vec<CompiledSummary>,
    }
    write_json(
        out,
        &Out {
            propositions: table.iter().collect(),
            rules: summary,
        },
    )
}

fn pretrain(cfg: &RunConfig, rules: &Path, out: &Path) -> Result<()> {
    let rules = load_rules(rules)?;
    let know = build_knowledge(&rules, &cfg.know_encoder, cfg.model.embed_dim, cfg.seed)?;
    let mut ck = Checkpoint::new(CheckpointMeta {
        encoder: None,
        head: None,
        loss: None,
        know_encoder: Some(know.spec.clone()),
        seed: cfg.seed,
        epoch: cfg.know_encoder.pretrain.steps,
        val_auprc: None,
        notes: Default::default(),
    });
    if know.best_val_accuracy.is_finite() {
        ck.meta
            .notes
            .insert("triplet_accuracy".into(), format!("{}", know.best_val_accuracy));
    }
    ck.insert_params(&know.params);
    ck.tensors.insert(KNOWLEDGE_TENSOR.into(), know.embeddings);
    save_checkpoint(&ck, out)?;
    write_text(&sidecar(out, ".config.toml"), &cfg.to_toml())
}

/// `E_F` for `rules`, from a pretrained encoder checkpoint when given.
fn knowledge_for(cfg: &RunConfig, rules: &[Rule], encoder: Option<&Path>) -> Result<Matrix> {
    let Some(path) = encoder else {
        return Ok(build_knowledge(rules, &cfg.know_encoder, cfg.model.embed_dim, cfg.seed)?.embeddings);
    };
    let ck = load_checkpoint(path)?;
    let spec = ck
        .meta
        .know_encoder
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no knowledge encoder", path.display())))?;
    let (_, compiled) = compile_rules(rules)?;
    let graphs = compiled
        .iter()
        .map(|c| ddnnf_to_graph(&c.graph, spec.input_width))
        .collect::<Result<Vec<_>>>()?;
    embed_knowledge_set(&graphs, &ck.params("know_encoder/"), &spec)
}

#[derive(Serialize)]
struct TrainSummary {
    rules: usize,
    removed: usize,
    relabeled: usize,
    labeled: usize,
    best_epoch: usize,
    val_auprc: Option<f64>,
    test_auprc: Option<f64>,
}

fn train_cmd(
    cfg: &RunConfig,
    data: &Path,
    rules: Option<&Path>,
    encoder: Option<&Path>,
    out: &Path,
    dump_ot: bool,
) -> Result<()> {
    let d = read_csv(data)?;
    let rules = match rules {
        Some(p) => load_rules(p)?,
        None => acquire_rules(&d.x, &d.y, &d.features, &cfg.acquire_config())?.0,
    };
    let split = split_dataset(&d, &rules, cfg.data.k_labeled, derive_seed(cfg.seed, "split"))?;
    let mut tc = cfg.train_config(cfg.train.lambda);
    tc.seed = derive_seed(cfg.seed, "train");
    tc.record_ot = dump_ot;
    let uses_ot = tc.ot.enabled && tc.lambda > 0.0;
    let knowledge = if uses_ot && !rules.is_empty() {
        Some(knowledge_for(cfg, &rules, encoder)?)
    } else {
        if uses_ot {
            warn!("no rules; training without the alignment term");
        }
        None
    };
    let outcome = train(&split, knowledge.as_ref(), &cfg.model_spec(d.features.len()), &tc)?;

    out_dir(out)?;
    save_checkpoint(&outcome.checkpoint, &out.join("model.kdal"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &outcome.log {
        w.serialize(r).map_err(|e| Error::Data(format!("log CSV: {e}")))?;
    }
    let log = w.into_inner().map_err(|e| Error::Data(format!("log CSV: {e}")))?;
    write_atomic(&out.join("log.csv"), &log)?;
    write_text(&out.join("rules.txt"), &render_rule_text(&rules))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    if dump_ot {
        let dir = out.join("ot");
        out_dir(&dir)?;
        for diag in &outcome.ot_diagnostics {
            let OtDiagnostics { epoch, batch, .. } = diag;
            write_json(&dir.join(format!("e{epoch:03}_b{batch:03}.json")), diag)?;
        }
    }
    let test_auprc = if split.test_y.contains(&1) {
        Some(auprc(&infer(&outcome.checkpoint, &split.test_x)?, &split.test_y)?)
    } else {
        None
    };
    let summary = TrainSummary {
        rules: rules.len(),
        removed: split.removed,
        relabeled: split.relabeled,
        labeled: split.labeled.len(),
        best_epoch: outcome.checkpoint.meta.epoch,
        val_auprc: outcome.checkpoint.meta.val_auprc,
        test_auprc,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "best epoch {} val_auprc={} test_auprc={}",
        summary.best_epoch,
        fmt_opt(summary.val_auprc),
        fmt_opt(summary.test_auprc)
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn infer_cmd(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let d = read_csv(data)?;
    let scores = infer(&ck, &d.x)?;
    let mut text = String::from("score\n");
    for s in scores {
        text.push_str(&format!("{s}\n"));
    }
    write_text(out, &text)
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let col = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .position(|h| h.trim() == "score")
        .ok_or_else(|| Error::Data(format!("{}: no `score` column", path.display())))?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let cell = rec.get(col).unwrap_or("").trim();
        let v: f64 = cell.parse().map_err(|_| {
            Error::Data(format!("{}: line {}, column {}: not a number `{cell}`", path.display(), r + 2, col + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

fn eval_cmd(scores: &Path, labels: &Path) -> Result<()> {
    let s = read_scores(scores)?;
    let y = read_csv(labels)?.y;
    let ap = auprc(&s, &y)?;
    let rk = rec_at_k(&s, &y)?;
    println!("auprc={ap:?} rec@k={:?}", rk.value);
    Ok(())
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    write_text(&dir.join("report.txt"), &report_table(report))?;
    write_text(&dir.join("runs.csv"), &report_csv(report)?)?;
    write_json(&dir.join("report.json"), report)
}

fn experiment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let fixed = (!cfg.rules.path.is_empty())
        .then(|| load_rules(Path::new(&cfg.rules.path)))
        .transpose()?;
    let report = run_experiment_with_rules(&data, fixed.as_deref(), &cfg.experiment(data.features.len()))?;
    out_dir(out)?;
    write_report(out, &report)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    print!("{}", report_table(&report));
    Ok(())
}

#[derive(Serialize)]
struct NoiseRow<'a> {
    noise_ratio: f64,
    variant: &'a str,
    runs: usize,
    auprc_mean: f64,
    auprc_std: f64,
    rec_mean: f64,
    rec_std: f64,
}

fn noise(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let fixed = (!cfg.rules.path.is_empty())
        .then(|| load_rules(Path::new(&cfg.rules.path)))
        .transpose()?;
    let exp = cfg.experiment(data.features.len());
    let results = noise_study(&data, fixed.as_deref(), &exp, &cfg.eval.noise_ratios)?;
    out_dir(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut table = String::from("noise  variant    auprc_mean  auprc_std\n");
    for (ratio, rep) in &results {
        for s in &rep.summary {
            w.serialize(NoiseRow {
                noise_ratio: *ratio,
                variant: &s.variant,
                runs: s.runs,
                auprc_mean: s.auprc_mean,
                auprc_std: s.auprc_std,
                rec_mean: s.rec_mean,
                rec_std: s.rec_std,
            })
            .map_err(|e| Error::Data(format!("noise CSV: {e}")))?;
            table.push_str(&format!(
                "{:<5}  {:<10} {:>10.4}  {:>9.4}\n",
                ratio, s.variant, s.auprc_mean, s.auprc_std
            ));
        }
        let dir = out.join(format!("noise_{ratio}"));
        out_dir(&dir)?;
        write_report(&dir, rep)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("noise CSV: {e}")))?;
    write_atomic(&out.join("noise_study.csv"), &bytes)?;
    write_text(&out.join("noise_study.txt"), &table)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    print!("{table}");
    Ok(())
}
