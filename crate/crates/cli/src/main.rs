//! `kdalign` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdalign::{Error, ErrorClass};

const OVERRIDE_HELP: &str = "Any config key can be overridden with --section.key=value, \
e.g. --train.lambda=0.3 or --ot.metric=cosine.";

#[derive(Debug, Parser)]
#[command(name = "kdalign", version, about = "Rule-knowledge aligned weakly-supervised anomaly detection")]
#[command(after_help = OVERRIDE_HELP)]
pub struct Cli {
    /// Global seed; replaces the config's `seed`
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress to stderr (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration (built-in defaults when omitted)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the bundled synthetic dataset as CSV
    #[command(after_help = OVERRIDE_HELP)]
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract all-right anomaly paths from decision trees as rules
    #[command(after_help = OVERRIDE_HELP)]
    AcquireRules {
        /// Input CSV with a `label` column
        #[arg(long)]
        data: PathBuf,
        /// Number of trees (default: rules.trees)
        #[arg(long)]
        trees: Option<usize>,
        /// Maximum tree depth (default: rules.max_depth)
        #[arg(long)]
        max_depth: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
        /// Output rule file; provenance goes to <out>.provenance.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile rules to d-DNNF and report their structure
    CompileRules {
        /// Rule file
        #[arg(long)]
        rules: PathBuf,
        /// Output JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the knowledge encoder and embed the rule set
    #[command(after_help = OVERRIDE_HELP)]
    Pretrain {
        /// Rule file
        #[arg(long)]
        rules: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector, aligned with the rules when train.lambda > 0
    #[command(after_help = OVERRIDE_HELP)]
    Train {
        /// Input CSV with a `label` column and optional `split` column
        #[arg(long)]
        data: PathBuf,
        /// Rule file (default: acquired from the training data)
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Pretrained knowledge-encoder checkpoint (default: pretrain now)
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Write every batch's transport plan and residuals under <out>/ot/
        #[arg(long, default_value_t = false)]
        dump_ot: bool,
    },
    /// Score samples with a trained checkpoint
    Infer {
        /// Trained checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input CSV
        #[arg(long)]
        data: PathBuf,
        /// Output CSV with one `score` column
        #[arg(long)]
        out: PathBuf,
    },
    /// Print AUPRC and Rec@K of scores against labels
    Eval {
        /// CSV with a `score` column
        #[arg(long)]
        scores: PathBuf,
        /// CSV with a `label` column
        #[arg(long)]
        labels: PathBuf,
    },
    /// Baseline vs aligned detector over eval.runs seeds
    #[command(after_help = OVERRIDE_HELP)]
    Experiment {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the experiment at each of eval.noise_ratios
    #[command(after_help = OVERRIDE_HELP)]
    NoiseStudy {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(k, _)| k.contains('.'));
        if is_override {
            overrides.push(a[2..].to_string());
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(errs) => {
                    eprintln!("error: invalid configuration");
                    for m in errs {
                        eprintln!("  {m}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
