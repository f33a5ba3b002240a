//! Command-line surface.

mod commands;

pub use commands::*;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::io::load_json;
use crate::metrics::GroupBy;

#[derive(Debug, Parser)]
#[command(
    name = "dogen",
    version,
    about = "Domain-gated ensembles of machine-generated text detectors"
)]
pub struct Cli {
    /// Run configuration (`dogen-config/1` JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for balancing, splitting and every training run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Balance, split and write the training corpus.
    Prepare {
        /// Overrides `train_corpus` from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum)]
        balancing: Option<crate::config::Balancing>,
    },
    /// Train one expert per domain (and the pooled global expert).
    TrainExperts,
    /// Train the domain router.
    TrainRouter,
    /// Fit the weighted-vote stacker on expert scores.
    FitStacker,
    /// Train experts and router end to end.
    JointTrain {
        #[arg(long, value_enum, default_value = "domain")]
        init: JointInitMode,
    },
    /// Score a JSONL file with one strategy.
    Score(ScoreArgs),
    /// Build AUROC / TPR@FPR reports from score files.
    Evaluate {
        /// Labeled JSONL the scores refer to.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "domain")]
        group_by: GroupByArg,
    },
    /// Gate weight versus expert AUROC analysis.
    AnalyzeRouter {
        #[arg(long)]
        records: PathBuf,
        /// Ensemble file; defaults to the trained experts and router.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Generate a synthetic multi-domain corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// dogen, equal_vote, weighted_vote, jt_scratch, jt_domain,
    /// global_expert, or expert:<domain>.
    #[arg(long, default_value = "dogen")]
    pub strategy: String,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Score with this ensemble file instead of the trained components.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Number of experts combined per document.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GroupByArg {
    Domain,
    Generator,
    None,
}

impl From<GroupByArg> for Option<GroupBy> {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::Domain => Some(GroupBy::Domain),
            GroupByArg::Generator => Some(GroupBy::Generator),
            GroupByArg::None => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `SyntheticSpec` JSON; when absent the flags below build a spec with
    /// disjoint per-domain vocabularies.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    #[arg(long, default_value_t = 40)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 40)]
    pub doc_length: usize,
    #[arg(long, default_value_t = 400)]
    pub docs_per_class: usize,
    #[arg(long, default_value_t = 0.8)]
    pub machine_shift: f64,
    /// Defaults to `<out>/synthetic.jsonl`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Writes to stdout; a closed pipe (`dogen ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(value)?))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Prepare { corpus, balancing } => {
            if corpus.is_some() {
                cfg.train_corpus = corpus;
            }
            if let Some(b) = balancing {
                cfg.balancing = b;
            }
            print_json(&cmd_prepare(&cfg)?.manifest)
        }
        Command::TrainExperts => {
            let out = cmd_train_experts(&cfg)?;
            for e in out.experts.iter().chain(&out.global_expert) {
                if let Some(err) = &e.error {
                    eprintln!("expert {}: {err}", e.domain);
                }
            }
            print_json(&out)
        }
        Command::TrainRouter => print_json(&cmd_train_router(&cfg)?),
        Command::FitStacker => {
            let (_, report) = cmd_fit_stacker(&cfg)?;
            emit(&report.to_markdown())
        }
        Command::JointTrain { init } => {
            let model = cmd_joint_train(&cfg, init)?;
            print_json(&model.train_meta)
        }
        Command::Score(args) => {
            let path = cmd_score(
                &cfg,
                &args.strategy,
                &args.input,
                args.output.as_deref(),
                args.ensemble.as_deref(),
                args.k,
            )?;
            emit(&format!("{}\n", path.display()))
        }
        Command::Evaluate {
            records,
            scores,
            group_by,
        } => {
            let report = cmd_evaluate(&cfg, &scores, &records, group_by.into())?;
            emit(&report.to_markdown())
        }
        Command::AnalyzeRouter { records, ensemble } => {
            let report = cmd_analyze_router(&cfg, ensemble.as_deref(), &records)?;
            emit(&report.to_markdown())
        }
        Command::Synth(args) => {
            let spec = match &args.spec {
                Some(p) => {
                    let mut spec: SyntheticSpec = load_json(p)?;
                    if let Some(seed) = cli.seed {
                        spec.seed = seed;
                    }
                    spec
                }
                None => SyntheticSpec::disjoint(
                    args.domains,
                    args.vocab_size,
                    args.doc_length,
                    args.docs_per_class,
                    args.machine_shift,
                    cli.seed.unwrap_or(cfg.split.seed),
                ),
            };
            let output = args
                .output
                .unwrap_or_else(|| cfg.out_dir.join("synthetic.jsonl"));
            print_json(&cmd_synth(&spec, &output)?)
        }
    }
}
