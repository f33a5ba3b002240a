//! Pipeline commands. Each reads and writes files under the configured
//! output directory and returns a summary of what it produced.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Balancing, RunConfig, Strategy};
use crate::corpus::{
    balance_global, balance_per_domain, group_by_domain, load_jsonl, manifest, split_train_val,
    synthesize_corpus, to_jsonl_string, CorpusManifest, Document, SyntheticSpec,
};
use crate::ensemble::{
    equal_vote, fit_stacker, joint_train, normalized_weights, score_experts, stacker_score,
    EnsembleModel, JointInit, StackerModel,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::expert::{train_expert, train_pooled_expert, ExpertModel};
use crate::features::FeaturizerConfig;
use crate::io::{load_json, sanitize, save_json, save_json_pretty, write_atomic};
use crate::metrics::{
    evaluate, router_auroc_correlation, AnalysisReport, EvalRecord, EvalReport, GroupBy,
};
use crate::router::{routing_accuracy, train_router, RouterModel};

pub const GLOBAL_EXPERT_NAME: &str = "global";

fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    load_jsonl(path)
}

fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    write_atomic(path, to_jsonl_string(docs).as_bytes())
}

fn require_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("{what} is not set in the configuration")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOutput {
    pub raw_manifest: CorpusManifest,
    pub manifest: CorpusManifest,
    pub train_size: usize,
    pub val_size: usize,
}

/// Balances the training corpus, splits it per domain and writes
/// `prepared/{corpus,train,val}.jsonl`, per-domain split files, and manifests.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareOutput> {
    let src = require_path(&cfg.train_corpus, "train_corpus")?;
    let docs = read_corpus(src)?;
    let dir = cfg.prepared_dir();
    let balanced = match cfg.balancing {
        Balancing::PerDomain => balance_per_domain(&docs, cfg.split.seed)?,
        Balancing::Global => balance_global(&docs, cfg.split.seed)?,
        Balancing::Unbalanced => docs.clone(),
    };
    if cfg.balancing == Balancing::Unbalanced {
        let bytes = fs::read(src).map_err(|e| Error::io(src, e))?;
        write_atomic(&dir.join("corpus.jsonl"), &bytes)?;
    } else {
        write_corpus(&dir.join("corpus.jsonl"), &balanced)?;
    }
    let (train, val) = split_train_val(&balanced, &cfg.split)?;
    write_corpus(&dir.join("train.jsonl"), &train)?;
    write_corpus(&dir.join("val.jsonl"), &val)?;

    let mut seen = BTreeMap::new();
    for (domain, _) in group_by_domain(&balanced) {
        let safe = sanitize(&domain);
        if let Some(other) = seen.insert(safe.clone(), domain.clone()) {
            return Err(Error::invalid(format!(
                "domains {other:?} and {domain:?} map to the same file name"
            )));
        }
        let sub = dir.join("splits").join(&safe);
        let pick = |set: &[Document]| -> Vec<Document> {
            set.iter().filter(|d| d.domain == domain).cloned().collect()
        };
        write_corpus(&sub.join("train.jsonl"), &pick(&train))?;
        write_corpus(&sub.join("val.jsonl"), &pick(&val))?;
    }

    let out = PrepareOutput {
        raw_manifest: manifest(&docs),
        manifest: manifest(&balanced),
        train_size: train.len(),
        val_size: val.len(),
    };
    save_json_pretty(&dir.join("raw_manifest.json"), &out.raw_manifest)?;
    save_json_pretty(&dir.join("manifest.json"), &out.manifest)?;
    Ok(out)
}

fn prepared_splits(cfg: &RunConfig) -> Result<(Vec<Document>, Vec<Document>)> {
    let dir = cfg.prepared_dir();
    Ok((
        read_corpus(&dir.join("train.jsonl"))?,
        read_corpus(&dir.join("val.jsonl"))?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSummary {
    pub domain: String,
    pub file: Option<String>,
    pub val_auroc: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub epochs_run: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExpertsOutput {
    pub experts: Vec<ExpertSummary>,
    #[serde(default)]
    pub global_expert: Option<ExpertSummary>,
}

fn summarize(domain: &str, file: &str, result: &Result<ExpertModel>) -> ExpertSummary {
    match result {
        Ok(m) => ExpertSummary {
            domain: domain.to_string(),
            file: Some(file.to_string()),
            val_auroc: m.train_meta.as_ref().and_then(|t| t.val_auroc),
            best_val_loss: m.train_meta.as_ref().map(|t| t.run.best_val_loss),
            epochs_run: m.train_meta.as_ref().map(|t| t.run.epochs_run),
            error: None,
        },
        Err(e) => ExpertSummary {
            domain: domain.to_string(),
            file: None,
            val_auroc: None,
            best_val_loss: None,
            epochs_run: None,
            error: Some(e.to_string()),
        },
    }
}

/// Trains one expert per domain (concurrently), plus the pooled global
/// expert when that strategy is enabled. A failing domain is recorded in the
/// summary without stopping the others.
pub fn cmd_train_experts(cfg: &RunConfig) -> Result<TrainExpertsOutput> {
    let (train, val) = prepared_splits(cfg)?;
    let dir = cfg.experts_dir();
    let domains: Vec<String> = crate::router::sorted_domains(&train);
    let results = Execution::default().map(&domains, |domain| {
        let pick = |set: &[Document]| -> Vec<Document> {
            set.iter()
                .filter(|d| &d.domain == domain)
                .cloned()
                .collect()
        };
        train_expert(
            &pick(&train),
            &pick(&val),
            domain,
            &cfg.expert_training,
            &cfg.featurizer,
        )
    });
    let mut experts = Vec::new();
    for (domain, result) in domains.iter().zip(&results) {
        let file = format!("{}.json", sanitize(domain));
        if let Ok(model) = result {
            save_json(&dir.join(&file), model)?;
        }
        experts.push(summarize(domain, &file, result));
    }
    let global_expert = if cfg.wants(Strategy::GlobalExpert) {
        let result = train_pooled_expert(
            &train,
            &val,
            GLOBAL_EXPERT_NAME,
            &cfg.expert_training,
            &cfg.featurizer,
        );
        let file = "global_expert.json";
        if let Ok(model) = &result {
            save_json(&cfg.models_dir().join(file), model)?;
        }
        Some(summarize(GLOBAL_EXPERT_NAME, file, &result))
    } else {
        None
    };
    let out = TrainExpertsOutput {
        experts,
        global_expert,
    };
    save_json_pretty(&dir.join("summary.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterSummary {
    pub domains: Vec<String>,
    pub val_accuracy: f64,
    pub val_gate_loss: f64,
    pub initial_val_gate_loss: f64,
}

pub fn cmd_train_router(cfg: &RunConfig) -> Result<RouterSummary> {
    let (train, val) = prepared_splits(cfg)?;
    let router = train_router(&train, &val, &cfg.router_training, &cfg.featurizer)?;
    let meta = router
        .train_meta
        .as_ref()
        .expect("trained router carries metadata");
    let summary = RouterSummary {
        domains: router.domains.clone(),
        val_accuracy: routing_accuracy(&router, &val, Execution::default())?,
        val_gate_loss: meta.best_val_loss,
        initial_val_gate_loss: meta.val_loss_history[0],
    };
    save_json(&cfg.models_dir().join("router.json"), &router)?;
    save_json_pretty(&cfg.models_dir().join("router_summary.json"), &summary)?;
    Ok(summary)
}

/// Loads every expert listed in the training summary, ordered by domain.
pub fn load_experts(cfg: &RunConfig) -> Result<Vec<ExpertModel>> {
    let dir = cfg.experts_dir();
    let summary: TrainExpertsOutput = load_json(&dir.join("summary.json"))?;
    summary
        .experts
        .iter()
        .map(|s| {
            let file = s.file.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "expert {:?} failed to train: {}",
                    s.domain,
                    s.error.as_deref().unwrap_or("unknown error")
                ))
            })?;
            let path = dir.join(file);
            let m: ExpertModel = load_json(&path)?;
            m.validate().map_err(|e| Error::Model {
                path,
                message: e.to_string(),
            })?;
            Ok(m)
        })
        .collect()
}

pub fn load_router(cfg: &RunConfig) -> Result<RouterModel> {
    let path = cfg.models_dir().join("router.json");
    let r: RouterModel = load_json(&path)?;
    r.validate().map_err(|e| Error::Model {
        path,
        message: e.to_string(),
    })?;
    Ok(r)
}

pub fn load_ensemble_file(path: &Path) -> Result<EnsembleModel> {
    let m: EnsembleModel = load_json(path)?;
    m.validate().map_err(|e| Error::Model {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(m)
}

/// The separately trained experts gated by the separately trained router.
pub fn assemble_dogen(cfg: &RunConfig) -> Result<EnsembleModel> {
    let router = load_router(cfg)?;
    let experts = load_experts(cfg)?;
    check_same_dims(
        experts
            .iter()
            .map(|e| &e.featurizer)
            .chain([&router.featurizer]),
    )?;
    let k = cfg.k.min(router.n_domains());
    EnsembleModel::new(router, experts, k)
}

fn check_same_dims<'a>(mut configs: impl Iterator<Item = &'a FeaturizerConfig>) -> Result<()> {
    if let Some(first) = configs.next() {
        if let Some(other) = configs.find(|c| c.dims != first.dims) {
            return Err(Error::invalid(format!(
                "model files disagree on featurizer dims ({} vs {})",
                first.dims, other.dims
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackerReport {
    pub weights: Vec<(String, f64)>,
}

impl StackerReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Expert | Ensemble weight |\n|---|---:|\n");
        for (d, w) in &self.weights {
            out.push_str(&format!("| {d} | {w:.3} |\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("expert,weight\n");
        for (d, w) in &self.weights {
            out.push_str(&format!("{d},{w}\n"));
        }
        out
    }
}

/// Fits the weighted-vote stacker on expert scores of the training split and
/// writes the model plus a normalized-weight table sorted by weight.
pub fn cmd_fit_stacker(cfg: &RunConfig) -> Result<(StackerModel, StackerReport)> {
    let (train, _) = prepared_splits(cfg)?;
    let experts = load_experts(cfg)?;
    check_same_dims(experts.iter().map(|e| &e.featurizer))?;
    let matrix = Execution::default().map(&train, |d| score_experts(&experts, &d.text));
    let labels: Vec<_> = train.iter().map(|d| d.label).collect();
    let mut stacker = fit_stacker(&matrix, &labels)?;
    stacker.domains = experts.iter().map(|e| e.domain.clone()).collect();
    let mut weights: Vec<(String, f64)> = stacker
        .domains
        .iter()
        .cloned()
        .zip(normalized_weights(&stacker)?)
        .collect();
    weights.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let report = StackerReport { weights };
    let dir = cfg.models_dir();
    save_json(&dir.join("stacker.json"), &stacker)?;
    write_atomic(
        &dir.join("stacker_weights.md"),
        report.to_markdown().as_bytes(),
    )?;
    write_atomic(&dir.join("stacker_weights.csv"), report.to_csv().as_bytes())?;
    Ok((stacker, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum JointInitMode {
    Scratch,
    Domain,
}

impl JointInitMode {
    pub fn strategy(self) -> Strategy {
        match self {
            JointInitMode::Scratch => Strategy::JtScratch,
            JointInitMode::Domain => Strategy::JtDomain,
        }
    }
}

pub fn cmd_joint_train(cfg: &RunConfig, mode: JointInitMode) -> Result<EnsembleModel> {
    let (train, val) = prepared_splits(cfg)?;
    let init = match mode {
        JointInitMode::Scratch => JointInit::Scratch,
        JointInitMode::Domain => JointInit::FromCheckpoints(assemble_dogen(cfg)?),
    };
    let model = joint_train(init, &train, &val, &cfg.joint_training, &cfg.featurizer)?;
    save_json(
        &cfg.models_dir()
            .join(format!("{}.json", mode.strategy().name())),
        &model,
    )?;
    Ok(model)
}

/// Anything that maps a text to a detector score.
pub enum Scorer {
    Gated(EnsembleModel),
    EqualVote(Vec<ExpertModel>),
    Weighted(Vec<ExpertModel>, StackerModel),
    Single(ExpertModel),
}

impl Scorer {
    pub fn score(&self, text: &str) -> f64 {
        match self {
            Scorer::Gated(m) => m.score(text),
            Scorer::EqualVote(experts) => equal_vote(&score_experts(experts, text)),
            Scorer::Weighted(experts, st) => stacker_score(st, &score_experts(experts, text))
                .expect("stacker aligned with experts"),
            Scorer::Single(e) => e.score(text),
        }
    }
}

/// Resolves a strategy name (or `expert:<domain>`) to a scorer built from the
/// model files under the output directory. `ensemble` overrides the model
/// file for gated strategies; `k` overrides the gate width.
pub fn load_scorer(
    cfg: &RunConfig,
    strategy: &str,
    ensemble: Option<&Path>,
    k: Option<usize>,
) -> Result<Scorer> {
    let gated = |m: EnsembleModel| -> Result<Scorer> {
        check_same_dims(
            m.experts
                .iter()
                .map(|e| &e.featurizer)
                .chain([&m.router.featurizer]),
        )?;
        Ok(Scorer::Gated(match k {
            Some(k) => m.with_k(k)?,
            None => m,
        }))
    };
    if let Some(path) = ensemble {
        return gated(load_ensemble_file(path)?);
    }
    if let Some(domain) = strategy.strip_prefix("expert:") {
        let experts = load_experts(cfg)?;
        return experts
            .into_iter()
            .find(|e| e.domain == domain)
            .map(Scorer::Single)
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()));
    }
    let s = Strategy::parse(strategy)
        .ok_or_else(|| Error::Config(format!("unknown strategy {strategy:?}")))?;
    match s {
        Strategy::Dogen => gated(assemble_dogen(cfg)?),
        Strategy::JtScratch | Strategy::JtDomain => gated(load_ensemble_file(
            &cfg.models_dir().join(format!("{}.json", s.name())),
        )?),
        Strategy::EqualVote => {
            let experts = load_experts(cfg)?;
            check_same_dims(experts.iter().map(|e| &e.featurizer))?;
            Ok(Scorer::EqualVote(experts))
        }
        Strategy::WeightedVote => {
            let experts = load_experts(cfg)?;
            check_same_dims(experts.iter().map(|e| &e.featurizer))?;
            let st: StackerModel = load_json(&cfg.models_dir().join("stacker.json"))?;
            let domains: Vec<&String> = experts.iter().map(|e| &e.domain).collect();
            if !st.domains.is_empty() && st.domains.iter().collect::<Vec<_>>() != domains {
                return Err(Error::invalid(
                    "stacker columns do not match the trained experts",
                ));
            }
            if st.coefficients.len() != experts.len() {
                return Err(Error::DimensionMismatch {
                    expected: experts.len(),
                    actual: st.coefficients.len(),
                });
            }
            Ok(Scorer::Weighted(experts, st))
        }
        Strategy::GlobalExpert => {
            let path = cfg.models_dir().join("global_expert.json");
            let m: ExpertModel = load_json(&path)?;
            m.validate()?;
            Ok(Scorer::Single(m))
        }
    }
}

/// `(id, text)` pairs from a JSONL file; labels and domains are not needed
/// for scoring. A missing id falls back to the line number.
pub fn read_texts(path: &Path) -> Result<Vec<(String, String)>> {
    #[derive(Deserialize)]
    struct Line {
        id: Option<String>,
        text: Option<String>,
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: line_no,
            message: format!("{}: malformed JSON: {e}", path.display()),
        })?;
        let text = parsed.text.ok_or_else(|| Error::Corpus {
            line: line_no,
            message: format!("{}: missing required key `text`", path.display()),
        })?;
        out.push((parsed.id.unwrap_or_else(|| line_no.to_string()), text));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub id: String,
    pub score: f64,
    pub strategy: String,
}

pub fn score_texts(scorer: &Scorer, texts: &[(String, String)], strategy: &str) -> Vec<ScoreLine> {
    Execution::default().map(texts, |(id, text)| ScoreLine {
        id: id.clone(),
        score: scorer.score(text),
        strategy: strategy.to_string(),
    })
}

pub fn cmd_score(
    cfg: &RunConfig,
    strategy: &str,
    input: &Path,
    output: Option<&Path>,
    ensemble: Option<&Path>,
    k: Option<usize>,
) -> Result<PathBuf> {
    let scorer = load_scorer(cfg, strategy, ensemble, k)?;
    let texts = read_texts(input)?;
    let lines = score_texts(&scorer, &texts, strategy);
    let mut buf = Vec::new();
    for l in &lines {
        serde_json::to_writer(&mut buf, l)?;
        buf.push(b'\n');
    }
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| {
        cfg.out_dir
            .join("scores")
            .join(format!("{}.jsonl", sanitize(strategy)))
    });
    write_atomic(&path, &buf)?;
    Ok(path)
}

pub fn read_scores(path: &Path) -> Result<(String, Vec<ScoreLine>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line: ScoreLine = serde_json::from_str(l).map_err(|e| Error::Corpus {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        lines.push(line);
    }
    let name = lines
        .first()
        .map(|l| l.strategy.clone())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    Ok((name, lines))
}

/// Builds the evaluation report for a set of score files against labeled
/// records. Every score file must cover exactly the record ids.
pub fn evaluate_files(
    score_files: &[PathBuf],
    records_path: &Path,
    group_by: Option<GroupBy>,
    target_fpr: Option<f64>,
) -> Result<EvalReport> {
    let docs = read_corpus(records_path)?;
    let records: Vec<EvalRecord> = docs
        .iter()
        .map(|d| EvalRecord {
            score: 0.0,
            label: d.label,
            domain: d.domain.clone(),
            generator: d.generator.clone(),
        })
        .collect();
    let mut strategies = Vec::new();
    for path in score_files {
        let (name, lines) = read_scores(path)?;
        let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
        for l in &lines {
            if by_id.insert(l.id.as_str(), l.score).is_some() {
                return Err(Error::invalid(format!(
                    "{}: duplicate id {:?}",
                    path.display(),
                    l.id
                )));
            }
        }
        if by_id.len() != docs.len() {
            return Err(Error::invalid(format!(
                "{}: {} scores for {} records",
                path.display(),
                by_id.len(),
                docs.len()
            )));
        }
        let scores = docs
            .iter()
            .map(|d| {
                by_id.get(d.id.as_str()).copied().ok_or_else(|| {
                    Error::invalid(format!(
                        "{}: no score for record {:?}",
                        path.display(),
                        d.id
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        strategies.push((name, scores));
    }
    evaluate(&strategies, &records, group_by, target_fpr)
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("report.md"), report.to_markdown().as_bytes())?;
    write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    save_json_pretty(&dir.join("report.json"), report)
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    score_files: &[PathBuf],
    records: &Path,
    group_by: Option<GroupBy>,
) -> Result<EvalReport> {
    let report = evaluate_files(score_files, records, group_by, cfg.target_fpr)?;
    write_report(&report, &cfg.out_dir.join("report"))?;
    Ok(report)
}

pub fn cmd_analyze_router(
    cfg: &RunConfig,
    ensemble: Option<&Path>,
    records: &Path,
) -> Result<AnalysisReport> {
    let model = match ensemble {
        Some(p) => load_ensemble_file(p)?,
        None => assemble_dogen(cfg)?,
    };
    let docs = read_corpus(records)?;
    let report = router_auroc_correlation(&model, &docs, Execution::default())?;
    let dir = cfg.out_dir.join("analysis");
    write_atomic(
        &dir.join("router_analysis.md"),
        report.to_markdown().as_bytes(),
    )?;
    write_atomic(&dir.join("router_analysis.csv"), report.to_csv().as_bytes())?;
    save_json_pretty(&dir.join("router_analysis.json"), &report)?;
    Ok(report)
}

pub fn cmd_synth(spec: &SyntheticSpec, output: &Path) -> Result<CorpusManifest> {
    let docs = synthesize_corpus(spec)?;
    write_corpus(output, &docs)?;
    Ok(manifest(&docs))
}
