mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dogen::cli::read_scores;
use dogen::corpus::{load_jsonl, ClassLabel};
use dogen::ensemble::EnsembleModel;
use dogen::io::load_json;
use dogen::metrics::{AnalysisReport, EvalReport, ALL_GROUP};

use common::{brute_force_auroc, exhaustive_tpr_scan};

fn dogen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dogen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dogen(args);
    assert!(
        out.status.success(),
        "dogen {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"{
  "schema": "dogen-config/1",
  "featurizer": { "dims": 16384 },
  "expert_training": { "eval_every_steps": 20 },
  "router_training": { "eval_every_steps": 20 },
  "joint_training": { "eval_every_steps": 20, "max_epochs": 1 },
  "target_fpr": 0.05
}"#;

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = root.join("out");
    let config = root.join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let corpus = root.join("corpus.jsonl");
    let base = ["--config", s(&config), "--out", s(&out), "--seed", "3"];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|a| a.to_string()).collect()
    };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&[
        "synth",
        "--domains",
        "3",
        "--docs-per-class",
        "60",
        "--output",
        s(&corpus),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&run(&["prepare", "--corpus", s(&corpus)])).unwrap();
    assert_eq!(manifest["total"], 360);
    run(&["train-experts"]);
    run(&["train-router"]);
    let weights = run(&["fit-stacker"]);
    assert!(weights.contains("| Expert | Ensemble weight |"));
    run(&["joint-train", "--init", "scratch"]);
    run(&["joint-train", "--init", "domain"]);

    for f in [
        "prepared/train.jsonl",
        "prepared/val.jsonl",
        "prepared/splits/dom0/train.jsonl",
        "models/experts/dom2.json",
        "models/experts/summary.json",
        "models/global_expert.json",
        "models/router.json",
        "models/stacker.json",
        "models/stacker_weights.csv",
        "models/jt_scratch.json",
        "models/jt_domain.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let test = root.join("test.jsonl");
    run(&[
        "synth",
        "--domains",
        "3",
        "--docs-per-class",
        "20",
        "--output",
        s(&test),
    ]);
    let strategies = [
        "dogen",
        "equal_vote",
        "weighted_vote",
        "jt_scratch",
        "jt_domain",
        "global_expert",
        "expert:dom1",
    ];
    let mut files = Vec::new();
    for st in strategies {
        let path = run(&["score", "--strategy", st, "--input", s(&test)]);
        files.push(PathBuf::from(path.trim()));
    }
    let (name, lines) = read_scores(&files[0]).unwrap();
    assert_eq!(name, "dogen");
    assert_eq!(lines.len(), 120);
    assert!(lines.iter().all(|l| (0.0..=1.0).contains(&l.score)));

    let mut args = vec!["evaluate", "--records", s(&test), "--scores"];
    args.extend(files.iter().map(|p| s(p)));
    let md = run(&args);
    assert!(md.contains("dogen") && md.contains("jt_domain"));
    let report: EvalReport = load_json(&out.join("report/report.json")).unwrap();
    assert_eq!(report.rows.len(), strategies.len());
    assert_eq!(report.groups, ["dom0", "dom1", "dom2"]);
    let dogen_all = report.rows[0]
        .cells
        .iter()
        .find(|c| c.group == ALL_GROUP)
        .unwrap();
    assert!(dogen_all.auroc.unwrap() > 0.95);

    let analysis = run(&["analyze-router", "--records", s(&test)]);
    assert!(analysis.contains("dom0"));
    let parsed: AnalysisReport = load_json(&out.join("analysis/router_analysis.json")).unwrap();
    assert_eq!(parsed.experts.len(), 3);

    // --k rescores the stored ensemble with a narrower gate
    let k1 = root.join("k1.jsonl");
    run(&[
        "score",
        "--strategy",
        "jt_domain",
        "--k",
        "1",
        "--input",
        s(&test),
        "--output",
        s(&k1),
    ]);
    let jt: EnsembleModel = load_json(&out.join("models/jt_domain.json")).unwrap();
    let jt1 = jt.with_k(1).unwrap();
    let (_, k1_lines) = read_scores(&k1).unwrap();
    let texts = load_jsonl(&test).unwrap();
    for (line, doc) in k1_lines.iter().zip(&texts) {
        assert_eq!(line.id, doc.id);
        assert_eq!(line.score.to_bits(), jt1.score(&doc.text).to_bits());
    }
}

#[test]
fn rerunning_with_a_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    ok(&[
        "synth",
        "--domains",
        "2",
        "--docs-per-class",
        "30",
        "--output",
        s(&corpus),
    ]);
    let config = dir.path().join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        for cmd in [
            &["prepare", "--corpus", s(&corpus)][..],
            &["train-experts"],
            &["train-router"],
        ] {
            let mut args = vec!["--config", s(&config), "--out", s(&out), "--seed", "11"];
            args.extend_from_slice(cmd);
            ok(&args);
        }
        snapshots.push(
            [
                "models/router.json",
                "models/experts/dom0.json",
                "prepared/train.jsonl",
            ]
            .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn unbalanced_prepare_copies_input_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    ok(&[
        "synth",
        "--domains",
        "2",
        "--docs-per-class",
        "10",
        "--output",
        s(&corpus),
    ]);
    let out = dir.path().join("out");
    ok(&[
        "--out",
        s(&out),
        "prepare",
        "--corpus",
        s(&corpus),
        "--balancing",
        "unbalanced",
    ]);
    assert_eq!(
        fs::read(&corpus).unwrap(),
        fs::read(out.join("prepared/corpus.jsonl")).unwrap()
    );
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"id\": \"a\", \"text\": \"x\", \"label\": \"robot\", \"domain\": \"d\"}\n",
    )
    .unwrap();
    let out = dogen(&["--out", s(dir.path()), "prepare", "--corpus", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
    assert!(stderr.contains("line 1"), "{stderr}");

    let missing = dogen(&["--out", s(dir.path()), "score", "--input", s(&bad)]);
    assert_eq!(missing.status.code(), Some(1));

    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"schema": "dogen-config/1", "unknown_key": 1}"#).unwrap();
    let unknown = dogen(&["--config", s(&config), "train-router"]);
    assert_eq!(unknown.status.code(), Some(1));

    fs::write(&config, r#"{"schema": "dogen-config/9"}"#).unwrap();
    assert_eq!(
        dogen(&["--config", s(&config), "train-router"])
            .status
            .code(),
        Some(1)
    );
}

fn oracle_cell(records: &[(f64, ClassLabel)]) -> (f64, f64) {
    let scores: Vec<f64> = records.iter().map(|r| r.0).collect();
    let labels: Vec<ClassLabel> = records.iter().map(|r| r.1).collect();
    (
        brute_force_auroc(&scores, &labels),
        exhaustive_tpr_scan(&scores, &labels, 0.05).tpr,
    )
}

#[test]
fn evaluate_matches_golden_reports_and_oracles() {
    let records = load_jsonl(data("eval_records.jsonl")).unwrap();
    for (group_by, golden) in [
        ("domain", "eval_report_domain.csv"),
        ("generator", "eval_report_generator.csv"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        ok(&[
            "--out",
            s(dir.path()),
            "evaluate",
            "--records",
            s(&data("eval_records.jsonl")),
            "--group-by",
            group_by,
            "--scores",
            s(&data("eval_scores_alpha.jsonl")),
            s(&data("eval_scores_beta.jsonl")),
        ]);
        let csv = fs::read_to_string(dir.path().join("report/report.csv")).unwrap();
        assert_eq!(
            csv,
            fs::read_to_string(data(golden)).unwrap(),
            "{group_by} report drifted"
        );

        let report: EvalReport = load_json(&dir.path().join("report/report.json")).unwrap();
        for (row, file) in report
            .rows
            .iter()
            .zip(["eval_scores_alpha.jsonl", "eval_scores_beta.jsonl"])
        {
            let (_, lines) = read_scores(&data(file)).unwrap();
            let score_of = |id: &str| lines.iter().find(|l| l.id == id).unwrap().score;
            for cell in &row.cells {
                let member: Vec<(f64, ClassLabel)> = records
                    .iter()
                    .filter(|d| {
                        cell.group == ALL_GROUP
                            || match group_by {
                                "domain" => d.domain == cell.group,
                                _ => {
                                    d.label == ClassLabel::Human
                                        || d.generator.as_deref() == Some(cell.group.as_str())
                                }
                            }
                    })
                    .map(|d| (score_of(&d.id), d.label))
                    .collect();
                let (auroc, tpr) = oracle_cell(&member);
                assert_eq!(cell.auroc, Some(auroc), "{} / {}", row.strategy, cell.group);
                assert_eq!(cell.tpr, Some(tpr), "{} / {}", row.strategy, cell.group);
            }
        }
    }
}
