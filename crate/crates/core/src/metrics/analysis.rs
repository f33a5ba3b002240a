use serde::{Deserialize, Serialize};

use super::{auroc_scores, pearson};
use crate::corpus::{ClassLabel, Document, DomainId};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::exec::Execution;

const CORRECTNESS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAnalysis {
    pub domain: DomainId,
    /// Standalone AUROC of this expert over the whole corpus.
    pub auroc: Option<f64>,
    /// Mean router probability of this expert's domain.
    pub mean_gate_weight: f64,
    /// Correlation between the gate weight and whether the expert's
    /// thresholded prediction is correct.
    pub gate_correctness_corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub experts: Vec<ExpertAnalysis>,
    /// Pearson correlation between the AUROC and mean gate weight columns.
    pub rho: Option<f64>,
}

pub fn router_auroc_correlation(
    ensemble: &EnsembleModel,
    docs: &[Document],
    exec: Execution,
) -> Result<AnalysisReport> {
    ensemble.validate()?;
    if docs.is_empty() {
        return Err(Error::invalid("router analysis needs documents"));
    }
    let labels: Vec<ClassLabel> = docs.iter().map(|d| d.label).collect();
    if !labels.contains(&ClassLabel::Machine) || !labels.contains(&ClassLabel::Human) {
        return Err(Error::Undefined("router analysis needs both classes"));
    }
    let per_doc = exec.map(docs, |d| {
        let (p, y) = ensemble.gate_and_scores(&d.text);
        (p.0, y)
    });
    let n = docs.len() as f64;
    let experts: Vec<ExpertAnalysis> = ensemble
        .experts
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let scores: Vec<f64> = per_doc.iter().map(|(_, y)| y[i]).collect();
            let gates: Vec<f64> = per_doc.iter().map(|(p, _)| p[i]).collect();
            let correct: Vec<f64> = scores
                .iter()
                .zip(&labels)
                .map(|(&s, &l)| {
                    let predicted = if s >= CORRECTNESS_THRESHOLD {
                        ClassLabel::Machine
                    } else {
                        ClassLabel::Human
                    };
                    if predicted == l {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            ExpertAnalysis {
                domain: e.domain.clone(),
                auroc: auroc_scores(&scores, &labels).ok(),
                mean_gate_weight: gates.iter().sum::<f64>() / n,
                gate_correctness_corr: pearson(&gates, &correct).ok(),
            }
        })
        .collect();
    let aurocs: Option<Vec<f64>> = experts.iter().map(|e| e.auroc).collect();
    let gates: Vec<f64> = experts.iter().map(|e| e.mean_gate_weight).collect();
    let rho = aurocs.and_then(|a| pearson(&a, &gates).ok());
    Ok(AnalysisReport { experts, rho })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

impl AnalysisReport {
    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| expert | auroc | mean_gate_weight | gate_correctness_corr |\n");
        out.push_str("|---|---:|---:|---:|\n");
        for e in &self.experts {
            out.push_str(&format!(
                "| {} | {} | {:.4} | {} |\n",
                e.domain,
                opt(e.auroc),
                e.mean_gate_weight,
                opt(e.gate_correctness_corr)
            ));
        }
        out.push_str(&format!(
            "\nPearson rho (auroc vs mean gate weight): {}\n",
            opt(self.rho)
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = String::from("expert,auroc,mean_gate_weight,gate_correctness_corr\n");
        for e in &self.experts {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.domain,
                f(e.auroc),
                e.mean_gate_weight,
                f(e.gate_correctness_corr)
            ));
        }
        out
    }
}
