use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{auroc_scores, tpr_at_fpr_scores, EvalRecord};
use crate::corpus::ClassLabel;
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const ALL_GROUP: &str = "all";
const UNKNOWN_GENERATOR: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Domain,
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub group: String,
    pub n_human: usize,
    pub n_machine: usize,
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    /// One cell per group in report order, then the pooled `all` cell.
    pub cells: Vec<Cell>,
}

type CellMetric = fn(&Cell) -> Option<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group_by: Option<GroupBy>,
    /// Lexicographic; `all` is not listed here.
    pub groups: Vec<String>,
    pub target_fpr: Option<f64>,
    pub rows: Vec<StrategyRow>,
}

/// Record indices per group. With generator grouping, a machine record goes
/// to its generator's group and every untagged human record joins all groups
/// as the shared negative class.
fn group_members(records: &[EvalRecord], group_by: GroupBy) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match group_by {
        GroupBy::Domain => {
            for (i, r) in records.iter().enumerate() {
                groups.entry(r.domain.clone()).or_default().push(i);
            }
        }
        GroupBy::Generator => {
            let mut shared_humans = Vec::new();
            for (i, r) in records.iter().enumerate() {
                match (&r.generator, r.label) {
                    (Some(g), _) => groups.entry(g.clone()).or_default().push(i),
                    (None, ClassLabel::Human) => shared_humans.push(i),
                    (None, ClassLabel::Machine) => {
                        groups.entry(UNKNOWN_GENERATOR.into()).or_default().push(i)
                    }
                }
            }
            for members in groups.values_mut() {
                members.extend(&shared_humans);
                members.sort_unstable();
            }
        }
    }
    groups
}

fn cell(
    group: &str,
    idx: &[usize],
    scores: &[f64],
    records: &[EvalRecord],
    target_fpr: Option<f64>,
) -> Cell {
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let l: Vec<ClassLabel> = idx.iter().map(|&i| records[i].label).collect();
    let n_machine = l.iter().filter(|&&x| x == ClassLabel::Machine).count();
    Cell {
        group: group.to_string(),
        n_human: l.len() - n_machine,
        n_machine,
        auroc: auroc_scores(&s, &l).ok(),
        tpr: target_fpr.and_then(|t| tpr_at_fpr_scores(&s, &l, t).ok().map(|r| r.tpr)),
    }
}

/// Per-group and pooled AUROC (and optionally TPR at a target FPR) for each
/// strategy. The `all` cell pools records; it is not a mean of group cells.
pub fn evaluate(
    strategies: &[(String, Vec<f64>)],
    records: &[EvalRecord],
    group_by: Option<GroupBy>,
    target_fpr: Option<f64>,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::invalid("evaluate needs at least one record"));
    }
    for (name, scores) in strategies {
        if scores.len() != records.len() {
            return Err(Error::invalid(format!(
                "strategy {name:?} has {} scores for {} records",
                scores.len(),
                records.len()
            )));
        }
    }
    let groups = group_by
        .map(|g| group_members(records, g))
        .unwrap_or_default();
    let all: Vec<usize> = (0..records.len()).collect();
    let rows = Execution::default().map(strategies, |(name, scores)| {
        let mut cells: Vec<Cell> = groups
            .iter()
            .map(|(g, idx)| cell(g, idx, scores, records, target_fpr))
            .collect();
        cells.push(cell(ALL_GROUP, &all, scores, records, target_fpr));
        StrategyRow {
            strategy: name.clone(),
            cells,
        }
    });
    Ok(EvalReport {
        group_by,
        groups: groups.into_keys().collect(),
        target_fpr,
        rows,
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    fn columns(&self) -> Vec<String> {
        let mut cols = self.groups.clone();
        cols.push(ALL_GROUP.to_string());
        cols
    }

    fn metrics(&self) -> Vec<(&'static str, CellMetric)> {
        let mut m: Vec<(&'static str, CellMetric)> = vec![("auroc", |c| c.auroc)];
        if self.target_fpr.is_some() {
            m.push(("tpr_at_fpr", |c| c.tpr));
        }
        m
    }

    fn metric_title(&self, name: &str) -> String {
        match name {
            "auroc" => "AUROC".into(),
            _ => format!("TPR@FPR={}%", self.target_fpr.unwrap_or(0.0) * 100.0),
        }
    }

    /// Aligned Markdown tables, one per metric, best value per column in bold.
    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        for (mi, (name, get)) in self.metrics().into_iter().enumerate() {
            if mi > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "### {}\n", self.metric_title(name));
            let best: Vec<Option<f64>> = (0..cols.len())
                .map(|c| {
                    self.rows
                        .iter()
                        .filter_map(|r| get(&r.cells[c]))
                        .fold(None, |acc: Option<f64>, v| {
                            Some(acc.map_or(v, |a| a.max(v)))
                        })
                })
                .collect();
            let mut table: Vec<Vec<String>> = vec![std::iter::once("strategy".to_string())
                .chain(cols.iter().cloned())
                .collect()];
            for row in &self.rows {
                let mut line = vec![row.strategy.clone()];
                for (c, cell) in row.cells.iter().enumerate() {
                    let v = get(cell);
                    let text = fmt_value(v);
                    line.push(if v.is_some() && v == best[c] && self.rows.len() > 1 {
                        format!("**{text}**")
                    } else {
                        text
                    });
                }
                table.push(line);
            }
            let widths: Vec<usize> = (0..table[0].len())
                .map(|c| {
                    table
                        .iter()
                        .map(|r| r[c].chars().count())
                        .max()
                        .unwrap_or(0)
                        .max(3)
                })
                .collect();
            let render = |r: &[String]| {
                let padded: Vec<String> = r
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (s, &w))| {
                        if c == 0 {
                            format!("{s:<w$}")
                        } else {
                            format!("{s:>w$}")
                        }
                    })
                    .collect();
                format!("| {} |\n", padded.join(" | "))
            };
            out.push_str(&render(&table[0]));
            let rule: Vec<String> = widths
                .iter()
                .enumerate()
                .map(|(c, &w)| {
                    if c == 0 {
                        "-".repeat(w)
                    } else {
                        format!("{}:", "-".repeat(w - 1))
                    }
                })
                .collect();
            out.push_str(&format!("| {} |\n", rule.join(" | ")));
            for r in &table[1..] {
                out.push_str(&render(r));
            }
        }
        out
    }

    /// Wide CSV: `metric,strategy,<groups...>,all`; absent cells are empty.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = format!("metric,strategy,{}\n", cols.join(","));
        for (name, get) in self.metrics() {
            for row in &self.rows {
                let vals: Vec<String> = row
                    .cells
                    .iter()
                    .map(|c| get(c).map_or_else(String::new, |v| v.to_string()))
                    .collect();
                let _ = writeln!(out, "{name},{},{}", row.strategy, vals.join(","));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClassLabel::{Human as H, Machine as M};

    fn rec(label: ClassLabel, domain: &str, generator: Option<&str>) -> EvalRecord {
        EvalRecord {
            score: 0.0,
            label,
            domain: domain.into(),
            generator: generator.map(str::to_string),
        }
    }

    #[test]
    fn single_domain_group_equals_overall() {
        let records = vec![
            rec(H, "a", None),
            rec(M, "a", None),
            rec(H, "a", None),
            rec(M, "a", None),
        ];
        let r = evaluate(
            &[("s".into(), vec![0.1, 0.7, 0.8, 0.9])],
            &records,
            Some(GroupBy::Domain),
            None,
        )
        .unwrap();
        assert_eq!(r.groups, vec!["a"]);
        assert_eq!(r.rows[0].cells[0].auroc, r.rows[0].cells[1].auroc);
        assert_eq!(r.rows[0].cells[1].group, "all");
    }

    #[test]
    fn no_grouping_gives_one_column() {
        let records = vec![rec(H, "a", None), rec(M, "b", None)];
        let r = evaluate(&[("s".into(), vec![0.1, 0.7])], &records, None, Some(0.05)).unwrap();
        assert!(r.groups.is_empty());
        assert_eq!(r.rows[0].cells.len(), 1);
        assert_eq!(r.rows[0].cells[0].auroc, Some(1.0));
        assert_eq!(r.rows[0].cells[0].tpr, Some(1.0));
    }

    #[test]
    fn single_class_cell_is_absent() {
        let records = vec![rec(H, "a", None), rec(M, "b", None), rec(H, "b", None)];
        let r = evaluate(
            &[("s".into(), vec![0.1, 0.7, 0.2])],
            &records,
            Some(GroupBy::Domain),
            None,
        )
        .unwrap();
        assert_eq!(r.rows[0].cells[0].auroc, None);
        assert!(r.to_markdown().contains("n/a"));
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("auroc,s,,"));
    }

    #[test]
    fn generator_groups_share_humans() {
        let records = vec![
            rec(H, "a", None),
            rec(M, "a", Some("g1")),
            rec(M, "a", Some("g2")),
            rec(M, "a", None),
        ];
        let r = evaluate(
            &[("s".into(), vec![0.5, 0.9, 0.1, 0.6])],
            &records,
            Some(GroupBy::Generator),
            None,
        )
        .unwrap();
        assert_eq!(r.groups, vec!["g1", "g2", "unknown"]);
        let aurocs: Vec<Option<f64>> = r.rows[0].cells.iter().map(|c| c.auroc).collect();
        assert_eq!(aurocs[..3], [Some(1.0), Some(0.0), Some(1.0)]);
        assert_eq!(r.rows[0].cells[0].n_human, 1);
    }

    #[test]
    fn markdown_bolds_best() {
        let records = vec![rec(H, "a", None), rec(M, "a", None)];
        let r = evaluate(
            &[
                ("good".into(), vec![0.1, 0.9]),
                ("bad".into(), vec![0.9, 0.1]),
            ],
            &records,
            None,
            None,
        )
        .unwrap();
        let md = r.to_markdown();
        assert!(md.contains("**1.0000**"));
        assert!(!md.contains("**0.0000**"));
        // all rows same width
        let widths: Vec<usize> = md
            .lines()
            .filter(|l| l.starts_with('|'))
            .map(|l| l.chars().count())
            .collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let records = vec![rec(H, "a", None)];
        assert!(evaluate(&[("s".into(), vec![])], &records, None, None).is_err());
        assert!(evaluate(&[], &[], None, None).is_err());
    }
}
