//! Softmax domain router over the shared feature space.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DomainId};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{featurize, FeatureVector, FeaturizerConfig};
use crate::schema::{RouterSchema, SchemaTag};
use crate::train::{fit, shrink_non_bias, Objective, TrainConfig, TrainMeta, LOG_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub schema: SchemaTag<RouterSchema>,
    /// Index order of the gate; sorted for trained routers.
    pub domains: Vec<DomainId>,
    pub featurizer: FeaturizerConfig,
    /// One row of `dims + 1` weights per domain, bias last.
    pub weight_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_meta: Option<TrainMeta>,
}

/// Probability vector over the router's domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDistribution(pub Vec<f64>);

impl DomainDistribution {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Lowest index among the maxima.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Numerically stable softmax: the max logit is subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl RouterModel {
    pub fn zeros(domains: Vec<DomainId>, featurizer: FeaturizerConfig) -> Self {
        let row = featurizer.weight_len();
        Self {
            schema: SchemaTag::new(),
            weight_matrix: vec![vec![0.0; row]; domains.len()],
            domains,
            featurizer,
            train_meta: None,
        }
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    /// A router may gate a single expert inside an ensemble; training one
    /// requires at least two domains.
    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        if self.domains.is_empty() {
            return Err(Error::invalid("router has no domains"));
        }
        let unique: BTreeSet<&str> = self.domains.iter().map(String::as_str).collect();
        if unique.len() != self.domains.len() {
            return Err(Error::invalid("router domains must be unique"));
        }
        if self.weight_matrix.len() != self.domains.len() {
            return Err(Error::DimensionMismatch {
                expected: self.domains.len(),
                actual: self.weight_matrix.len(),
            });
        }
        for row in &self.weight_matrix {
            if row.len() != self.featurizer.weight_len() {
                return Err(Error::DimensionMismatch {
                    expected: self.featurizer.weight_len(),
                    actual: row.len(),
                });
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::invalid("router has non-finite weights"));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, domain: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == domain)
    }

    pub fn logits(&self, fv: &FeatureVector) -> Vec<f64> {
        self.weight_matrix
            .iter()
            .map(|row| fv.dot_unchecked(row))
            .collect()
    }

    pub fn probs_features(&self, fv: &FeatureVector) -> DomainDistribution {
        DomainDistribution(softmax(&self.logits(fv)))
    }

    pub fn probs(&self, text: &str) -> DomainDistribution {
        self.probs_features(&featurize(text, &self.featurizer))
    }
}

pub fn router_probs(model: &RouterModel, text: &str) -> DomainDistribution {
    model.probs(text)
}

fn domain_targets(model: &RouterModel, docs: &[Document]) -> Result<Vec<usize>> {
    docs.iter()
        .map(|d| {
            model
                .index_of(&d.domain)
                .ok_or_else(|| Error::UnknownDomain(d.domain.clone()))
        })
        .collect()
}

/// Mean negative log-probability of each document's true domain.
pub fn gate_loss(model: &RouterModel, batch: &[Document]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("gate_loss on empty batch"));
    }
    let targets = domain_targets(model, batch)?;
    let feats: Vec<FeatureVector> = batch
        .iter()
        .map(|d| featurize(&d.text, &model.featurizer))
        .collect();
    Ok(gate_loss_features(&model.weight_matrix, &feats, &targets))
}

pub(crate) fn gate_loss_features(
    rows: &[Vec<f64>],
    feats: &[FeatureVector],
    targets: &[usize],
) -> f64 {
    let total: f64 = feats
        .iter()
        .zip(targets)
        .map(|(fv, &t)| {
            let logits: Vec<f64> = rows.iter().map(|r| fv.dot_unchecked(r)).collect();
            -softmax(&logits)[t].max(LOG_EPS).ln()
        })
        .sum();
    total / feats.len() as f64
}

/// Gradient of the mean gate loss plus `l2 * ||W||^2` (bias column excluded).
/// Row `i` receives `(1/M) sum_m (p_i(x_m) - [d_m = i]) phi~(x_m)`.
pub fn gate_loss_gradient_features(
    rows: &[Vec<f64>],
    feats: &[FeatureVector],
    targets: &[usize],
    l2: f64,
) -> Vec<Vec<f64>> {
    let mut grad: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut g: Vec<f64> = r.iter().map(|w| 2.0 * l2 * w).collect();
            *g.last_mut().unwrap() = 0.0;
            g
        })
        .collect();
    let inv = 1.0 / feats.len() as f64;
    for (fv, &t) in feats.iter().zip(targets) {
        let logits: Vec<f64> = rows.iter().map(|r| fv.dot_unchecked(r)).collect();
        for (i, p) in softmax(&logits).into_iter().enumerate() {
            let indicator = if i == t { 1.0 } else { 0.0 };
            fv.axpy_into((p - indicator) * inv, &mut grad[i]);
        }
    }
    grad
}

pub fn gate_loss_gradient(model: &RouterModel, batch: &[Document]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::invalid("gate_loss_gradient on empty batch"));
    }
    let targets = domain_targets(model, batch)?;
    let feats: Vec<FeatureVector> = batch
        .iter()
        .map(|d| featurize(&d.text, &model.featurizer))
        .collect();
    Ok(gate_loss_gradient_features(
        &model.weight_matrix,
        &feats,
        &targets,
        0.0,
    ))
}

struct RouterObjective<'a> {
    train_feats: &'a [FeatureVector],
    train_targets: &'a [usize],
    val_feats: &'a [FeatureVector],
    val_targets: &'a [usize],
    l2: f64,
}

impl Objective for RouterObjective<'_> {
    type Params = Vec<Vec<f64>>;

    fn step(&self, rows: &mut Vec<Vec<f64>>, batch: &[usize], lr: f64) {
        let inv = 1.0 / batch.len() as f64;
        let probs: Vec<Vec<f64>> = batch
            .iter()
            .map(|&m| {
                let fv = &self.train_feats[m];
                softmax(&rows.iter().map(|r| fv.dot_unchecked(r)).collect::<Vec<_>>())
            })
            .collect();
        for row in rows.iter_mut() {
            shrink_non_bias(row, 1.0 - 2.0 * lr * self.l2);
        }
        for (&m, p) in batch.iter().zip(probs) {
            let fv = &self.train_feats[m];
            for (i, (row, pi)) in rows.iter_mut().zip(p).enumerate() {
                let indicator = if i == self.train_targets[m] { 1.0 } else { 0.0 };
                fv.axpy_into(-lr * (pi - indicator) * inv, row);
            }
        }
    }

    fn val_loss(&self, rows: &Vec<Vec<f64>>) -> f64 {
        gate_loss_features(rows, self.val_feats, self.val_targets)
    }
}

fn featurize_sorted(
    docs: &[Document],
    model: &RouterModel,
    exec: Execution,
) -> Result<(Vec<FeatureVector>, Vec<usize>)> {
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let targets = sorted
        .iter()
        .map(|d| {
            model
                .index_of(&d.domain)
                .ok_or_else(|| Error::UnknownDomain(d.domain.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let feats = exec.map(&sorted, |d| featurize(&d.text, &model.featurizer));
    Ok((feats, targets))
}

/// Sorted distinct domains of a corpus.
pub fn sorted_domains(docs: &[Document]) -> Vec<DomainId> {
    docs.iter()
        .map(|d| d.domain.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn train_router(
    train: &[Document],
    val: &[Document],
    tc: &TrainConfig,
    fc: &FeaturizerConfig,
) -> Result<RouterModel> {
    fc.validate()?;
    let domains = sorted_domains(train);
    if domains.len() < 2 {
        return Err(Error::invalid("router training needs at least 2 domains"));
    }
    if val.is_empty() {
        return Err(Error::invalid(
            "router training needs a nonempty validation set",
        ));
    }
    let init = RouterModel::zeros(domains, fc.clone());
    let exec = Execution::default();
    let (train_feats, train_targets) = featurize_sorted(train, &init, exec)?;
    let (val_feats, val_targets) = featurize_sorted(val, &init, exec).map_err(|e| match e {
        Error::UnknownDomain(d) => Error::invalid(format!(
            "validation domain {d:?} is absent from training data"
        )),
        other => other,
    })?;
    let objective = RouterObjective {
        train_feats: &train_feats,
        train_targets: &train_targets,
        val_feats: &val_feats,
        val_targets: &val_targets,
        l2: tc.l2_penalty,
    };
    let (rows, meta) = fit(
        &objective,
        init.weight_matrix.clone(),
        train_feats.len(),
        tc,
    )?;
    Ok(RouterModel {
        weight_matrix: rows,
        train_meta: Some(meta),
        ..init
    })
}

/// Fraction of documents whose argmax domain is the true domain.
pub fn routing_accuracy(model: &RouterModel, docs: &[Document], exec: Execution) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::invalid("routing accuracy on empty set"));
    }
    let targets = domain_targets(model, docs)?;
    let hits = exec.map(docs, |d| model.probs(&d.text).argmax());
    let correct = hits.iter().zip(&targets).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / docs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClassLabel;

    fn doc(id: &str, text: &str, domain: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            label: ClassLabel::Human,
            domain: domain.into(),
            generator: None,
        }
    }

    fn small_fc() -> FeaturizerConfig {
        FeaturizerConfig {
            dims: 32,
            ..Default::default()
        }
    }

    #[test]
    fn zero_router_is_uniform() {
        let r = RouterModel::zeros(vec!["a".into(), "b".into(), "c".into()], small_fc());
        let p = r.probs("some words");
        for &x in p.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_and_shift() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let q = softmax(&[2f64.ln() + 123.4, 123.4]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        // huge logits stay finite
        let big = softmax(&[1000.0, 999.0]);
        assert!(big.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn uniform_gate_loss_is_ln_n() {
        let r = RouterModel::zeros(vec!["a".into(), "b".into(), "c".into()], small_fc());
        let batch = vec![doc("1", "x y", "a"), doc("2", "z", "c")];
        assert!((gate_loss(&r, &batch).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(
            gate_loss(&r, &[doc("3", "q", "zz")]),
            Err(Error::UnknownDomain(_))
        ));
    }

    #[test]
    fn half_mass_gives_ln2() {
        // N=3, logits (ln 2, 0, 0) on the empty text -> p = (1/2, 1/4, 1/4)
        let mut r = RouterModel::zeros(vec!["a".into(), "b".into(), "c".into()], small_fc());
        r.weight_matrix[0][32] = 2f64.ln();
        let loss = gate_loss(&r, &[doc("1", "", "a")]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_two_domain_by_hand() {
        let r = RouterModel::zeros(vec!["a".into(), "b".into()], small_fc());
        let d = doc("1", "hello world", "a");
        let g = gate_loss_gradient(&r, std::slice::from_ref(&d)).unwrap();
        let phi = featurize(&d.text, &r.featurizer).to_dense_with_bias();
        for j in 0..phi.len() {
            assert!((g[0][j] + 0.5 * phi[j]).abs() < 1e-15);
            assert!((g[1][j] - 0.5 * phi[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_router_has_small_gradient() {
        let mut r = RouterModel::zeros(vec!["a".into(), "b".into()], small_fc());
        r.weight_matrix[0][32] = 40.0;
        let g = gate_loss_gradient(&r, &[doc("1", "tok", "a")]).unwrap();
        let norm: f64 = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-15);
        assert!(gate_loss(&r, &[doc("1", "tok", "a")]).unwrap() < 1e-15);
    }

    #[test]
    fn train_router_errors() {
        let tc = TrainConfig::default();
        let single = vec![doc("1", "a", "x"), doc("2", "b", "x")];
        assert!(train_router(&single, &single, &tc, &small_fc()).is_err());
        let train = vec![doc("1", "a", "x"), doc("2", "b", "y")];
        let val = vec![doc("3", "c", "z")];
        let err = train_router(&train, &val, &tc, &small_fc()).unwrap_err();
        assert!(err.to_string().contains("absent"), "{err}");
    }
}
