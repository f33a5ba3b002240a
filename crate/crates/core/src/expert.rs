//! Single-domain binary detectors: logistic regression over hashed features.

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, Document, DomainId};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{featurize, FeatureVector, FeaturizerConfig};
use crate::metrics::auroc_scores;
use crate::schema::{ExpertSchema, SchemaTag};
use crate::train::{clamp_prob, fit, shrink_non_bias, sigmoid, Objective, TrainConfig, TrainMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrainMeta {
    #[serde(flatten)]
    pub run: TrainMeta,
    /// AUROC of the returned weights on the validation split.
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    pub schema: SchemaTag<ExpertSchema>,
    pub domain: DomainId,
    pub featurizer: FeaturizerConfig,
    /// Length `dims + 1`, bias last.
    pub weights: Vec<f64>,
    pub train_meta: Option<ExpertTrainMeta>,
}

impl ExpertModel {
    pub fn zeros(domain: impl Into<DomainId>, featurizer: FeaturizerConfig) -> Self {
        let n = featurizer.weight_len();
        Self {
            schema: SchemaTag::new(),
            domain: domain.into(),
            featurizer,
            weights: vec![0.0; n],
            train_meta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        if self.weights.len() != self.featurizer.weight_len() {
            return Err(Error::DimensionMismatch {
                expected: self.featurizer.weight_len(),
                actual: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!(
                "expert {:?} has non-finite weights",
                self.domain
            )));
        }
        Ok(())
    }

    pub fn margin(&self, fv: &FeatureVector) -> f64 {
        fv.dot_unchecked(&self.weights)
    }

    pub fn score_features(&self, fv: &FeatureVector) -> f64 {
        sigmoid(self.margin(fv))
    }

    pub fn score(&self, text: &str) -> f64 {
        self.score_features(&featurize(text, &self.featurizer))
    }
}

pub fn expert_score(model: &ExpertModel, text: &str) -> f64 {
    model.score(text)
}

/// Mean binary cross-entropy, machine as the positive class, with scores
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(scores: &[f64], labels: &[ClassLabel]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("bce_loss on empty input"));
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    Ok(bce_sum(
        scores
            .iter()
            .copied()
            .zip(labels.iter().map(|l| l.target())),
    ) / scores.len() as f64)
}

pub(crate) fn bce_term(score: f64, target: f64) -> f64 {
    let s = clamp_prob(score);
    -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
}

fn bce_sum(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.map(|(s, y)| bce_term(s, y)).sum()
}

fn l2_term(weights: &[f64], l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    l2 * weights[..weights.len() - 1]
        .iter()
        .map(|w| w * w)
        .sum::<f64>()
}

fn check_batch(weights: &[f64], batch: &[FeatureVector], labels: &[ClassLabel]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: labels.len(),
        });
    }
    for fv in batch {
        if fv.dims() + 1 != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                actual: fv.dims() + 1,
            });
        }
    }
    Ok(())
}

/// Batch objective: mean BCE plus `l2 * ||w||^2` over non-bias weights.
pub fn bce_objective(
    weights: &[f64],
    batch: &[FeatureVector],
    labels: &[ClassLabel],
    l2: f64,
) -> Result<f64> {
    check_batch(weights, batch, labels)?;
    let scores: Vec<f64> = batch
        .iter()
        .map(|fv| sigmoid(fv.dot_unchecked(weights)))
        .collect();
    Ok(bce_loss(&scores, labels)? + l2_term(weights, l2))
}

/// Analytic gradient of [`bce_objective`]:
/// `(1/B) sum (s - y) phi~ + 2 l2 w` with the bias excluded from the penalty.
pub fn bce_gradient(
    weights: &[f64],
    batch: &[FeatureVector],
    labels: &[ClassLabel],
    l2: f64,
) -> Result<Vec<f64>> {
    check_batch(weights, batch, labels)?;
    let n = weights.len();
    let mut grad: Vec<f64> = weights.iter().map(|w| 2.0 * l2 * w).collect();
    grad[n - 1] = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (fv, label) in batch.iter().zip(labels) {
        let s = sigmoid(fv.dot_unchecked(weights));
        fv.axpy_into((s - label.target()) * inv, &mut grad);
    }
    Ok(grad)
}

/// A labeled set featurized once, canonical id order.
pub(crate) struct LabeledFeatures {
    pub feats: Vec<FeatureVector>,
    pub targets: Vec<f64>,
    pub labels: Vec<ClassLabel>,
}

impl LabeledFeatures {
    pub fn build(docs: &[Document], fc: &FeaturizerConfig, exec: Execution) -> Self {
        let mut sorted: Vec<&Document> = docs.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let feats = exec.map(&sorted, |d| featurize(&d.text, fc));
        let labels: Vec<ClassLabel> = sorted.iter().map(|d| d.label).collect();
        Self {
            feats,
            targets: labels.iter().map(|l| l.target()).collect(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }
}

struct ExpertObjective<'a> {
    train: &'a LabeledFeatures,
    val: &'a LabeledFeatures,
    l2: f64,
}

impl Objective for ExpertObjective<'_> {
    type Params = Vec<f64>;

    fn step(&self, w: &mut Vec<f64>, batch: &[usize], lr: f64) {
        let inv = 1.0 / batch.len() as f64;
        let coefs: Vec<f64> = batch
            .iter()
            .map(|&i| (sigmoid(self.train.feats[i].dot_unchecked(w)) - self.train.targets[i]) * inv)
            .collect();
        shrink_non_bias(w, 1.0 - 2.0 * lr * self.l2);
        for (&i, c) in batch.iter().zip(coefs) {
            self.train.feats[i].axpy_into(-lr * c, w);
        }
    }

    fn val_loss(&self, w: &Vec<f64>) -> f64 {
        bce_sum(
            self.val
                .feats
                .iter()
                .zip(&self.val.targets)
                .map(|(fv, &y)| (sigmoid(fv.dot_unchecked(w)), y)),
        ) / self.val.len() as f64
    }
}

fn require_both_classes(labels: &[ClassLabel], what: &str, domain: &str) -> Result<()> {
    let machine = labels.iter().filter(|&&l| l == ClassLabel::Machine).count();
    if machine == 0 || machine == labels.len() {
        return Err(Error::invalid(format!(
            "{what} split for {domain:?} must contain both classes"
        )));
    }
    Ok(())
}

/// Trains one expert by mini-batch gradient descent on BCE + L2, returning
/// the checkpoint with the lowest validation loss.
pub fn train_expert(
    train: &[Document],
    val: &[Document],
    domain: &str,
    tc: &TrainConfig,
    fc: &FeaturizerConfig,
) -> Result<ExpertModel> {
    fc.validate()?;
    tc.validate()?;
    if let Some(d) = train.iter().chain(val).find(|d| d.domain != domain) {
        return Err(Error::invalid(format!(
            "document {:?} belongs to {:?}, not {domain:?}",
            d.id, d.domain
        )));
    }
    train_pooled_expert(train, val, domain, tc, fc)
}

/// Like [`train_expert`] without the single-domain check; used for the
/// pooled global expert.
pub fn train_pooled_expert(
    train: &[Document],
    val: &[Document],
    name: &str,
    tc: &TrainConfig,
    fc: &FeaturizerConfig,
) -> Result<ExpertModel> {
    fc.validate()?;
    let exec = Execution::default();
    let train_set = LabeledFeatures::build(train, fc, exec);
    let val_set = LabeledFeatures::build(val, fc, exec);
    require_both_classes(&train_set.labels, "train", name)?;
    require_both_classes(&val_set.labels, "validation", name)?;

    let objective = ExpertObjective {
        train: &train_set,
        val: &val_set,
        l2: tc.l2_penalty,
    };
    let (weights, run) = fit(&objective, vec![0.0; fc.weight_len()], train_set.len(), tc)?;
    let val_scores: Vec<f64> = val_set
        .feats
        .iter()
        .map(|fv| sigmoid(fv.dot_unchecked(&weights)))
        .collect();
    let val_auroc = auroc_scores(&val_scores, &val_set.labels).ok();
    Ok(ExpertModel {
        schema: SchemaTag::new(),
        domain: name.to_string(),
        featurizer: fc.clone(),
        weights,
        train_meta: Some(ExpertTrainMeta { run, val_auroc }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(dims: usize, entries: &[(usize, f64)]) -> FeatureVector {
        FeatureVector::from_entries(dims, entries).unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[ClassLabel::Human]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(&[0.5], &[ClassLabel::Machine]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&[1.0 - 1e-12], &[ClassLabel::Machine]).unwrap() < 1e-11);
        let v = bce_loss(&[0.8, 0.4], &[ClassLabel::Machine, ClassLabel::Human]).unwrap();
        assert!((v - (-0.5 * (0.8f64.ln() + 0.6f64.ln()))).abs() < 1e-15);
        assert!(bce_loss(&[], &[]).is_err());
        // clamped, not infinite
        assert!(bce_loss(&[0.0], &[ClassLabel::Machine])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn score_examples() {
        let fc = FeaturizerConfig {
            dims: 16,
            ..Default::default()
        };
        let mut m = ExpertModel::zeros("d", fc);
        assert_eq!(m.score("anything at all"), 0.5);
        m.weights[16] = 3f64.ln();
        assert!((m.score("other text") - 0.75).abs() < 1e-15);
        assert_eq!(m.score("same"), m.score("same"));
    }

    #[test]
    fn gradient_single_example_by_hand() {
        // zero weights -> score 0.5; machine target -> (0.5 - 1) phi~
        let x = fv(4, &[(1, 0.6), (3, 0.8)]);
        let mut w = vec![0.0; 5];
        w[0] = 0.7; // feature 0 absent from x, only the L2 term touches it
        let l2 = 0.01;
        let g = bce_gradient(&w, &[x], &[ClassLabel::Machine], l2).unwrap();
        let expected = [2.0 * l2 * 0.7, -0.5 * 0.6, 0.0, -0.5 * 0.8, -0.5];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{g:?}");
        }
    }

    #[test]
    fn step_matches_dense_gradient() {
        let batch = vec![fv(8, &[(0, 0.5), (5, 1.0)]), fv(8, &[(2, 0.3), (5, 0.2)])];
        let labels = vec![ClassLabel::Machine, ClassLabel::Human];
        let w: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let lr = 0.2;
        let l2 = 0.05;
        let train = LabeledFeatures {
            targets: labels.iter().map(|l| l.target()).collect(),
            feats: batch.clone(),
            labels: labels.clone(),
        };
        let obj = ExpertObjective {
            train: &train,
            val: &train,
            l2,
        };
        let mut stepped = w.clone();
        obj.step(&mut stepped, &[0, 1], lr);
        let g = bce_gradient(&w, &batch, &labels, l2).unwrap();
        for i in 0..9 {
            assert!((stepped[i] - (w[i] - lr * g[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn descent_step_reduces_loss() {
        let batch = vec![
            fv(8, &[(1, 1.0)]),
            fv(8, &[(2, 0.6), (3, 0.8)]),
            fv(8, &[(1, 0.5), (2, 0.5)]),
        ];
        let labels = vec![ClassLabel::Machine, ClassLabel::Human, ClassLabel::Machine];
        let w = vec![0.2, -0.1, 0.3, 0.0, 0.5, 0.0, 0.0, 0.1, -0.2];
        let before = bce_objective(&w, &batch, &labels, 0.0).unwrap();
        let g = bce_gradient(&w, &batch, &labels, 0.0).unwrap();
        let next: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - 1e-3 * b).collect();
        assert!(bce_objective(&next, &batch, &labels, 0.0).unwrap() < before);
    }

    #[test]
    fn training_rejects_bad_splits() {
        let doc = |id: &str, label, domain: &str| Document {
            id: id.into(),
            text: "a b".into(),
            label,
            domain: domain.into(),
            generator: None,
        };
        let fc = FeaturizerConfig {
            dims: 64,
            ..Default::default()
        };
        let tc = TrainConfig::default();
        let train = vec![
            doc("1", ClassLabel::Human, "x"),
            doc("2", ClassLabel::Human, "x"),
        ];
        let val = vec![
            doc("3", ClassLabel::Human, "x"),
            doc("4", ClassLabel::Machine, "x"),
        ];
        assert!(train_expert(&train, &val, "x", &tc, &fc).is_err());
        let train = vec![
            doc("1", ClassLabel::Human, "x"),
            doc("2", ClassLabel::Machine, "y"),
        ];
        assert!(train_expert(&train, &val, "x", &tc, &fc).is_err());
    }
}
