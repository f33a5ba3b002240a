//! End-to-end training of every expert and the router on the BCE of the
//! fully gated score `s(x) = sum_i p_i(x) * sigmoid(w_i . phi(x))`.

use crate::corpus::{ClassLabel, Document};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::expert::{bce_term, ExpertModel, LabeledFeatures};
use crate::features::{FeatureVector, FeaturizerConfig};
use crate::router::{softmax, sorted_domains, RouterModel};
use crate::train::{clamp_prob, fit, shrink_non_bias, sigmoid, Objective, TrainConfig};

use super::{EnsembleModel, DEFAULT_K};

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum JointInit {
    /// All expert and router weights start at zero.
    Scratch,
    FromCheckpoints(EnsembleModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointGradient {
    pub experts: Vec<Vec<f64>>,
    pub router: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct JointParams {
    experts: Vec<Vec<f64>>,
    router: Vec<Vec<f64>>,
}

struct Forward {
    probs: Vec<f64>,
    scores: Vec<f64>,
    s: f64,
}

fn forward(params: &JointParams, fv: &FeatureVector) -> Forward {
    let logits: Vec<f64> = params.router.iter().map(|r| fv.dot_unchecked(r)).collect();
    let probs = softmax(&logits);
    let scores: Vec<f64> = params
        .experts
        .iter()
        .map(|w| sigmoid(fv.dot_unchecked(w)))
        .collect();
    let s = probs.iter().zip(&scores).map(|(p, y)| p * y).sum();
    Forward { probs, scores, s }
}

/// Per-example coefficients `(expert_i, router_i)` such that the example's
/// loss gradient is `coef * phi~` for each parameter row.
fn example_coefficients(f: &Forward, target: f64) -> (Vec<f64>, Vec<f64>) {
    let sc = clamp_prob(f.s);
    let dl_ds = (sc - target) / (sc * (1.0 - sc));
    let expert = f
        .probs
        .iter()
        .zip(&f.scores)
        .map(|(p, y)| dl_ds * p * y * (1.0 - y))
        .collect();
    let router = f
        .probs
        .iter()
        .zip(&f.scores)
        .map(|(p, y)| dl_ds * p * (y - f.s))
        .collect();
    (expert, router)
}

fn l2_sum(rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .map(|r| r[..r.len() - 1].iter().map(|w| w * w).sum::<f64>())
        .sum()
}

fn shared_featurizer(model: &EnsembleModel) -> Result<&FeaturizerConfig> {
    let fc = &model.router.featurizer;
    if model.experts.iter().any(|e| &e.featurizer != fc) {
        return Err(Error::invalid(
            "joint training needs one featurizer shared by the router and every expert",
        ));
    }
    Ok(fc)
}

fn params_of(model: &EnsembleModel) -> JointParams {
    JointParams {
        experts: model.experts.iter().map(|e| e.weights.clone()).collect(),
        router: model.router.weight_matrix.clone(),
    }
}

fn batch_features(model: &EnsembleModel, batch: &[Document]) -> Result<Vec<FeatureVector>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let fc = shared_featurizer(model)?;
    Ok(batch
        .iter()
        .map(|d| crate::features::featurize(&d.text, fc))
        .collect())
}

/// Mean BCE of the fully gated score plus `l2` times the squared norm of all
/// non-bias expert and router weights.
pub fn joint_objective(model: &EnsembleModel, batch: &[Document], l2: f64) -> Result<f64> {
    let feats = batch_features(model, batch)?;
    let params = params_of(model);
    let bce: f64 = feats
        .iter()
        .zip(batch)
        .map(|(fv, d)| bce_term(forward(&params, fv).s, d.label.target()))
        .sum::<f64>()
        / batch.len() as f64;
    Ok(bce + l2 * (l2_sum(&params.experts) + l2_sum(&params.router)))
}

/// Analytic gradient of [`joint_objective`]. With `g = dL/ds`, expert row `i`
/// receives `g * p_i * y_i (1 - y_i) * phi~` and router row `i` receives
/// `g * p_i (y_i - s) * phi~`.
pub fn joint_gradient(model: &EnsembleModel, batch: &[Document], l2: f64) -> Result<JointGradient> {
    let feats = batch_features(model, batch)?;
    let params = params_of(model);
    let penalty = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut g: Vec<f64> = r.iter().map(|w| 2.0 * l2 * w).collect();
                *g.last_mut().unwrap() = 0.0;
                g
            })
            .collect()
    };
    let mut grad = JointGradient {
        experts: penalty(&params.experts),
        router: penalty(&params.router),
    };
    let inv = 1.0 / batch.len() as f64;
    for (fv, d) in feats.iter().zip(batch) {
        let (ce, cr) = example_coefficients(&forward(&params, fv), d.label.target());
        for i in 0..ce.len() {
            fv.axpy_into(ce[i] * inv, &mut grad.experts[i]);
            fv.axpy_into(cr[i] * inv, &mut grad.router[i]);
        }
    }
    Ok(grad)
}

struct JointObjective<'a> {
    train: &'a LabeledFeatures,
    val: &'a LabeledFeatures,
    l2: f64,
}

impl Objective for JointObjective<'_> {
    type Params = JointParams;

    fn step(&self, params: &mut JointParams, batch: &[usize], lr: f64) {
        let inv = 1.0 / batch.len() as f64;
        let coefs: Vec<(Vec<f64>, Vec<f64>)> = batch
            .iter()
            .map(|&m| {
                example_coefficients(
                    &forward(params, &self.train.feats[m]),
                    self.train.targets[m],
                )
            })
            .collect();
        let shrink = 1.0 - 2.0 * lr * self.l2;
        for row in params.experts.iter_mut().chain(params.router.iter_mut()) {
            shrink_non_bias(row, shrink);
        }
        for (&m, (ce, cr)) in batch.iter().zip(coefs) {
            let fv = &self.train.feats[m];
            for i in 0..ce.len() {
                fv.axpy_into(-lr * ce[i] * inv, &mut params.experts[i]);
                fv.axpy_into(-lr * cr[i] * inv, &mut params.router[i]);
            }
        }
    }

    fn val_loss(&self, params: &JointParams) -> f64 {
        self.val
            .feats
            .iter()
            .zip(&self.val.targets)
            .map(|(fv, &y)| bce_term(forward(params, fv).s, y))
            .sum::<f64>()
            / self.val.len() as f64
    }
}

fn require_both(labels: &[ClassLabel], what: &str) -> Result<()> {
    let machine = labels.iter().filter(|&&l| l == ClassLabel::Machine).count();
    if machine == 0 || machine == labels.len() {
        return Err(Error::invalid(format!(
            "joint training {what} split must contain both classes"
        )));
    }
    Ok(())
}

/// Trains all experts and the router together at `k = N`, keeping the
/// checkpoint with the lowest validation BCE. The returned ensemble scores
/// with `k = 2` (or `N` when fewer than two experts exist).
pub fn joint_train(
    init: JointInit,
    train: &[Document],
    val: &[Document],
    tc: &TrainConfig,
    fc: &FeaturizerConfig,
) -> Result<EnsembleModel> {
    let template = match init {
        JointInit::Scratch => {
            fc.validate()?;
            let domains = sorted_domains(train);
            if domains.is_empty() {
                return Err(Error::invalid(
                    "joint training needs a nonempty training set",
                ));
            }
            let experts = domains
                .iter()
                .map(|d| ExpertModel::zeros(d.clone(), fc.clone()))
                .collect();
            EnsembleModel::new(RouterModel::zeros(domains, fc.clone()), experts, 1)?
        }
        JointInit::FromCheckpoints(model) => {
            model.validate()?;
            model
        }
    };
    let fc = shared_featurizer(&template)?.clone();
    for d in train.iter().chain(val) {
        if template.router.index_of(&d.domain).is_none() {
            return Err(Error::UnknownDomain(d.domain.clone()));
        }
    }

    let exec = Execution::default();
    let train_set = LabeledFeatures::build(train, &fc, exec);
    let val_set = LabeledFeatures::build(val, &fc, exec);
    require_both(&train_set.labels, "train")?;
    require_both(&val_set.labels, "validation")?;

    let objective = JointObjective {
        train: &train_set,
        val: &val_set,
        l2: tc.l2_penalty,
    };
    let (params, meta) = fit(&objective, params_of(&template), train_set.len(), tc)?;

    let mut model = template;
    for (e, w) in model.experts.iter_mut().zip(params.experts) {
        e.weights = w;
        e.train_meta = None;
    }
    model.router.weight_matrix = params.router;
    model.router.train_meta = None;
    model.k = DEFAULT_K.min(model.n_experts());
    model.train_meta = Some(meta);
    Ok(model)
}

/// Validation BCE of the fully gated (`k = N`) score.
pub fn full_gate_bce(model: &EnsembleModel, docs: &[Document]) -> Result<f64> {
    let full = model.with_k(model.n_experts())?;
    let scores: Vec<f64> = docs.iter().map(|d| full.score(&d.text)).collect();
    let labels: Vec<ClassLabel> = docs.iter().map(|d| d.label).collect();
    crate::expert::bce_loss(&scores, &labels)
}
