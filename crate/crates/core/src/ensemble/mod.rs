//! Combining expert scores: top-k domain gating, equal vote, the static
//! logistic-regression stacker, and end-to-end joint training.

mod joint;
mod stacker;

pub use joint::{
    full_gate_bce, joint_gradient, joint_objective, joint_train, JointGradient, JointInit,
};
pub use stacker::{
    fit_stacker, fit_stacker_from, normalized_weights, stacker_score, ClassWeighting, StackerFit,
    StackerModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::ExpertModel;
use crate::features::{featurize, FeatureVector, FeaturizerConfig};
use crate::router::{DomainDistribution, RouterModel};
use crate::schema::{EnsembleSchema, SchemaTag};
use crate::train::TrainMeta;

pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub schema: SchemaTag<EnsembleSchema>,
    pub k: usize,
    pub router: RouterModel,
    pub experts: Vec<ExpertModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_meta: Option<TrainMeta>,
}

impl EnsembleModel {
    /// Assembles an ensemble, reordering experts to the router's domain order.
    pub fn new(router: RouterModel, mut experts: Vec<ExpertModel>, k: usize) -> Result<Self> {
        let mut ordered = Vec::with_capacity(experts.len());
        for domain in &router.domains {
            let pos = experts
                .iter()
                .position(|e| &e.domain == domain)
                .ok_or_else(|| Error::invalid(format!("no expert for router domain {domain:?}")))?;
            ordered.push(experts.swap_remove(pos));
        }
        if let Some(extra) = experts.first() {
            return Err(Error::invalid(format!(
                "expert {:?} has no matching router domain",
                extra.domain
            )));
        }
        let model = Self {
            schema: SchemaTag::new(),
            k,
            router,
            experts: ordered,
            train_meta: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.router.validate()?;
        if self.experts.len() != self.router.n_domains() {
            return Err(Error::invalid(format!(
                "ensemble has {} experts but the router gates {} domains",
                self.experts.len(),
                self.router.n_domains()
            )));
        }
        for (e, d) in self.experts.iter().zip(&self.router.domains) {
            e.validate()?;
            if &e.domain != d {
                return Err(Error::invalid(format!(
                    "expert {:?} sits where the router expects {d:?}",
                    e.domain
                )));
            }
        }
        check_k(self.k, self.experts.len())
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        check_k(k, self.n_experts())?;
        Ok(Self { k, ..self.clone() })
    }

    /// Featurizes `text` once per distinct configuration among the components.
    pub fn featurize(&self, text: &str) -> FeatureCache {
        let mut cache = FeatureCache::default();
        cache.get(&self.router.featurizer, text);
        for e in &self.experts {
            cache.get(&e.featurizer, text);
        }
        cache
    }

    pub fn expert_scores_cached(&self, cache: &FeatureCache) -> Vec<f64> {
        self.experts
            .iter()
            .map(|e| e.score_features(cache.lookup(&e.featurizer)))
            .collect()
    }

    pub fn router_probs_cached(&self, cache: &FeatureCache) -> DomainDistribution {
        self.router
            .probs_features(cache.lookup(&self.router.featurizer))
    }

    /// Router distribution and raw expert scores for one text.
    pub fn gate_and_scores(&self, text: &str) -> (DomainDistribution, Vec<f64>) {
        let cache = self.featurize(text);
        (
            self.router_probs_cached(&cache),
            self.expert_scores_cached(&cache),
        )
    }

    pub fn score(&self, text: &str) -> f64 {
        let (p, y) = self.gate_and_scores(text);
        dogen_score(&p, &y, self.k).expect("validated ensemble")
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must lie in [1, {n}], got {k}")));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct FeatureCache {
    entries: Vec<(FeaturizerConfig, FeatureVector)>,
}

impl FeatureCache {
    fn get(&mut self, config: &FeaturizerConfig, text: &str) -> &FeatureVector {
        let pos = match self.entries.iter().position(|(c, _)| c == config) {
            Some(p) => p,
            None => {
                self.entries.push((config.clone(), featurize(text, config)));
                self.entries.len() - 1
            }
        };
        &self.entries[pos].1
    }

    fn lookup(&self, config: &FeaturizerConfig) -> &FeatureVector {
        &self
            .entries
            .iter()
            .find(|(c, _)| c == config)
            .expect("featurized for every component")
            .1
    }
}

pub fn expert_scores(ensemble: &EnsembleModel, text: &str) -> Vec<f64> {
    score_experts(&ensemble.experts, text)
}

/// Every expert's score, featurizing `text` once per distinct featurizer.
pub fn score_experts(experts: &[ExpertModel], text: &str) -> Vec<f64> {
    let mut cache = FeatureCache::default();
    experts
        .iter()
        .map(|e| e.score_features(cache.get(&e.featurizer, text)))
        .collect()
}

/// Indices of the `k` largest probabilities; ties go to the lower index.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Top-k gated score: the `k` most probable domains' experts, weighted by
/// their renormalized router probabilities. Falls back to uniform weights
/// when the selected mass is zero.
pub fn dogen_score(p: &DomainDistribution, y: &[f64], k: usize) -> Result<f64> {
    let probs = p.probs();
    if probs.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            actual: y.len(),
        });
    }
    check_k(k, probs.len())?;
    let selected = top_k_indices(probs, k);
    let mass: f64 = selected.iter().map(|&i| probs[i]).sum();
    if mass > 0.0 {
        Ok(selected.iter().map(|&i| probs[i] / mass * y[i]).sum())
    } else {
        Ok(selected.iter().map(|&i| y[i]).sum::<f64>() / k as f64)
    }
}

pub fn score_document(ensemble: &EnsembleModel, text: &str) -> f64 {
    ensemble.score(text)
}

pub fn equal_vote(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}
