//! Mini-batch gradient descent loop with periodic validation, patience-based
//! early stopping and keep-best snapshots. Shared by expert, router and joint
//! training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every_steps: usize,
    pub early_stopping_patience: usize,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            max_epochs: 3,
            eval_every_steps: 100,
            early_stopping_patience: 10,
            seed: 0,
            l2_penalty: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every_steps == 0 {
            return bad("batch_size, max_epochs and eval_every_steps must be positive");
        }
        if self.early_stopping_patience == 0 {
            return bad("early_stopping_patience must be positive");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub steps_run: usize,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    /// Validation loss at every checkpoint, the untrained model first.
    pub val_loss_history: Vec<f64>,
}

pub(crate) trait Objective {
    type Params: Clone;

    /// Applies one descent step computed on `batch` (indices into the
    /// training set). Gradients are evaluated at the pre-step parameters.
    fn step(&self, params: &mut Self::Params, batch: &[usize], lr: f64);

    fn val_loss(&self, params: &Self::Params) -> f64;
}

struct Tracker<P> {
    best: P,
    best_loss: f64,
    best_step: usize,
    stale: usize,
    history: Vec<f64>,
}

impl<P: Clone> Tracker<P> {
    /// Returns `Ok(true)` once patience is exhausted.
    fn record(&mut self, params: &P, loss: f64, step: usize, patience: usize) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        self.history.push(loss);
        if loss < self.best_loss {
            self.best = params.clone();
            self.best_loss = loss;
            self.best_step = step;
            self.stale = 0;
            Ok(false)
        } else {
            self.stale += 1;
            Ok(self.stale >= patience)
        }
    }
}

/// Runs the loop over a training set of `n_train` examples already laid out
/// in canonical order. Validation runs on the initial parameters, every
/// `eval_every_steps` steps, and once more after the last step if that step
/// was not already a checkpoint.
pub(crate) fn fit<O: Objective>(
    objective: &O,
    init: O::Params,
    n_train: usize,
    tc: &TrainConfig,
) -> Result<(O::Params, TrainMeta)> {
    tc.validate()?;
    if n_train == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let init_loss = objective.val_loss(&init);
    if !init_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let mut tracker = Tracker {
        best: init.clone(),
        best_loss: init_loss,
        best_step: 0,
        stale: 0,
        history: vec![init_loss],
    };
    let mut params = init;
    let mut rng = SplitMix64::new(tc.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut step = 0usize;
    let mut epochs_run = 0usize;
    let mut last_eval = 0usize;
    let mut stopped = false;

    'epochs: for _ in 0..tc.max_epochs {
        order.sort_unstable();
        rng.shuffle(&mut order);
        epochs_run += 1;
        for batch in order.chunks(tc.batch_size) {
            objective.step(&mut params, batch, tc.learning_rate);
            step += 1;
            if step.is_multiple_of(tc.eval_every_steps) {
                last_eval = step;
                let loss = objective.val_loss(&params);
                if tracker.record(&params, loss, step, tc.early_stopping_patience)? {
                    stopped = true;
                    break 'epochs;
                }
            }
        }
    }
    if !stopped && last_eval != step {
        let loss = objective.val_loss(&params);
        tracker.record(&params, loss, step, tc.early_stopping_patience)?;
    }

    let meta = TrainMeta {
        epochs_run,
        steps_run: step,
        best_step: tracker.best_step,
        best_val_loss: tracker.best_loss,
        seed: tc.seed,
        val_loss_history: tracker.history,
    };
    Ok((tracker.best, meta))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) const LOG_EPS: f64 = 1e-12;

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Multiplies every non-bias coordinate by `factor`.
#[inline]
pub(crate) fn shrink_non_bias(w: &mut [f64], factor: f64) {
    if factor != 1.0 {
        let n = w.len() - 1;
        for x in &mut w[..n] {
            *x *= factor;
        }
    }
}
