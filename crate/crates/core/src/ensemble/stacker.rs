use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, DomainId};
use crate::error::{Error, Result};
use crate::schema::{SchemaTag, StackerSchema};
use crate::train::sigmoid;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 10_000;
/// Columns whose spread is below this are treated as constant.
const CONSTANT_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    Balanced,
}

/// Logistic regression over standardized expert scores. The weights are
/// static: they do not depend on the input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackerModel {
    pub schema: SchemaTag<StackerSchema>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
    /// Expert domain per column, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<DomainId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackerFit {
    pub loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct Problem {
    /// Standardized rows.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    weight: Vec<f64>,
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Problem {
    fn margin(&self, m: usize, coef: &[f64], b: f64) -> f64 {
        self.x[m].iter().zip(coef).map(|(x, c)| x * c).sum::<f64>() + b
    }

    /// Class-weighted mean BCE written in margin form.
    fn loss(&self, coef: &[f64], b: f64) -> f64 {
        let total: f64 = (0..self.x.len())
            .map(|m| {
                let z = self.margin(m, coef, b);
                self.weight[m] * (softplus(z) - self.y[m] * z)
            })
            .sum();
        total / self.x.len() as f64
    }

    fn gradient(&self, coef: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut g = vec![0.0; coef.len()];
        let mut gb = 0.0;
        let inv = 1.0 / self.x.len() as f64;
        for m in 0..self.x.len() {
            let r = self.weight[m] * (sigmoid(self.margin(m, coef, b)) - self.y[m]) * inv;
            for (gj, xj) in g.iter_mut().zip(&self.x[m]) {
                *gj += r * xj;
            }
            gb += r;
        }
        (g, gb)
    }
}

fn column_stats(matrix: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = matrix.len() as f64;
    let means: Vec<f64> = (0..n)
        .map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / m)
        .collect();
    let stds = (0..n)
        .map(|j| {
            let var = matrix
                .iter()
                .map(|r| (r[j] - means[j]).powi(2))
                .sum::<f64>()
                / m;
            let sd = var.sqrt();
            if sd > CONSTANT_STD {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (means, stds)
}

pub fn fit_stacker(score_matrix: &[Vec<f64>], labels: &[ClassLabel]) -> Result<StackerModel> {
    let n = score_matrix.first().map_or(0, Vec::len);
    fit_stacker_from(score_matrix, labels, &vec![0.0; n], 0.0).map(|(m, _)| m)
}

/// Fits from an explicit starting point. Full-batch gradient descent with
/// step halving on non-decrease, stopping at gradient norm 1e-8 or after
/// 10,000 iterations.
pub fn fit_stacker_from(
    score_matrix: &[Vec<f64>],
    labels: &[ClassLabel],
    init_coef: &[f64],
    init_intercept: f64,
) -> Result<(StackerModel, StackerFit)> {
    let m = score_matrix.len();
    if m < 2 || labels.len() != m {
        return Err(Error::invalid(format!(
            "stacker needs at least 2 labeled rows, got {m} rows and {} labels",
            labels.len()
        )));
    }
    let n = score_matrix[0].len();
    if n == 0 || score_matrix.iter().any(|r| r.len() != n) || init_coef.len() != n {
        return Err(Error::invalid(
            "stacker score matrix must be rectangular with at least one column",
        ));
    }
    if score_matrix.iter().flatten().any(|v| !v.is_finite()) || !init_intercept.is_finite() {
        return Err(Error::invalid("stacker inputs must be finite"));
    }
    let machine = labels.iter().filter(|&&l| l == ClassLabel::Machine).count();
    let human = m - machine;
    if machine == 0 || human == 0 {
        return Err(Error::invalid("stacker labels must contain both classes"));
    }

    let (means, stds) = column_stats(score_matrix, n);
    let w_machine = m as f64 / (2.0 * machine as f64);
    let w_human = m as f64 / (2.0 * human as f64);
    let problem = Problem {
        x: score_matrix
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (v - means[j]) / stds[j])
                    .collect()
            })
            .collect(),
        y: labels.iter().map(|l| l.target()).collect(),
        weight: labels
            .iter()
            .map(|l| {
                if *l == ClassLabel::Machine {
                    w_machine
                } else {
                    w_human
                }
            })
            .collect(),
    };

    let mut coef = init_coef.to_vec();
    let mut b = init_intercept;
    let mut loss = problem.loss(&coef, b);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (g, gb) = problem.gradient(&coef, b);
        grad_norm = (g.iter().map(|v| v * v).sum::<f64>() + gb * gb).sqrt();
        if grad_norm < GRAD_TOL || iterations >= MAX_ITERS {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while step > 1e-30 {
            let cand: Vec<f64> = coef.iter().zip(&g).map(|(c, gj)| c - step * gj).collect();
            let cand_b = b - step * gb;
            let cand_loss = problem.loss(&cand, cand_b);
            if cand_loss < loss {
                coef = cand;
                b = cand_b;
                loss = cand_loss;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable decrease along the gradient
            break;
        }
    }

    Ok((
        StackerModel {
            schema: SchemaTag::new(),
            coefficients: coef,
            intercept: b,
            means,
            stds,
            class_weighting: ClassWeighting::Balanced,
            domains: Vec::new(),
        },
        StackerFit {
            loss,
            iterations,
            grad_norm,
        },
    ))
}

pub fn stacker_score(st: &StackerModel, y: &[f64]) -> Result<f64> {
    if y.len() != st.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: st.coefficients.len(),
            actual: y.len(),
        });
    }
    let z: f64 = y
        .iter()
        .zip(&st.coefficients)
        .zip(st.means.iter().zip(&st.stds))
        .map(|((v, c), (mu, sd))| c * (v - mu) / sd)
        .sum::<f64>()
        + st.intercept;
    Ok(sigmoid(z))
}

/// `|coef_i| / sum_j |coef_j|`.
pub fn normalized_weights(st: &StackerModel) -> Result<Vec<f64>> {
    let total: f64 = st.coefficients.iter().map(|c| c.abs()).sum();
    if total == 0.0 {
        return Err(Error::invalid("all stacker coefficients are zero"));
    }
    Ok(st.coefficients.iter().map(|c| c.abs() / total).collect())
}
