//! EAP ability estimates and item/test information.

use serde::{Deserialize, Serialize};

use crate::calibration::e_step;
use crate::error::Result;
use crate::model::{logistic, ItemParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub person_id: String,
    pub theta_eap: f64,
    pub posterior_sd: f64,
    pub n_answered: usize,
    /// No answered items: the estimate is the prior `(0, 1)`.
    pub prior_only: bool,
}

/// Posterior mean and standard deviation of θ for every person.
pub fn eap_scores(matrix: &ResponseMatrix, params: &[ItemParams], grid: &QuadratureGrid) -> Result<Vec<AbilityEstimate>> {
    let posterior = e_step(matrix, params, grid)?;
    let nodes = grid.nodes();
    Ok((0..matrix.n_persons())
        .map(|i| {
            let n_answered = matrix.n_answered(i);
            let person_id = matrix.person_ids()[i].clone();
            if n_answered == 0 {
                return AbilityEstimate {
                    person_id,
                    theta_eap: 0.0,
                    posterior_sd: 1.0,
                    n_answered,
                    prior_only: true,
                };
            }
            let w = posterior.person(i);
            let mean: f64 = nodes.iter().zip(w).map(|(t, w)| t * w).sum();
            let var: f64 = nodes.iter().zip(w).map(|(t, w)| w * (t - mean).powi(2)).sum();
            AbilityEstimate {
                person_id,
                theta_eap: mean,
                posterior_sd: var.max(0.0).sqrt(),
                n_answered,
                prior_only: false,
            }
        })
        .collect())
}

/// Fisher information of one item at θ.
pub fn item_information(params: &ItemParams, theta: f64) -> f64 {
    match params {
        ItemParams::Dichotomous(p) => {
            let pr = logistic(p.logit(theta));
            p.a * p.a * pr * (1.0 - pr)
        }
        ItemParams::Graded(g) => {
            let a = g.a;
            // cumulative P(X ≥ k) with the two fixed ends
            let mut cum = vec![1.0];
            cum.extend(g.thresholds.iter().map(|b| logistic(a * (theta - b))));
            cum.push(0.0);
            let s: Vec<f64> = cum.iter().map(|c| c * (1.0 - c)).collect();
            let probs = params.category_probs(theta);
            probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(k, p)| {
                    let dp = a * (s[k] - s[k + 1]);
                    dp * dp / p
                })
                .sum()
        }
    }
}

pub fn default_theta_grid() -> Vec<f64> {
    (0..101).map(|i| -4.0 + 0.08 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformationCurve {
    pub theta: Vec<f64>,
    pub total: Vec<f64>,
    /// `per_item[j][t]`
    pub per_item: Vec<Vec<f64>>,
}

impl InformationCurve {
    /// θ with the largest total information (first on ties).
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.theta
            .iter()
            .zip(&self.total)
            .fold(None, |best: Option<(f64, f64)>, (&t, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((t, v)),
            })
    }
}

pub fn test_information(params: &[ItemParams], theta_grid: &[f64]) -> InformationCurve {
    let per_item: Vec<Vec<f64>> = params
        .iter()
        .map(|p| theta_grid.iter().map(|&t| item_information(p, t)).collect())
        .collect();
    let total = (0..theta_grid.len())
        .map(|t| per_item.iter().map(|row| row[t]).sum())
        .collect();
    InformationCurve {
        theta: theta_grid.to_vec(),
        total,
        per_item,
    }
}
