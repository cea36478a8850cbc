//! Cross-product (XPD) standard errors: the information matrix is
//! approximated by `Σ_i s_i s_iᵀ`, where `s_i` is person `i`'s gradient of
//! the marginal log-likelihood with respect to every item's `(a, d)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::estep::{e_step, modeled_responses};
use super::mstep::{params_to_vector, SlopeBounds};
use crate::error::Result;
use crate::model::{logistic, ItemParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;

/// Eigenvalue ratio below which the information matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemStandardErrors {
    pub a: Option<f64>,
    pub intercepts: Vec<Option<f64>>,
    /// Delta-method SEs of `b` (2PL) or `b_1..b_{K−1}` (graded).
    pub difficulty: Vec<Option<f64>>,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub items: Vec<ItemStandardErrors>,
    /// The joint information matrix could not be inverted; item SEs then
    /// come from per-item diagonal blocks and are all marked unreliable.
    pub information_singular: bool,
}

/// `∂ ln P_c / ∂(a, d_1..d_{K−1})` for every category at one θ.
fn category_log_gradients(x: &[f64], theta: f64) -> Vec<Vec<f64>> {
    let k = x.len();
    let a = x[0];
    let eta: Vec<f64> = x[1..].iter().map(|d| a * theta + d).collect();
    let cum: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let s: Vec<f64> = cum.iter().map(|p| p * (1.0 - p)).collect();
    let mut probs = vec![0.0; k];
    crate::model::category_probs_from_logits(&eta, &mut probs);
    (0..k)
        .map(|c| {
            let p = probs[c].max(super::estep::PROB_FLOOR);
            let mut g = vec![0.0; k];
            let s_lo = if c > 0 { s[c - 1] } else { 0.0 };
            let s_up = if c < k - 1 { s[c] } else { 0.0 };
            g[0] = theta * (s_lo - s_up) / p;
            if c > 0 {
                g[c] = s_lo / p;
            }
            if c < k - 1 {
                g[c + 1] = -s_up / p;
            }
            g
        })
        .collect()
}

fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

fn item_errors(params: &ItemParams, cov: Option<&DMatrix<f64>>, reliable: bool) -> ItemStandardErrors {
    let k = params.n_modeled();
    let x = params_to_vector(params);
    let Some(cov) = cov else {
        return ItemStandardErrors {
            a: None,
            intercepts: vec![None; k - 1],
            difficulty: vec![None; k - 1],
            reliable: false,
        };
    };
    let sd = |v: f64| (v >= 0.0 && v.is_finite()).then(|| v.sqrt());
    let a = x[0];
    let difficulty = (1..k)
        .map(|j| {
            let stable = match params {
                ItemParams::Dichotomous(p) => p.b.is_some(),
                ItemParams::Graded(_) => true,
            };
            if !stable {
                return None;
            }
            let d = x[j];
            // b = −d/a
            let ga = d / (a * a);
            let gd = -1.0 / a;
            sd(ga * ga * cov[(0, 0)] + gd * gd * cov[(j, j)] + 2.0 * ga * gd * cov[(0, j)])
        })
        .collect();
    let a_se = sd(cov[(0, 0)]);
    let intercepts: Vec<Option<f64>> = (1..k).map(|j| sd(cov[(j, j)])).collect();
    let all_finite = a_se.is_some() && intercepts.iter().all(Option::is_some);
    ItemStandardErrors {
        a: a_se,
        intercepts,
        difficulty,
        reliable: reliable && all_finite,
    }
}

/// XPD standard errors at `params`. Items whose slope sits on a bound
/// (`±slope_clamp`, or the graded floor) are marked unreliable.
pub fn standard_errors(
    matrix: &ResponseMatrix,
    params: &[ItemParams],
    grid: &QuadratureGrid,
    slope_clamp: f64,
) -> Result<StandardErrors> {
    let responses = modeled_responses(matrix, params)?;
    let posterior = e_step(matrix, params, grid)?;
    let vectors: Vec<Vec<f64>> = params.iter().map(params_to_vector).collect();
    let mut offsets = Vec::with_capacity(params.len());
    let mut total = 0;
    for v in &vectors {
        offsets.push(total);
        total += v.len();
    }
    // per item, per node: gradients for each category
    let grads: Vec<Vec<Vec<Vec<f64>>>> = vectors
        .iter()
        .map(|x| grid.nodes().iter().map(|&t| category_log_gradients(x, t)).collect())
        .collect();

    let mut info = DMatrix::<f64>::zeros(total, total);
    let mut score = vec![0.0; total];
    for (i, row) in responses.iter().enumerate() {
        score.iter_mut().for_each(|v| *v = 0.0);
        let w = posterior.person(i);
        for (j, cell) in row.iter().enumerate() {
            let Some(c) = *cell else { continue };
            let off = offsets[j];
            for (q, &wq) in w.iter().enumerate() {
                for (m, g) in grads[j][q][c].iter().enumerate() {
                    score[off + m] += wq * g;
                }
            }
        }
        for u in 0..total {
            if score[u] == 0.0 {
                continue;
            }
            for v in 0..total {
                info[(u, v)] += score[u] * score[v];
            }
        }
    }

    let bounds_hit: Vec<bool> = params
        .iter()
        .map(|p| SlopeBounds::for_item(p, slope_clamp).at_bound(p.slope()))
        .collect();

    let eig = SymmetricEigen::new(info.clone());
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let singular = !(max_eig > 0.0 && min_eig > SINGULAR_RATIO * max_eig);
    let full_cov = if singular { None } else { invert_spd(&info) };

    let items = params
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let off = offsets[j];
            let k = vectors[j].len();
            let cov = match &full_cov {
                Some(c) => Some(c.view((off, off), (k, k)).into_owned()),
                None => invert_spd(&info.view((off, off), (k, k)).into_owned()),
            };
            item_errors(p, cov.as_ref(), full_cov.is_some() && !bounds_hit[j])
        })
        .collect();
    Ok(StandardErrors {
        items,
        information_singular: full_cov.is_none(),
    })
}
