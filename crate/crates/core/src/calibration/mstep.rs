//! Per-item maximization of the expected complete-data log-likelihood.
//!
//! Every item is parametrized by its slope and cumulative-logit intercepts,
//! `x = (a, d_1, …, d_{K−1})` with `P(X ≥ j + 1 | θ) = logistic(aθ + d_j)`.
//! A 2PL item is the `K = 2` case. For fixed nodes the objective is concave
//! in `x`, so Newton–Raphson with step halving is used; steps that break
//! `d_1 > d_2 > …` or leave the slope bounds are rejected by the line
//! search, which keeps the threshold order intact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::estep::{CountTable, ExpectedCounts, PROB_FLOOR};
use super::CalibrationConfig;
use crate::error::{Error, Result};
use crate::model::{category_probs_from_logits, logistic, Dichotomous2PL, GradedParams, ItemParams};

/// Smallest slope a graded item may take; thresholds are only ordered
/// increasingly for positive slopes.
pub const GRADED_MIN_SLOPE: f64 = 0.01;

/// Smallest allowed gap between adjacent intercepts.
const MIN_INTERCEPT_GAP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SlopeBounds {
    pub fn for_item(params: &ItemParams, slope_clamp: f64) -> Self {
        match params {
            ItemParams::Dichotomous(_) => Self {
                lower: -slope_clamp,
                upper: slope_clamp,
            },
            ItemParams::Graded(_) => Self {
                lower: GRADED_MIN_SLOPE,
                upper: slope_clamp,
            },
        }
    }

    fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.lower, self.upper)
    }

    pub fn at_bound(&self, a: f64) -> bool {
        (a - self.lower).abs() <= 1e-9 || (a - self.upper).abs() <= 1e-9
    }
}

/// `Q(x) = Σ_q Σ_k r_qk ln P_k(θ_q; x)` for one item.
pub struct ItemObjective<'a> {
    nodes: &'a [f64],
    table: &'a CountTable,
}

impl<'a> ItemObjective<'a> {
    pub fn new(nodes: &'a [f64], table: &'a CountTable) -> Self {
        assert_eq!(table.counts().len(), nodes.len() * table.n_categories());
        Self { nodes, table }
    }

    pub fn n_params(&self) -> usize {
        self.table.n_categories()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x, false).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate(x, false).1
    }

    pub fn gradient_hessian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (_, g, h) = self.evaluate(x, true);
        (g, h)
    }

    fn evaluate(&self, x: &[f64], with_hessian: bool) -> (f64, Vec<f64>, DMatrix<f64>) {
        let k = self.table.n_categories();
        assert_eq!(x.len(), k);
        let a = x[0];
        let d = &x[1..];
        let mut f = 0.0;
        let mut g = vec![0.0; k];
        let mut h = DMatrix::zeros(if with_hessian { k } else { 0 }, if with_hessian { k } else { 0 });
        let mut eta = vec![0.0; k - 1];
        let mut s = vec![0.0; k - 1];
        let mut t2 = vec![0.0; k - 1];
        let mut probs = vec![0.0; k];
        for (q, &theta) in self.nodes.iter().enumerate() {
            for j in 0..k - 1 {
                eta[j] = a * theta + d[j];
                let cum = logistic(eta[j]);
                s[j] = cum * (1.0 - cum);
                t2[j] = s[j] * (1.0 - 2.0 * cum);
            }
            category_probs_from_logits(&eta, &mut probs);
            for c in 0..k {
                let r = self.table.at(q, c);
                if r == 0.0 {
                    continue;
                }
                let p = probs[c].max(PROB_FLOOR);
                f += r * p.ln();
                // P_c = S_{c−1} − S_c, so only intercepts c−1 and c enter
                let lower = c.checked_sub(1);
                let upper = (c < k - 1).then_some(c);
                let s_lo = lower.map_or(0.0, |j| s[j]);
                let s_up = upper.map_or(0.0, |j| s[j]);
                // (parameter index, dP, d²P/dη-factor) for the sparse entries
                let mut idx = [0usize; 3];
                let mut dp = [0.0f64; 3];
                let mut n = 1;
                dp[0] = theta * (s_lo - s_up);
                if let Some(j) = lower {
                    idx[n] = 1 + j;
                    dp[n] = s[j];
                    n += 1;
                }
                if let Some(j) = upper {
                    idx[n] = 1 + j;
                    dp[n] = -s[j];
                    n += 1;
                }
                for m in 0..n {
                    g[idx[m]] += r * dp[m] / p;
                }
                if with_hessian {
                    let t_lo = lower.map_or(0.0, |j| t2[j]);
                    let t_up = upper.map_or(0.0, |j| t2[j]);
                    // second derivatives of P_c
                    let mut d2 = [[0.0f64; 3]; 3];
                    d2[0][0] = theta * theta * (t_lo - t_up);
                    let mut m = 1;
                    if lower.is_some() {
                        d2[0][m] = theta * t_lo;
                        d2[m][0] = d2[0][m];
                        d2[m][m] = t_lo;
                        m += 1;
                    }
                    if upper.is_some() {
                        d2[0][m] = -theta * t_up;
                        d2[m][0] = d2[0][m];
                        d2[m][m] = -t_up;
                    }
                    for u in 0..n {
                        for v in 0..n {
                            h[(idx[u], idx[v])] += r * (d2[u][v] / p - dp[u] * dp[v] / (p * p));
                        }
                    }
                }
            }
        }
        (f, g, h)
    }
}

fn feasible(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite()) && x[1..].windows(2).all(|w| w[0] - w[1] >= MIN_INTERCEPT_GAP)
}

fn newton_direction(g: &[f64], h: &DMatrix<f64>, slope_free: bool) -> Option<Vec<f64>> {
    let k = g.len();
    let offset = usize::from(!slope_free);
    let m = k - offset;
    let neg_h = DMatrix::from_fn(m, m, |i, j| -h[(i + offset, j + offset)]);
    let rhs = DVector::from_iterator(m, g[offset..].iter().copied());
    let step = neg_h.cholesky()?.solve(&rhs);
    let mut dir = vec![0.0; k];
    for i in 0..m {
        dir[i + offset] = step[i];
    }
    dir.iter().all(|v| v.is_finite()).then_some(dir)
}

fn gradient_direction(g: &[f64], h: &DMatrix<f64>, slope_free: bool) -> Vec<f64> {
    let scale = (0..g.len()).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    g.iter()
        .enumerate()
        .map(|(i, v)| if i == 0 && !slope_free { 0.0 } else { v / scale })
        .collect()
}

fn line_search(
    obj: &ItemObjective<'_>,
    x: &[f64],
    f: f64,
    dir: &[f64],
    bounds: SlopeBounds,
) -> Option<(Vec<f64>, f64)> {
    let mut t = 1.0;
    for _ in 0..60 {
        let mut cand: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
        cand[0] = bounds.clamp(cand[0]);
        if feasible(&cand) {
            let fc = obj.value(&cand);
            if fc.is_finite() && fc >= f {
                return Some((cand, fc));
            }
        }
        t *= 0.5;
    }
    None
}

/// Maximizes one item's objective from `start`. Newton steps are used for
/// `max_iter` iterations, after which plain gradient steps with halving
/// take over for another `max_iter`.
pub fn maximize_item(
    obj: &ItemObjective<'_>,
    start: &[f64],
    bounds: SlopeBounds,
    max_iter: usize,
    tolerance: f64,
) -> std::result::Result<Vec<f64>, String> {
    let mut x = start.to_vec();
    x[0] = bounds.clamp(x[0]);
    if !feasible(&x) {
        return Err(format!("infeasible starting point {x:?}"));
    }
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(format!("objective not finite at {x:?}"));
    }
    for iter in 0..2 * max_iter {
        let (g, h) = obj.gradient_hessian(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite gradient at {x:?}"));
        }
        let pushes_out = (x[0] <= bounds.lower + 1e-12 && g[0] < 0.0)
            || (x[0] >= bounds.upper - 1e-12 && g[0] > 0.0);
        let slope_free = !pushes_out;
        let newton = if iter < max_iter {
            newton_direction(&g, &h, slope_free)
        } else {
            None
        };
        let mut accepted = newton
            .as_deref()
            .and_then(|dir| line_search(obj, &x, f, dir, bounds));
        if accepted.is_none() {
            let dir = gradient_direction(&g, &h, slope_free);
            accepted = line_search(obj, &x, f, &dir, bounds);
        }
        let Some((next, fn_)) = accepted else {
            // no ascent step left: stationary up to rounding
            return Ok(x);
        };
        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        f = fn_;
        if change < tolerance {
            break;
        }
    }
    Ok(x)
}

pub(crate) fn params_from_vector(template: &ItemParams, x: &[f64]) -> Result<ItemParams> {
    Ok(match template {
        ItemParams::Dichotomous(_) => ItemParams::Dichotomous(Dichotomous2PL::from_intercept(x[0], x[1])),
        ItemParams::Graded(g) => {
            let a = x[0];
            let thresholds = x[1..].iter().map(|d| -d / a).collect();
            ItemParams::Graded(GradedParams::new(a, thresholds, g.category_map.clone())?)
        }
    })
}

pub(crate) fn params_to_vector(params: &ItemParams) -> Vec<f64> {
    let mut x = vec![params.slope()];
    x.extend(params.intercepts());
    x
}

pub(crate) fn m_step_named(
    counts: &ExpectedCounts,
    params: &[ItemParams],
    config: &CalibrationConfig,
    names: &[String],
) -> Result<Vec<ItemParams>> {
    if counts.items().len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "{} count tables for {} items",
            counts.items().len(),
            params.len()
        )));
    }
    params
        .par_iter()
        .zip(counts.items().par_iter())
        .enumerate()
        .map(|(j, (p, table))| {
            let obj = ItemObjective::new(counts.nodes(), table);
            let bounds = SlopeBounds::for_item(p, config.slope_clamp);
            let x = maximize_item(
                &obj,
                &params_to_vector(p),
                bounds,
                config.inner_newton_max_iter,
                config.inner_newton_tolerance,
            )
            .map_err(|detail| Error::ItemFailure {
                item: names[j].clone(),
                detail,
            })?;
            params_from_vector(p, &x).map_err(|e| Error::ItemFailure {
                item: names[j].clone(),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Updates every item from expected counts. Items are named by position in
/// error messages.
pub fn m_step(
    counts: &ExpectedCounts,
    params: &[ItemParams],
    config: &CalibrationConfig,
) -> Result<Vec<ItemParams>> {
    let names: Vec<String> = (0..params.len()).map(|j| format!("#{j}")).collect();
    m_step_named(counts, params, config, &names)
}
