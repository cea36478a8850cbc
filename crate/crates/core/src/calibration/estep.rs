use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ItemParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;

pub(crate) const PROB_FLOOR: f64 = 1e-300;

/// `ln P(category k | θ_q)` for every item, node and modeled category.
pub(crate) struct LogProbTable {
    n_nodes: usize,
    // per item: nodes × modeled categories
    items: Vec<Vec<f64>>,
    n_categories: Vec<usize>,
}

impl LogProbTable {
    pub(crate) fn new(params: &[ItemParams], nodes: &[f64]) -> Self {
        let items = params
            .iter()
            .map(|p| {
                nodes
                    .iter()
                    .flat_map(|&t| p.category_probs(t).into_iter().map(|x| x.max(PROB_FLOOR).ln()))
                    .collect()
            })
            .collect();
        Self {
            n_nodes: nodes.len(),
            items,
            n_categories: params.iter().map(ItemParams::n_modeled).collect(),
        }
    }

    #[inline]
    fn get(&self, item: usize, node: usize, category: usize) -> f64 {
        self.items[item][node * self.n_categories[item] + category]
    }
}

/// Resolves every observed response to its modeled category index.
pub(crate) fn modeled_responses(
    matrix: &ResponseMatrix,
    params: &[ItemParams],
) -> Result<Vec<Vec<Option<usize>>>> {
    if params.len() != matrix.n_items() {
        return Err(Error::InvalidInput(format!(
            "{} item parameter sets for a matrix with {} items",
            params.len(),
            matrix.n_items()
        )));
    }
    (0..matrix.n_persons())
        .map(|p| {
            matrix
                .row(p)
                .iter()
                .zip(params)
                .enumerate()
                .map(|(j, (cell, par))| match cell {
                    None => Ok(None),
                    Some(v) => par.modeled_index(*v).map(Some).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "response {v} of item {} not covered by its parameters",
                            matrix.item_ids()[j]
                        ))
                    }),
                })
                .collect()
        })
        .collect()
}

/// Per-person posterior weights over the quadrature nodes.
#[derive(Clone, Debug)]
pub struct Posterior {
    n_nodes: usize,
    weights: Vec<f64>,
    person_log_likelihood: Vec<f64>,
}

impl Posterior {
    pub fn n_persons(&self) -> usize {
        self.person_log_likelihood.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Posterior weights of one person; they sum to one.
    pub fn person(&self, person: usize) -> &[f64] {
        &self.weights[person * self.n_nodes..(person + 1) * self.n_nodes]
    }

    /// `ln Σ_q π_q ∏_j P(x_j | θ_q)` for one person.
    pub fn person_log_likelihood(&self, person: usize) -> f64 {
        self.person_log_likelihood[person]
    }

    /// Marginal log-likelihood summed over persons in index order.
    pub fn log_likelihood(&self) -> f64 {
        self.person_log_likelihood.iter().sum()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior over the grid for each person given the current item
/// parameters. Absent cells contribute nothing; persons without any
/// response keep the prior.
pub fn e_step(
    matrix: &ResponseMatrix,
    params: &[ItemParams],
    grid: &QuadratureGrid,
) -> Result<Posterior> {
    let responses = modeled_responses(matrix, params)?;
    let table = LogProbTable::new(params, grid.nodes());
    Ok(posterior_from_table(&responses, &table, grid))
}

pub(crate) fn posterior_from_table(
    responses: &[Vec<Option<usize>>],
    table: &LogProbTable,
    grid: &QuadratureGrid,
) -> Posterior {
    let n_nodes = table.n_nodes;
    let log_prior: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
    let per_person: Vec<(Vec<f64>, f64)> = responses
        .par_iter()
        .map(|row| {
            if row.iter().all(Option::is_none) {
                return (grid.weights().to_vec(), 0.0);
            }
            let mut joint = log_prior.clone();
            for (j, cell) in row.iter().enumerate() {
                if let Some(k) = *cell {
                    for (q, lj) in joint.iter_mut().enumerate() {
                        *lj += table.get(j, q, k);
                    }
                }
            }
            let ll = log_sum_exp(&joint);
            let w = joint.iter().map(|x| (x - ll).exp()).collect();
            (w, ll)
        })
        .collect();
    let mut weights = Vec::with_capacity(responses.len() * n_nodes);
    let mut person_log_likelihood = Vec::with_capacity(responses.len());
    for (w, ll) in per_person {
        weights.extend_from_slice(&w);
        person_log_likelihood.push(ll);
    }
    Posterior {
        n_nodes,
        weights,
        person_log_likelihood,
    }
}

/// `Σ_i ln Σ_q w_q ∏_j P(x_ij | θ_q)`; zero for an empty matrix.
pub fn marginal_log_likelihood(
    matrix: &ResponseMatrix,
    params: &[ItemParams],
    grid: &QuadratureGrid,
) -> Result<f64> {
    if matrix.n_persons() == 0 {
        return Ok(0.0);
    }
    Ok(e_step(matrix, params, grid)?.log_likelihood())
}

/// Expected response counts per item, node and modeled category.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedCounts {
    nodes: Vec<f64>,
    items: Vec<CountTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    n_categories: usize,
    // nodes × categories
    counts: Vec<f64>,
}

impl CountTable {
    pub fn new(n_categories: usize, counts: Vec<f64>) -> Self {
        assert!(n_categories >= 2 && counts.len() % n_categories == 0);
        Self {
            n_categories,
            counts,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn at(&self, node: usize, category: usize) -> f64 {
        self.counts[node * self.n_categories + category]
    }
}

impl ExpectedCounts {
    pub fn new(nodes: Vec<f64>, items: Vec<CountTable>) -> Self {
        for t in &items {
            assert_eq!(t.counts.len(), nodes.len() * t.n_categories);
        }
        Self { nodes, items }
    }

    /// Accumulates `r_jqk = Σ_i w_iq 1[x_ij = k]` in person order.
    pub fn from_posterior(
        matrix: &ResponseMatrix,
        params: &[ItemParams],
        grid: &QuadratureGrid,
        posterior: &Posterior,
    ) -> Result<Self> {
        let responses = modeled_responses(matrix, params)?;
        Ok(Self::accumulate(&responses, params, grid, posterior))
    }

    pub(crate) fn accumulate(
        responses: &[Vec<Option<usize>>],
        params: &[ItemParams],
        grid: &QuadratureGrid,
        posterior: &Posterior,
    ) -> Self {
        let n_nodes = grid.len();
        let mut items: Vec<CountTable> = params
            .iter()
            .map(|p| CountTable {
                n_categories: p.n_modeled(),
                counts: vec![0.0; n_nodes * p.n_modeled()],
            })
            .collect();
        for (i, row) in responses.iter().enumerate() {
            let w = posterior.person(i);
            for (j, cell) in row.iter().enumerate() {
                if let Some(k) = *cell {
                    let t = &mut items[j];
                    let kk = t.n_categories;
                    for (q, &wq) in w.iter().enumerate() {
                        t.counts[q * kk + k] += wq;
                    }
                }
            }
        }
        Self {
            nodes: grid.nodes().to_vec(),
            items,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn items(&self) -> &[CountTable] {
        &self.items
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dichotomous2PL, ItemKind};
    use crate::quadrature::gauss_hermite_grid;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: Vec<Vec<Option<u8>>>) -> ResponseMatrix {
        let n = rows[0].len();
        ResponseMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            (0..n).map(|j| (format!("i{j}"), ItemKind::Dichotomous)).collect(),
            rows,
        )
        .unwrap()
    }

    fn twopl(a: f64, b: f64) -> ItemParams {
        ItemParams::Dichotomous(Dichotomous2PL::from_difficulty(a, b))
    }

    #[test]
    fn empty_person_gets_prior() {
        let m = matrix(vec![vec![None, None], vec![Some(1), Some(0)]]);
        let g = gauss_hermite_grid(10).unwrap();
        let post = e_step(&m, &[twopl(1.0, 0.0), twopl(1.5, 0.5)], &g).unwrap();
        assert_eq!(post.person(0), g.weights());
        assert_eq!(post.person_log_likelihood(0), 0.0);
        assert_abs_diff_eq!(post.person(1).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn posterior_mean_follows_pattern() {
        let m = matrix(vec![vec![Some(1)], vec![Some(0)]]);
        let g = gauss_hermite_grid(10).unwrap();
        let post = e_step(&m, &[twopl(1.2, 0.0)], &g).unwrap();
        let mean = |p: usize| -> f64 {
            post.person(p).iter().zip(g.nodes()).map(|(w, t)| w * t).sum()
        };
        assert!(mean(0) > 0.0);
        assert!(mean(1) < 0.0);
    }

    #[test]
    fn weights_match_brute_force_products() {
        let m = matrix(vec![
            vec![Some(1), Some(1)],
            vec![Some(0), Some(1)],
            vec![None, Some(0)],
        ]);
        let params = [twopl(0.8, -0.3), twopl(1.7, 0.9)];
        let g = gauss_hermite_grid(10).unwrap();
        let post = e_step(&m, &params, &g).unwrap();
        let raw = [(0.8, -0.3), (1.7, 0.9)];
        for p in 0..3 {
            let mut unnorm = Vec::new();
            for (q, &t) in g.nodes().iter().enumerate() {
                let mut prod = g.weights()[q];
                for (j, &(a, b)) in raw.iter().enumerate() {
                    if let Some(x) = m.get(p, j) {
                        let pr = 1.0 / (1.0 + (-a * (t - b)).exp());
                        prod *= if x == 1 { pr } else { 1.0 - pr };
                    }
                }
                unnorm.push(prod);
            }
            let total: f64 = unnorm.iter().sum();
            for (q, u) in unnorm.iter().enumerate() {
                assert_abs_diff_eq!(post.person(p)[q], u / total, epsilon = 1e-13);
            }
            assert_abs_diff_eq!(post.person_log_likelihood(p), total.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn likelihood_edge_cases() {
        let g = gauss_hermite_grid(10).unwrap();
        let empty = ResponseMatrix::new(vec![], vec![("x".into(), ItemKind::Dichotomous)], vec![])
            .unwrap();
        assert_eq!(marginal_log_likelihood(&empty, &[twopl(1.0, 0.0)], &g).unwrap(), 0.0);
        let flat = ItemParams::Dichotomous(Dichotomous2PL::from_intercept(0.0, 0.0));
        for x in [0u8, 1] {
            let m = matrix(vec![vec![Some(x)]]);
            let ll = marginal_log_likelihood(&m, std::slice::from_ref(&flat), &g).unwrap();
            assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn counts_sum_to_number_of_responses() {
        let m = matrix(vec![vec![Some(1), None], vec![Some(0), Some(1)], vec![Some(1), Some(1)]]);
        let params = [twopl(1.0, 0.0), twopl(0.5, 1.0)];
        let g = gauss_hermite_grid(10).unwrap();
        let post = e_step(&m, &params, &g).unwrap();
        let counts = ExpectedCounts::from_posterior(&m, &params, &g, &post).unwrap();
        let totals: Vec<f64> = counts.items().iter().map(|t| t.counts().iter().sum()).collect();
        assert_abs_diff_eq!(totals[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(totals[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_params_rejected() {
        let m = matrix(vec![vec![Some(1), Some(0)]]);
        let g = gauss_hermite_grid(5).unwrap();
        assert!(e_step(&m, &[twopl(1.0, 0.0)], &g).is_err());
    }
}
