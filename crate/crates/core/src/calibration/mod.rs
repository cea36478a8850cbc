//! Marginal maximum likelihood calibration of a one-factor mixed-format
//! model (2PL and graded items) by Bock–Aitkin EM over a Gauss–Hermite
//! grid, with a fixed standard-normal prior on θ.

mod estep;
mod mstep;
mod se;

pub use estep::{e_step, marginal_log_likelihood, CountTable, ExpectedCounts, Posterior};
pub use mstep::{maximize_item, m_step, ItemObjective, SlopeBounds, GRADED_MIN_SLOPE};
pub use se::{standard_errors, ItemStandardErrors, StandardErrors};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    collapse_categories, screen_items, Dichotomous2PL, DroppedItem, GradedParams, ItemKind, ItemParams,
    ResponseMatrix,
};
use crate::quadrature::{gauss_hermite_grid, QuadratureGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n_quadrature: usize,
    pub max_em_cycles: usize,
    /// Stop once no `a` or `d` moves by more than this in one cycle.
    pub em_tolerance: f64,
    pub inner_newton_max_iter: usize,
    pub inner_newton_tolerance: f64,
    pub slope_clamp: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_quadrature: 10,
            max_em_cycles: 500,
            em_tolerance: 1e-4,
            inner_newton_max_iter: 50,
            inner_newton_tolerance: 1e-8,
            slope_clamp: 6.0,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_quadrature < 2 {
            return Err(Error::InvalidInput("n_quadrature must be at least 2".into()));
        }
        if !(self.em_tolerance > 0.0 && self.inner_newton_tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.slope_clamp > GRADED_MIN_SLOPE) {
            return Err(Error::InvalidInput(format!(
                "slope_clamp must exceed {GRADED_MIN_SLOPE}"
            )));
        }
        if self.max_em_cycles == 0 || self.inner_newton_max_iter == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedItem {
    pub item_id: String,
    pub params: ItemParams,
    pub standard_errors: ItemStandardErrors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub items: Vec<CalibratedItem>,
    pub log_likelihood: f64,
    pub n_cycles: usize,
    pub converged: bool,
    pub dropped: Vec<DroppedItem>,
    pub n_persons: usize,
    pub n_quadrature: usize,
    pub information_singular: bool,
    /// Marginal log-likelihood before each M-step, then at the final
    /// parameters.
    pub log_likelihood_trace: Vec<f64>,
}

impl CalibrationResult {
    pub fn params(&self) -> Vec<ItemParams> {
        self.items.iter().map(|i| i.params.clone()).collect()
    }

    pub fn item(&self, id: &str) -> Option<&CalibratedItem> {
        self.items.iter().find(|i| i.item_id == id)
    }

    /// Columns of `matrix` matching the calibrated items, in result order,
    /// together with their parameters.
    pub fn aligned(&self, matrix: &ResponseMatrix) -> Result<(ResponseMatrix, Vec<ItemParams>)> {
        let mut cols = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let j = matrix.item_index(&item.item_id).ok_or_else(|| {
                Error::InvalidInput(format!("calibrated item {} missing from matrix", item.item_id))
            })?;
            let compatible = matches!(
                (matrix.kind(j), &item.params),
                (ItemKind::Dichotomous, ItemParams::Dichotomous(_))
                    | (ItemKind::Graded { .. }, ItemParams::Graded(_))
            );
            if !compatible {
                return Err(Error::InvalidInput(format!(
                    "item {} kind does not match its parameters",
                    item.item_id
                )));
            }
            cols.push(j);
        }
        Ok((matrix.select_items(&cols), self.params()))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `a = 1`; intercepts are logits of the observed (cumulative) proportions.
/// Near-tied graded intercepts are spread apart with seeded jitter.
fn start_values(data: &ResponseMatrix, seed: u64) -> Vec<ItemParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..data.n_items())
        .map(|j| {
            let counts = data.value_counts(j);
            match data.kind(j) {
                ItemKind::Dichotomous => {
                    let n = (counts[0] + counts[1]) as f64;
                    let p = (counts[1] as f64 / n).clamp(0.01, 0.99);
                    ItemParams::Dichotomous(Dichotomous2PL::from_intercept(1.0, logit(p)))
                }
                ItemKind::Graded { .. } => {
                    let map = collapse_categories(&counts);
                    let k = *map.last().unwrap() as usize;
                    let mut modeled = vec![0usize; k];
                    for (c, &m) in map.iter().enumerate() {
                        modeled[m as usize - 1] += counts[c + 1];
                    }
                    let n: usize = modeled.iter().sum();
                    let mut above = n;
                    let mut d = Vec::with_capacity(k - 1);
                    for m in modeled.iter().take(k - 1) {
                        above -= m;
                        d.push(logit((above as f64 / n as f64).clamp(0.01, 0.99)));
                    }
                    if d.windows(2).any(|w| w[0] - w[1] < 1e-3) {
                        for v in d.iter_mut() {
                            *v += rng.random_range(-0.05..0.05);
                        }
                        d.sort_by(|x, y| y.total_cmp(x));
                        for i in 1..d.len() {
                            if d[i - 1] - d[i] < 0.1 {
                                d[i] = d[i - 1] - 0.1;
                            }
                        }
                    }
                    let thresholds = d.iter().map(|v| -v).collect();
                    ItemParams::Graded(
                        GradedParams::new(1.0, thresholds, map).expect("start values are ordered"),
                    )
                }
            }
        })
        .collect()
}

fn max_change(old: &[ItemParams], new: &[ItemParams]) -> f64 {
    old.iter()
        .zip(new)
        .flat_map(|(o, n)| {
            let (vo, vn) = (mstep::params_to_vector(o), mstep::params_to_vector(n));
            vo.into_iter().zip(vn).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Screens items, then runs EM until the largest parameter change drops
/// below `em_tolerance` or `max_em_cycles` is reached.
pub fn fit_mixed(matrix: &ResponseMatrix, config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let screening = screen_items(matrix)?;
    if screening.kept.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable items after screening, need at least 2",
            screening.kept.len()
        )));
    }
    if matrix.n_persons() < 2 {
        return Err(Error::InsufficientData("need at least 2 persons".into()));
    }
    let data = matrix.select_items(&screening.kept);
    let grid = gauss_hermite_grid(config.n_quadrature)?;
    let names = data.item_ids().to_vec();
    let mut params = start_values(&data, config.seed);
    let responses = estep::modeled_responses(&data, &params)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut n_cycles = 0;
    while n_cycles < config.max_em_cycles {
        let posterior = run_e_step(&responses, &params, &grid);
        let ll = posterior.log_likelihood();
        if !ll.is_finite() {
            return Err(Error::NumericalFailure {
                cycle: n_cycles + 1,
                detail: format!("marginal log-likelihood is {ll}"),
            });
        }
        trace.push(ll);
        let counts = ExpectedCounts::accumulate(&responses, &params, &grid, &posterior);
        let next = mstep::m_step_named(&counts, &params, config, &names)?;
        n_cycles += 1;
        let change = max_change(&params, &next);
        params = next;
        if change < config.em_tolerance {
            converged = true;
            break;
        }
    }
    let final_ll = run_e_step(&responses, &params, &grid).log_likelihood();
    if !final_ll.is_finite() {
        return Err(Error::NumericalFailure {
            cycle: n_cycles,
            detail: format!("final marginal log-likelihood is {final_ll}"),
        });
    }
    trace.push(final_ll);

    let se = standard_errors(&data, &params, &grid, config.slope_clamp)?;
    let items = names
        .into_iter()
        .zip(params)
        .zip(se.items)
        .map(|((item_id, params), standard_errors)| CalibratedItem {
            item_id,
            params,
            standard_errors,
        })
        .collect();
    Ok(CalibrationResult {
        items,
        log_likelihood: final_ll,
        n_cycles,
        converged,
        dropped: screening.dropped,
        n_persons: data.n_persons(),
        n_quadrature: config.n_quadrature,
        information_singular: se.information_singular,
        log_likelihood_trace: trace,
    })
}

fn run_e_step(responses: &[Vec<Option<usize>>], params: &[ItemParams], grid: &QuadratureGrid) -> Posterior {
    let table = estep::LogProbTable::new(params, grid.nodes());
    estep::posterior_from_table(responses, &table, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ResponseMatrix {
        let rows = vec![
            vec![Some(1), Some(1), Some(1), Some(3)],
            vec![Some(0), Some(1), Some(1), Some(2)],
            vec![Some(1), Some(0), Some(1), Some(1)],
            vec![Some(0), Some(0), Some(1), Some(1)],
            vec![Some(1), Some(1), Some(1), Some(3)],
            vec![Some(0), None, Some(1), Some(2)],
        ];
        ResponseMatrix::new(
            (0..6).map(|i| format!("p{i}")).collect(),
            vec![
                ("e1".into(), ItemKind::Dichotomous),
                ("e2".into(), ItemKind::Dichotomous),
                ("e3".into(), ItemKind::Dichotomous),
                ("s1".into(), ItemKind::Graded { categories: 5 }),
            ],
            rows,
        )
        .unwrap()
    }

    #[test]
    fn constant_item_is_dropped_and_fit_proceeds() {
        let r = fit_mixed(&tiny(), &CalibrationConfig::default()).unwrap();
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.dropped[0].item_id, "e3");
        assert_eq!(r.items.len(), 3);
        assert!(r.log_likelihood.is_finite());
        assert!(r.n_cycles <= 500);
        // graded item observed only in categories 1..3
        let ItemParams::Graded(g) = &r.item("s1").unwrap().params else { panic!() };
        assert_eq!(g.thresholds.len(), 2);
        assert_eq!(g.category_map, vec![1, 2, 3, 3, 3]);
    }

    #[test]
    fn too_few_items_is_insufficient_data() {
        let m = tiny().select_items(&[0, 2]);
        assert!(matches!(
            fit_mixed(&m, &CalibrationConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = CalibrationConfig {
            em_tolerance: 0.0,
            ..Default::default()
        };
        assert!(fit_mixed(&tiny(), &cfg).is_err());
    }

    #[test]
    fn aligned_selects_calibrated_columns() {
        let m = tiny();
        let r = fit_mixed(&m, &CalibrationConfig::default()).unwrap();
        let (sub, params) = r.aligned(&m).unwrap();
        assert_eq!(sub.item_ids(), &["e1", "e2", "s1"]);
        assert_eq!(params.len(), 3);
    }
}
