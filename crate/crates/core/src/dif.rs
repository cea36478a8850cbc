//! Uniform DIF screening by logistic regression of each dichotomous item on
//! ability and a two-level group indicator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{log_logistic, ItemKind, ItemParams, ResponseMatrix};
use crate::quadrature::QuadratureGrid;
use crate::scoring::eap_scores;

/// |β₂| beyond this is treated as (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 15.0;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Low,
    High,
}

impl Group {
    pub fn swapped(self) -> Self {
        match self {
            Group::Low => Group::High,
            Group::High => Group::Low,
        }
    }

    // ±½ keeps swapped labels an exact sign flip of β₂
    fn code(self) -> f64 {
        match self {
            Group::Low => -0.5,
            Group::High => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "labels")]
pub enum Grouping {
    MedianSplit,
    External(Vec<Group>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifConfig {
    pub delta_flag_threshold: f64,
    pub alpha: f64,
    pub grouping: Grouping,
}

impl Default for DifConfig {
    fn default() -> Self {
        Self {
            delta_flag_threshold: 0.6,
            alpha: 0.05,
            grouping: Grouping::MedianSplit,
        }
    }
}

impl DifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_flag_threshold > 0.0 && self.delta_flag_threshold.is_finite()) {
            return Err(Error::InvalidInput("DIF flag threshold must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Ties at the median go low. The median of an even count is the mean of
/// the two middle values.
pub fn median_split(theta: &[f64]) -> Result<Vec<Group>> {
    if theta.len() < 4 {
        return Err(Error::DegenerateGrouping(format!(
            "median split needs at least 4 persons, got {}",
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("non-finite ability estimate".into()));
    }
    let mut sorted = theta.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let groups: Vec<Group> = theta
        .iter()
        .map(|&t| if t > median { Group::High } else { Group::Low })
        .collect();
    if !groups.contains(&Group::High) {
        return Err(Error::DegenerateGrouping("all abilities equal the median".into()));
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hessian_singular: bool,
}

fn log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi > 0.5 { log_logistic(e) } else { log_logistic(-e) })
        .sum()
}

/// Maximum-likelihood logistic regression by Newton–Raphson with step
/// halving. `x` includes the intercept column.
pub fn logistic_regression(x: &DMatrix<f64>, y: &[f64]) -> LogisticFit {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(x, y, &beta);
    let mut converged = false;
    let mut singular = false;
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let eta = x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| crate::model::logistic(e)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&mu).map(|(yi, m)| yi - m));
        let grad = x.transpose() * resid;
        let mut info = DMatrix::zeros(p, p);
        for (i, m) in mu.iter().enumerate() {
            let w = m * (1.0 - m);
            let row = x.row(i);
            info += w * row.transpose() * row;
        }
        let Some(chol) = info.cholesky() else {
            singular = true;
            break;
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &beta + scale * &step;
            let trial_ll = log_likelihood(x, y, &trial);
            if trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        // no ascent left counts as converged
        if !accepted || scale * step.amax() < NEWTON_TOLERANCE {
            converged = true;
            break;
        }
    }
    let mut info = DMatrix::zeros(p, p);
    let eta = x * &beta;
    for (i, &e) in eta.iter().enumerate() {
        let m = crate::model::logistic(e);
        let row = x.row(i);
        info += m * (1.0 - m) * row.transpose() * row;
    }
    let cov = info.clone().cholesky().map(|c| c.inverse());
    if cov.is_none() {
        singular = true;
    }
    let standard_errors = match cov {
        Some(c) => (0..p).map(|j| c[(j, j)].max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; p],
    };
    LogisticFit {
        beta: beta.iter().copied().collect(),
        standard_errors,
        log_likelihood: ll,
        iterations,
        converged,
        hessian_singular: singular,
    }
}

/// Two-sided p-value of `z` against the standard normal.
pub fn wald_p_value(z: f64) -> f64 {
    if z.is_nan() {
        return 1.0;
    }
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifRow {
    pub item_id: String,
    pub delta_log_odds: f64,
    pub standard_error: Option<f64>,
    pub wald_p_value: f64,
    pub flagged: bool,
    pub separation_detected: bool,
    pub n_low: usize,
    pub n_high: usize,
    pub log_likelihood: f64,
    /// Fit on θ alone (β₂ = 0).
    pub null_log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifReport {
    /// Sorted by |Δ| descending.
    pub rows: Vec<DifRow>,
    pub skipped: Vec<SkippedItem>,
    pub delta_flag_threshold: f64,
    pub alpha: f64,
    pub grouping: String,
    pub n_low: usize,
    pub n_high: usize,
}

impl DifReport {
    pub fn flagged(&self) -> impl Iterator<Item = &DifRow> {
        self.rows.iter().filter(|r| r.flagged)
    }
}

/// Fits `logit P = β₀ + β₁θ + β₂·group` over the persons who answered.
/// `Err` carries the reason the item is skipped.
pub fn uniform_dif(
    item_id: &str,
    responses: &[Option<u8>],
    theta: &[f64],
    groups: &[Group],
    config: &DifConfig,
) -> std::result::Result<DifRow, String> {
    let idx: Vec<usize> = (0..responses.len()).filter(|&i| responses[i].is_some()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| f64::from(responses[i].unwrap())).collect();
    if y.is_empty() || y.iter().all(|&v| v == y[0]) {
        return Err("zero variance".into());
    }
    let n_high = idx.iter().filter(|&&i| groups[i] == Group::High).count();
    let n_low = idx.len() - n_high;
    if n_high == 0 || n_low == 0 {
        return Err("one group has no responses".into());
    }
    let mean = idx.iter().map(|&i| theta[i]).sum::<f64>() / idx.len() as f64;
    let full = DMatrix::from_fn(idx.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => theta[idx[r]] - mean,
        _ => groups[idx[r]].code(),
    });
    let fit = logistic_regression(&full, &y);
    let null = logistic_regression(&full.columns(0, 2).into_owned(), &y);
    let delta = fit.beta[2];
    let se = fit.standard_errors[2];
    let p = if se.is_finite() && se > 0.0 { wald_p_value(delta / se) } else { 1.0 };
    let separation = delta.abs() > SEPARATION_BOUND || !fit.converged || fit.hessian_singular;
    Ok(DifRow {
        item_id: item_id.to_string(),
        delta_log_odds: delta,
        standard_error: se.is_finite().then_some(se),
        wald_p_value: p,
        flagged: delta.abs() > config.delta_flag_threshold && p < config.alpha,
        separation_detected: separation,
        n_low,
        n_high,
        log_likelihood: fit.log_likelihood,
        null_log_likelihood: null.log_likelihood,
    })
}

/// Screens every dichotomous item. θ is the EAP score under `params`,
/// which must align with the matrix columns.
pub fn run_dif_screen(
    matrix: &ResponseMatrix,
    params: &[ItemParams],
    grid: &QuadratureGrid,
    config: &DifConfig,
) -> Result<DifReport> {
    config.validate()?;
    let theta: Vec<f64> = eap_scores(matrix, params, grid)?.iter().map(|s| s.theta_eap).collect();
    let (groups, grouping) = match &config.grouping {
        Grouping::MedianSplit => (median_split(&theta)?, "median split of EAP theta".to_string()),
        Grouping::External(labels) => {
            if labels.len() != matrix.n_persons() {
                return Err(Error::InvalidInput(format!(
                    "{} group labels for {} persons",
                    labels.len(),
                    matrix.n_persons()
                )));
            }
            if !labels.contains(&Group::High) || !labels.contains(&Group::Low) {
                return Err(Error::DegenerateGrouping("external labels use a single group".into()));
            }
            (labels.clone(), "external labels".to_string())
        }
    };
    let outcomes: Vec<(String, std::result::Result<DifRow, String>)> = (0..matrix.n_items())
        .into_par_iter()
        .filter(|&j| matrix.kind(j) == ItemKind::Dichotomous)
        .map(|j| {
            let id = &matrix.item_ids()[j];
            let col: Vec<Option<u8>> = matrix.column(j).collect();
            (id.clone(), uniform_dif(id, &col, &theta, &groups, config))
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (item_id, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(reason) => skipped.push(SkippedItem { item_id, reason }),
        }
    }
    rows.sort_by(|a, b| b.delta_log_odds.abs().total_cmp(&a.delta_log_odds.abs()));
    let n_high = groups.iter().filter(|g| **g == Group::High).count();
    Ok(DifReport {
        rows,
        skipped,
        delta_flag_threshold: config.delta_flag_threshold,
        alpha: config.alpha,
        grouping,
        n_low: groups.len() - n_high,
        n_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_split_examples() {
        use Group::*;
        assert_eq!(median_split(&[-1.0, 0.0, 1.0, 2.0]).unwrap(), vec![Low, Low, High, High]);
        assert_eq!(median_split(&[0.0, 0.0, 0.0, 1.0]).unwrap(), vec![Low, Low, Low, High]);
        assert!(matches!(median_split(&[0.3; 5]), Err(Error::DegenerateGrouping(_))));
        assert!(median_split(&[0.0, 1.0, 2.0]).is_err());
    }

    fn split_counts(theta: &[f64]) -> (usize, usize, usize) {
        let g = median_split(theta).unwrap();
        let mut sorted = theta.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[theta.len() / 2];
        let ties = theta.iter().filter(|&&t| t == median).count();
        let high = g.iter().filter(|&&x| x == Group::High).count();
        (theta.len() - high, high, ties)
    }

    #[test]
    fn median_split_sizes_on_continuous_abilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<f64> = (0..45).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let (low, high, ties) = split_counts(&theta);
        assert_eq!(ties, 1);
        assert_eq!((low, high), (23, 22));
        assert!(low.abs_diff(high) <= ties);
    }

    #[test]
    fn median_split_sizes_with_heavy_ties() {
        // ties all go low; with n odd the imbalance is at most 2·ties − 1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let theta: Vec<f64> = (0..45).map(|_| (rng.random::<f64>() * 8.0).round() / 2.0).collect();
            let (low, high, ties) = split_counts(&theta);
            let mut sorted = theta.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(low, theta.iter().filter(|&&t| t <= sorted[22]).count());
            assert!(low.abs_diff(high) < 2 * ties);
        }
    }

    /// Plain Newton on the normal equations without centering or halving.
    fn reference_logistic(x: &[[f64; 2]], y: &[f64]) -> ([f64; 2], f64) {
        let mut b = [0.0, 0.0];
        for _ in 0..100 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, &yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(b[0] * xi[0] + b[1] * xi[1])).exp());
                g0 += (yi - p) * xi[0];
                g1 += (yi - p) * xi[1];
                let w = p * (1.0 - p);
                h00 += w * xi[0] * xi[0];
                h01 += w * xi[0] * xi[1];
                h11 += w * xi[1] * xi[1];
            }
            let det = h00 * h11 - h01 * h01;
            b[0] += (h11 * g0 - h01 * g1) / det;
            b[1] += (h00 * g1 - h01 * g0) / det;
        }
        let ll = x
            .iter()
            .zip(y)
            .map(|(xi, &yi)| {
                let p = 1.0 / (1.0 + (-(b[0] * xi[0] + b[1] * xi[1])).exp());
                yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
            })
            .sum();
        (b, ll)
    }

    #[test]
    fn logistic_regression_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<[f64; 2]> = (0..200).map(|_| [1.0, rng.random::<f64>() * 4.0 - 2.0]).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|x| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-(0.3 + 1.1 * x[1])).exp())))
            .collect();
        let (b, ll) = reference_logistic(&xs, &y);
        let x = DMatrix::from_fn(200, 2, |r, c| xs[r][c]);
        let fit = logistic_regression(&x, &y);
        assert!(fit.converged);
        assert!((fit.beta[0] - b[0]).abs() < 1e-9 && (fit.beta[1] - b[1]).abs() < 1e-9);
        assert!((fit.log_likelihood - ll).abs() < 1e-9);
    }

    fn simulated(n: usize, shift: f64, seed: u64) -> (Vec<Option<u8>>, Vec<f64>, Vec<Group>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<Group> = (0..n).map(|i| if i < n / 2 { Group::Low } else { Group::High }).collect();
        let theta: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(1e-300);
                let v: f64 = rng.random();
                (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect();
        let y = theta
            .iter()
            .zip(&groups)
            .map(|(&t, &g)| {
                let s = if g == Group::High { shift } else { 0.0 };
                Some(u8::from(rng.random::<f64>() < crate::model::logistic(1.2 * t - 0.2 + s)))
            })
            .collect();
        (y, theta, groups)
    }

    #[test]
    fn null_model_equals_fit_on_theta_alone() {
        let (y, theta, groups) = simulated(300, 0.0, 5);
        let row = uniform_dif("x", &y, &theta, &groups, &DifConfig::default()).unwrap();
        let yf: Vec<f64> = y.iter().map(|v| f64::from(v.unwrap())).collect();
        let xs: Vec<[f64; 2]> = theta.iter().map(|&t| [1.0, t]).collect();
        let (_, ll) = reference_logistic(&xs, &yf);
        assert!((row.null_log_likelihood - ll).abs() < 1e-8);
        assert!(row.log_likelihood >= row.null_log_likelihood - 1e-10);
    }

    #[test]
    fn injected_shift_is_recovered() {
        let (y, theta, groups) = simulated(500, 1.0, 8);
        let row = uniform_dif("x", &y, &theta, &groups, &DifConfig::default()).unwrap();
        assert!(row.flagged);
        assert!((row.delta_log_odds - 1.0).abs() < 0.3, "{}", row.delta_log_odds);
        assert!(!row.separation_detected);
    }

    #[test]
    fn separation_is_marked() {
        let theta: Vec<f64> = (0..40).map(|i| i as f64 / 10.0 - 2.0).collect();
        let groups: Vec<Group> = (0..40).map(|i| if i < 20 { Group::Low } else { Group::High }).collect();
        // every high-group person correct, low group mixed
        let y: Vec<Option<u8>> = (0..40).map(|i| Some(u8::from(i >= 20 || i % 3 == 0))).collect();
        let row = uniform_dif("x", &y, &theta, &groups, &DifConfig::default()).unwrap();
        assert!(row.separation_detected);
        assert!(row.wald_p_value >= 0.0 && row.wald_p_value <= 1.0);
    }

    #[test]
    fn zero_variance_item_is_skipped() {
        let theta = vec![-1.0, 0.0, 1.0, 2.0];
        let groups = median_split(&theta).unwrap();
        let y = vec![Some(1), Some(1), None, Some(1)];
        assert_eq!(
            uniform_dif("x", &y, &theta, &groups, &DifConfig::default()).unwrap_err(),
            "zero variance"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = DifConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 1.0;
        assert!(c.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn relabel_negates_and_shift_preserves(seed in 0u64..10_000, shift in -5.0f64..5.0, dif in -1.5f64..1.5) {
            let (y, theta, groups) = simulated(120, dif, seed);
            let cfg = DifConfig::default();
            let base = uniform_dif("x", &y, &theta, &groups, &cfg).unwrap();
            let swapped: Vec<Group> = groups.iter().map(|g| g.swapped()).collect();
            let flipped = uniform_dif("x", &y, &theta, &swapped, &cfg).unwrap();
            prop_assert_eq!(flipped.delta_log_odds, -base.delta_log_odds);
            prop_assert_eq!(flipped.wald_p_value, base.wald_p_value);
            let moved: Vec<f64> = theta.iter().map(|t| t + shift).collect();
            let shifted = uniform_dif("x", &y, &moved, &groups, &cfg).unwrap();
            prop_assert!((shifted.delta_log_odds - base.delta_log_odds).abs() < 1e-8);
            prop_assert!((shifted.wald_p_value - base.wald_p_value).abs() < 1e-8);
        }

        #[test]
        fn flag_implies_threshold_and_significance(seed in 0u64..10_000, dif in -2.0f64..2.0) {
            let (y, theta, groups) = simulated(100, dif, seed);
            let cfg = DifConfig::default();
            if let Ok(r) = uniform_dif("x", &y, &theta, &groups, &cfg) {
                prop_assert!((0.0..=1.0).contains(&r.wald_p_value));
                if r.flagged {
                    prop_assert!(r.delta_log_odds.abs() > 0.6 && r.wald_p_value < 0.05);
                }
            }
        }
    }
}
