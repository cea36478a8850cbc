//! Synthetic response data from known parameters, plus parameter-recovery
//! and DIF-power studies built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_mixed, CalibrationConfig};
use crate::dif::{run_dif_screen, DifConfig, Group, Grouping};
use crate::error::{Error, Result};
use crate::model::{
    category_probs_from_logits, Dichotomous2PL, GradedParams, ItemKind, ItemParams, ResponseMatrix,
};
use crate::quadrature::gauss_hermite_grid;

/// Share of failed replicates above which a study is abandoned.
pub const MAX_FAILED_SHARE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaSpec {
    pub mean: f64,
    pub sd: f64,
    /// Added to the mean of the high group.
    pub high_group_shift: f64,
}

impl Default for ThetaSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sd: 1.0,
            high_group_shift: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum SimParams {
    /// Give either `b` or the intercept `d`.
    #[serde(rename = "2pl")]
    TwoPl {
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<f64>,
    },
    #[serde(rename = "graded")]
    Graded { a: f64, thresholds: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimItem {
    pub id: String,
    #[serde(flatten)]
    pub params: SimParams,
    /// Logit shift applied to the high group.
    #[serde(default)]
    pub dif_shift: f64,
}

impl SimItem {
    pub fn item_params(&self) -> Result<ItemParams> {
        let p = match &self.params {
            SimParams::TwoPl { a, b, d } => match (b, d) {
                (Some(b), None) => ItemParams::Dichotomous(Dichotomous2PL::from_difficulty(*a, *b)),
                (None, Some(d)) => ItemParams::Dichotomous(Dichotomous2PL::from_intercept(*a, *d)),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "2pl item {} needs exactly one of b or d",
                        self.id
                    )))
                }
            },
            SimParams::Graded { a, thresholds } => {
                ItemParams::Graded(GradedParams::with_identity_map(*a, thresholds.clone())?)
            }
        };
        p.validate()?;
        if !self.dif_shift.is_finite() {
            return Err(Error::InvalidParameter(format!("item {} has a non-finite DIF shift", self.id)));
        }
        Ok(p)
    }

    pub fn kind(&self) -> ItemKind {
        match &self.params {
            SimParams::TwoPl { .. } => ItemKind::Dichotomous,
            SimParams::Graded { thresholds, .. } => ItemKind::Graded {
                categories: (thresholds.len() + 1) as u8,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_persons: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta: ThetaSpec,
    pub items: Vec<SimItem>,
}

impl SimSpec {
    pub fn validate(&self) -> Result<Vec<ItemParams>> {
        if self.n_persons == 0 {
            return Err(Error::InvalidInput("n_persons must be at least 1".into()));
        }
        if self.items.is_empty() {
            return Err(Error::InvalidInput("spec has no items".into()));
        }
        if !(self.theta.sd > 0.0 && self.theta.mean.is_finite() && self.theta.high_group_shift.is_finite()) {
            return Err(Error::InvalidInput("theta needs finite mean/shift and sd > 0".into()));
        }
        self.items.iter().map(SimItem::item_params).collect()
    }

    /// First half of the persons (by index) is low, the rest high.
    pub fn groups(&self) -> Vec<Group> {
        (0..self.n_persons)
            .map(|i| if i < self.n_persons / 2 { Group::Low } else { Group::High })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub matrix: ResponseMatrix,
    pub theta: Vec<f64>,
    pub groups: Vec<Group>,
}

fn draw_category(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn simulate_responses(spec: &SimSpec) -> Result<Simulated> {
    let params = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.groups();
    let theta: Vec<f64> = groups
        .iter()
        .map(|g| {
            let z: f64 = rng.sample(StandardNormal);
            let shift = if *g == Group::High { spec.theta.high_group_shift } else { 0.0 };
            spec.theta.mean + shift + spec.theta.sd * z
        })
        .collect();
    let mut rows = Vec::with_capacity(spec.n_persons);
    let mut probs = Vec::new();
    for (t, g) in theta.iter().zip(&groups) {
        let high = *g == Group::High;
        let row = params
            .iter()
            .zip(&spec.items)
            .map(|(p, item)| {
                let shift = if high { item.dif_shift } else { 0.0 };
                let logits: Vec<f64> = p.intercepts().iter().map(|d| p.slope() * t + d + shift).collect();
                probs.resize(logits.len() + 1, 0.0);
                category_probs_from_logits(&logits, &mut probs);
                let k = draw_category(&mut rng, &probs);
                Some(match item.kind() {
                    ItemKind::Dichotomous => k as u8,
                    ItemKind::Graded { .. } => k as u8 + 1,
                })
            })
            .collect();
        rows.push(row);
    }
    let matrix = ResponseMatrix::new(
        (1..=spec.n_persons).map(|i| format!("sim{i:04}")).collect(),
        spec.items.iter().map(|i| (i.id.clone(), i.kind())).collect(),
        rows,
    )?;
    Ok(Simulated { matrix, theta, groups })
}

/// Sub-seed for replicate `rep`: one splitmix64 output on `seed + rep`.
pub fn replicate_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed.wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecovery {
    pub item_id: String,
    /// `a`, `b`, or `b1..b{K−1}` for graded items.
    pub parameter: String,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_replicates: usize,
    pub n_persons: usize,
    pub parameters: Vec<ParameterRecovery>,
    /// Over every slope estimate in every successful replicate.
    pub rmse_a: f64,
    /// Over every difficulty or threshold estimate.
    pub rmse_b: f64,
    pub failures: Vec<ReplicateFailure>,
}

fn true_difficulties(p: &ItemParams) -> Vec<f64> {
    match p {
        ItemParams::Dichotomous(d) => vec![-d.d / d.a],
        ItemParams::Graded(g) => g.thresholds.clone(),
    }
}

/// Estimated difficulties, or `None` when categories collapsed or `b` is
/// unstable in this replicate.
fn estimated_difficulties(p: &ItemParams, n_true: usize) -> Option<Vec<f64>> {
    match p {
        ItemParams::Dichotomous(d) => d.b.map(|b| vec![b]),
        ItemParams::Graded(g) => (g.thresholds.len() == n_true).then(|| g.thresholds.clone()),
    }
}

fn check_failures(failures: &[ReplicateFailure], n: usize) -> Result<()> {
    if failures.len() as f64 > MAX_FAILED_SHARE * n as f64 {
        return Err(Error::InsufficientData(format!(
            "{} of {n} replicates failed; first: {}",
            failures.len(),
            failures[0].error
        )));
    }
    Ok(())
}

fn replicate_spec(spec: &SimSpec, rep: usize) -> SimSpec {
    SimSpec {
        seed: replicate_seed(spec.seed, rep as u64),
        ..spec.clone()
    }
}

pub fn recovery_study(spec: &SimSpec, config: &CalibrationConfig, n_replicates: usize) -> Result<RecoveryReport> {
    if n_replicates == 0 {
        return Err(Error::InvalidInput("a study needs at least one replicate".into()));
    }
    let truth = spec.validate()?;
    config.validate()?;
    let runs: Vec<std::result::Result<Vec<Option<ItemParams>>, String>> = (0..n_replicates)
        .into_par_iter()
        .map(|rep| {
            let sim = simulate_responses(&replicate_spec(spec, rep)).map_err(|e| e.to_string())?;
            let fit = fit_mixed(&sim.matrix, config).map_err(|e| e.to_string())?;
            Ok(spec.items.iter().map(|i| fit.item(&i.id).map(|c| c.params.clone())).collect())
        })
        .collect();

    // per item: (slope errors, difficulty errors per threshold)
    let mut slope_est: Vec<Vec<f64>> = vec![Vec::new(); truth.len()];
    let mut diff_est: Vec<Vec<Vec<f64>>> = truth.iter().map(|p| vec![Vec::new(); true_difficulties(p).len()]).collect();
    let mut failures = Vec::new();
    for (rep, run) in runs.into_iter().enumerate() {
        match run {
            Err(error) => failures.push(ReplicateFailure { replicate: rep, error }),
            Ok(estimates) => {
                for (j, est) in estimates.iter().enumerate() {
                    let Some(est) = est else { continue };
                    slope_est[j].push(est.slope());
                    if let Some(bs) = estimated_difficulties(est, diff_est[j].len()) {
                        for (k, b) in bs.into_iter().enumerate() {
                            diff_est[j][k].push(b);
                        }
                    }
                }
            }
        }
    }
    check_failures(&failures, n_replicates)?;

    let summarize = |item_id: &str, parameter: String, true_value: f64, est: &[f64]| {
        let n = est.len();
        let nf = n.max(1) as f64;
        let mean_estimate = est.iter().sum::<f64>() / nf;
        let mse = est.iter().map(|e| (e - true_value).powi(2)).sum::<f64>() / nf;
        ParameterRecovery {
            item_id: item_id.to_string(),
            parameter,
            true_value,
            mean_estimate: if n > 0 { mean_estimate } else { f64::NAN },
            bias: if n > 0 { mean_estimate - true_value } else { f64::NAN },
            rmse: if n > 0 { mse.sqrt() } else { f64::NAN },
            n,
        }
    };
    let mut parameters = Vec::new();
    let (mut sq_a, mut n_a, mut sq_b, mut n_b) = (0.0, 0usize, 0.0, 0usize);
    for (j, (item, p)) in spec.items.iter().zip(&truth).enumerate() {
        let a = p.slope();
        sq_a += slope_est[j].iter().map(|e| (e - a).powi(2)).sum::<f64>();
        n_a += slope_est[j].len();
        parameters.push(summarize(&item.id, "a".into(), a, &slope_est[j]));
        let bs = true_difficulties(p);
        let single = bs.len() == 1 && matches!(p, ItemParams::Dichotomous(_));
        for (k, b) in bs.iter().enumerate() {
            sq_b += diff_est[j][k].iter().map(|e| (e - b).powi(2)).sum::<f64>();
            n_b += diff_est[j][k].len();
            let name = if single { "b".to_string() } else { format!("b{}", k + 1) };
            parameters.push(summarize(&item.id, name, *b, &diff_est[j][k]));
        }
    }
    let rms = |s: f64, n: usize| if n > 0 { (s / n as f64).sqrt() } else { f64::NAN };
    Ok(RecoveryReport {
        n_replicates,
        n_persons: spec.n_persons,
        parameters,
        rmse_a: rms(sq_a, n_a),
        rmse_b: rms(sq_b, n_b),
        failures,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyGrouping {
    /// The index-based groups used to inject DIF.
    #[default]
    Simulated,
    MedianSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifItemRate {
    pub item_id: String,
    pub true_shift: f64,
    pub flag_rate: f64,
    /// Share of replicates where this item had the largest |Δ|.
    pub max_abs_delta_rate: f64,
    pub mean_delta: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifPowerReport {
    pub n_replicates: usize,
    pub n_persons: usize,
    pub grouping: StudyGrouping,
    pub per_item: Vec<DifItemRate>,
    /// Mean flag rate over items with a nonzero shift.
    pub detection_rate: Option<f64>,
    /// Largest flag rate over items without a shift.
    pub false_flag_rate: Option<f64>,
    pub failures: Vec<ReplicateFailure>,
}

struct DifReplicate {
    // per simulated item: (delta, flagged) when screened
    rows: Vec<Option<(f64, bool)>>,
    top: Option<usize>,
}

pub fn dif_power_study(
    spec: &SimSpec,
    calibration: &CalibrationConfig,
    dif: &DifConfig,
    grouping: StudyGrouping,
    n_replicates: usize,
) -> Result<DifPowerReport> {
    if n_replicates == 0 {
        return Err(Error::InvalidInput("a study needs at least one replicate".into()));
    }
    spec.validate()?;
    calibration.validate()?;
    dif.validate()?;
    let grid = gauss_hermite_grid(calibration.n_quadrature)?;
    let runs: Vec<std::result::Result<DifReplicate, String>> = (0..n_replicates)
        .into_par_iter()
        .map(|rep| {
            let sim = simulate_responses(&replicate_spec(spec, rep)).map_err(|e| e.to_string())?;
            let fit = fit_mixed(&sim.matrix, calibration).map_err(|e| e.to_string())?;
            let (matrix, params) = fit.aligned(&sim.matrix).map_err(|e| e.to_string())?;
            let cfg = DifConfig {
                grouping: match grouping {
                    StudyGrouping::Simulated => Grouping::External(sim.groups.clone()),
                    StudyGrouping::MedianSplit => Grouping::MedianSplit,
                },
                ..dif.clone()
            };
            let report = run_dif_screen(&matrix, &params, &grid, &cfg).map_err(|e| e.to_string())?;
            let rows = spec
                .items
                .iter()
                .map(|i| {
                    report
                        .rows
                        .iter()
                        .find(|r| r.item_id == i.id)
                        .map(|r| (r.delta_log_odds, r.flagged))
                })
                .collect();
            let top = report
                .rows
                .first()
                .and_then(|r| spec.items.iter().position(|i| i.id == r.item_id));
            Ok(DifReplicate { rows, top })
        })
        .collect();

    let k = spec.items.len();
    let (mut flags, mut tops, mut sums, mut counts) = (vec![0usize; k], vec![0usize; k], vec![0.0; k], vec![0usize; k]);
    let mut failures = Vec::new();
    let mut ok = 0usize;
    for (rep, run) in runs.into_iter().enumerate() {
        match run {
            Err(error) => failures.push(ReplicateFailure { replicate: rep, error }),
            Ok(r) => {
                ok += 1;
                for (j, row) in r.rows.iter().enumerate() {
                    if let Some((delta, flagged)) = row {
                        counts[j] += 1;
                        sums[j] += delta;
                        flags[j] += usize::from(*flagged);
                    }
                }
                if let Some(t) = r.top {
                    tops[t] += 1;
                }
            }
        }
    }
    check_failures(&failures, n_replicates)?;
    let okf = ok.max(1) as f64;
    let per_item: Vec<DifItemRate> = spec
        .items
        .iter()
        .enumerate()
        .filter(|(_, i)| i.kind() == ItemKind::Dichotomous)
        .map(|(j, i)| DifItemRate {
            item_id: i.id.clone(),
            true_shift: i.dif_shift,
            flag_rate: flags[j] as f64 / okf,
            max_abs_delta_rate: tops[j] as f64 / okf,
            mean_delta: if counts[j] > 0 { sums[j] / counts[j] as f64 } else { f64::NAN },
            n: counts[j],
        })
        .collect();
    let injected: Vec<f64> = per_item.iter().filter(|r| r.true_shift != 0.0).map(|r| r.flag_rate).collect();
    let null_max = per_item
        .iter()
        .filter(|r| r.true_shift == 0.0)
        .map(|r| r.flag_rate)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(DifPowerReport {
        n_replicates,
        n_persons: spec.n_persons,
        grouping,
        detection_rate: (!injected.is_empty()).then(|| injected.iter().sum::<f64>() / injected.len() as f64),
        false_flag_rate: null_max,
        per_item,
        failures,
    })
}

/// Evenly spread 2PL items with `a ∈ [a_lo, a_hi]`, `b ∈ [b_lo, b_hi]`.
pub fn spread_2pl_items(n: usize, a_range: (f64, f64), b_range: (f64, f64)) -> Vec<SimItem> {
    (0..n)
        .map(|j| {
            let t = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.5 };
            // different strides so a and b are not perfectly correlated
            let ta = (j * 7 % n.max(1)) as f64 / (n.max(2) - 1) as f64;
            SimItem {
                id: format!("item_{:02}", j + 1),
                params: SimParams::TwoPl {
                    a: a_range.0 + (a_range.1 - a_range.0) * ta.min(1.0),
                    b: Some(b_range.0 + (b_range.1 - b_range.0) * t),
                    d: None,
                },
                dif_shift: 0.0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logistic;

    fn spec_with(items: Vec<SimItem>, n: usize, seed: u64) -> SimSpec {
        SimSpec {
            n_persons: n,
            seed,
            theta: ThetaSpec::default(),
            items,
        }
    }

    fn two_pl(id: &str, a: f64, b: f64) -> SimItem {
        SimItem {
            id: id.into(),
            params: SimParams::TwoPl { a, b: Some(b), d: None },
            dif_shift: 0.0,
        }
    }

    #[test]
    fn flat_item_matches_intercept() {
        let item = SimItem {
            id: "flat".into(),
            params: SimParams::TwoPl { a: 0.0, b: None, d: Some(0.8) },
            dif_shift: 0.0,
        };
        let sim = simulate_responses(&spec_with(vec![item], 4000, 1)).unwrap();
        let n = 4000.0;
        let p_hat = sim.matrix.value_counts(0)[1] as f64 / n;
        let p = logistic(0.8);
        assert!((p_hat - p).abs() < 3.0 * (p * (1.0 - p) / n).sqrt());
    }

    #[test]
    fn easy_item_mostly_correct() {
        let sim = simulate_responses(&spec_with(vec![two_pl("e", 2.0, -3.0)], 1000, 2)).unwrap();
        let p_hat = sim.matrix.value_counts(0)[1] as f64 / 1000.0;
        // ∫ logistic(2(θ + 3)) dΦ on a fine rule
        let g = gauss_hermite_grid(60).unwrap();
        let p = g.integrate(|t| logistic(2.0 * (t + 3.0)));
        assert!(p > 0.9 && p_hat > 0.9);
        assert!((p_hat - p).abs() < 3.0 * (p * (1.0 - p) / 1000.0).sqrt());
    }

    #[test]
    fn same_seed_same_matrix() {
        let items = spread_2pl_items(5, (0.5, 2.0), (-2.0, 2.0));
        let a = simulate_responses(&spec_with(items.clone(), 50, 9)).unwrap();
        let b = simulate_responses(&spec_with(items.clone(), 50, 9)).unwrap();
        let c = simulate_responses(&spec_with(items, 50, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn frequencies_match_model_in_theta_bins() {
        let graded = SimItem {
            id: "g".into(),
            params: SimParams::Graded { a: 1.4, thresholds: vec![-1.0, 0.0, 1.2] },
            dif_shift: 0.0,
        };
        let spec = spec_with(vec![two_pl("x", 1.3, 0.4), graded], 20_000, 4);
        let sim = simulate_responses(&spec).unwrap();
        let params = spec.validate().unwrap();
        for lo in [-2.0, -1.0, 0.0, 1.0] {
            let members: Vec<usize> = (0..sim.theta.len()).filter(|&i| sim.theta[i] >= lo && sim.theta[i] < lo + 1.0).collect();
            assert!(members.len() >= 200);
            let m = members.len() as f64;
            for (j, p) in params.iter().enumerate() {
                for k in 0..p.n_modeled() {
                    let value = if j == 0 { k as u8 } else { k as u8 + 1 };
                    let observed = members.iter().filter(|&&i| sim.matrix.get(i, j) == Some(value)).count() as f64 / m;
                    let expected = members.iter().map(|&i| p.category_probs(sim.theta[i])[k]).sum::<f64>() / m;
                    let se = (expected * (1.0 - expected) / m).sqrt();
                    assert!((observed - expected).abs() <= 3.0 * se + 1e-12, "item {j} cat {k} bin {lo}");
                }
            }
        }
    }

    #[test]
    fn groups_split_by_index_and_shift_applies() {
        let mut item = two_pl("x", 1.0, 0.0);
        item.dif_shift = 2.0;
        let sim = simulate_responses(&spec_with(vec![item], 4000, 5)).unwrap();
        assert_eq!(sim.groups[1999], Group::Low);
        assert_eq!(sim.groups[2000], Group::High);
        let rate = |range: std::ops::Range<usize>| range.clone().filter(|&i| sim.matrix.get(i, 0) == Some(1)).count() as f64 / range.len() as f64;
        assert!(rate(2000..4000) - rate(0..2000) > 0.25);
    }

    #[test]
    fn zero_replicates_rejected() {
        let spec = spec_with(spread_2pl_items(3, (1.0, 1.0), (0.0, 1.0)), 20, 1);
        assert!(matches!(
            recovery_study(&spec, &CalibrationConfig::default(), 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"n_persons": 10, "seed": 3, "items": [
            {"id": "e1", "model": "2pl", "a": 1.2, "b": -0.5, "dif_shift": 1.0},
            {"id": "s1", "model": "graded", "a": 0.9, "thresholds": [-1.0, 0.5]}
        ]}"#;
        let spec: SimSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.theta, ThetaSpec::default());
        assert_eq!(spec.items[1].kind(), ItemKind::Graded { categories: 3 });
        let back: SimSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = SimSpec { n_persons: 0, ..spec };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn small_recovery_runs() {
        let spec = spec_with(spread_2pl_items(25, (0.6, 2.0), (-1.5, 1.5)), 50, 21);
        let r = recovery_study(&spec, &CalibrationConfig::default(), 4).unwrap();
        assert!(r.rmse_a.is_finite() && r.rmse_b.is_finite());
        assert_eq!(r.parameters.len(), 50);
    }
}
