//! Per-question aggregates, Pearson correlation tables, rater agreement and
//! rating-dispersion profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::calibration::CalibrationResult;
use crate::error::{Error, Result};
use crate::model::{slope_intercept_to_difficulty, Difficulty, ItemKind, ItemParams, ResponseMatrix};

pub const MIN_PAIRS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opinion {
    Reasonable,
    TooEasy,
    Complicated,
    Ambiguous,
}

impl Opinion {
    pub const ALL: [Opinion; 4] = [Opinion::Reasonable, Opinion::TooEasy, Opinion::Complicated, Opinion::Ambiguous];

    pub fn as_str(self) -> &'static str {
        match self {
            Opinion::Reasonable => "reasonable",
            Opinion::TooEasy => "too_easy",
            Opinion::Complicated => "complicated",
            Opinion::Ambiguous => "ambiguous",
        }
    }

    /// Wording shown on the form.
    pub fn label(self) -> &'static str {
        match self {
            Opinion::TooEasy => "too easy",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Opinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Opinion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Opinion::ALL
            .into_iter()
            .find(|o| o.as_str() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown opinion {s:?}")))
    }
}

/// Numeric suffix shared by `exam_7`, `assess_7` and `opinion_7`.
pub fn question_number(id: &str) -> Option<u32> {
    id.rsplit_once('_').and_then(|(_, n)| n.parse().ok())
}

/// Free-text and opinion answers, one entry per person and question.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpinionSheet {
    pub entries: Vec<OpinionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionEntry {
    pub person_id: String,
    pub question: u32,
    pub opinion: Option<Opinion>,
    pub comment: Option<String>,
    pub alternative: Option<String>,
}

impl OpinionSheet {
    pub fn counts(&self) -> BTreeMap<u32, [usize; 4]> {
        let mut out: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
        for e in &self.entries {
            if let Some(o) = e.opinion {
                out.entry(e.question).or_default()[o as usize] += 1;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemAggregate {
    pub question: u32,
    pub exam_item: Option<String>,
    pub assess_item: Option<String>,
    pub mean_exam_score: Option<f64>,
    pub mean_assessment: Option<f64>,
    pub n_opinions: usize,
    /// Reasonable, too easy, complicated, ambiguous.
    pub opinion_proportions: Option<[f64; 4]>,
    pub difficulty: Option<f64>,
    pub difficulty_unstable: bool,
    pub discrimination: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedQuestion {
    pub question: u32,
    pub reason: String,
}

fn column_mean(matrix: &ResponseMatrix, item: usize) -> Option<f64> {
    let values: Vec<f64> = matrix.column(item).flatten().map(f64::from).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// One aggregate per question number found among `exam_*`, `assess_*` and
/// opinion entries. Questions without any exam, assessment or opinion
/// response are excluded.
pub fn aggregate_items(
    matrix: &ResponseMatrix,
    opinions: &OpinionSheet,
    calibration: &CalibrationResult,
) -> (Vec<ItemAggregate>, Vec<ExcludedQuestion>) {
    let mut exam: BTreeMap<u32, usize> = BTreeMap::new();
    let mut assess: BTreeMap<u32, usize> = BTreeMap::new();
    for (j, id) in matrix.item_ids().iter().enumerate() {
        let Some(q) = question_number(id) else { continue };
        match matrix.kind(j) {
            ItemKind::Dichotomous => exam.insert(q, j),
            ItemKind::Graded { .. } => assess.insert(q, j),
        };
    }
    let counts = opinions.counts();
    let mut questions: Vec<u32> = exam.keys().chain(assess.keys()).chain(counts.keys()).copied().collect();
    questions.sort_unstable();
    questions.dedup();

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for q in questions {
        let mean_exam_score = exam.get(&q).and_then(|&j| column_mean(matrix, j));
        let mean_assessment = assess.get(&q).and_then(|&j| column_mean(matrix, j));
        let c = counts.get(&q).copied().unwrap_or_default();
        let n_opinions: usize = c.iter().sum();
        if mean_exam_score.is_none() && mean_assessment.is_none() && n_opinions == 0 {
            excluded.push(ExcludedQuestion {
                question: q,
                reason: "no responses".into(),
            });
            continue;
        }
        let opinion_proportions =
            (n_opinions > 0).then(|| c.map(|k| k as f64 / n_opinions as f64));
        let exam_item = exam.get(&q).map(|&j| matrix.item_ids()[j].clone());
        let calibrated = exam_item.as_deref().and_then(|id| calibration.item(id));
        let (difficulty, difficulty_unstable, discrimination) = match calibrated.map(|c| &c.params) {
            Some(ItemParams::Dichotomous(p)) => match slope_intercept_to_difficulty(p.a, p.d) {
                Difficulty::Value(b) => (Some(b), false, Some(p.a)),
                Difficulty::Unstable => (None, true, Some(p.a)),
            },
            _ => (None, false, None),
        };
        rows.push(ItemAggregate {
            question: q,
            exam_item,
            assess_item: assess.get(&q).map(|&j| matrix.item_ids()[j].clone()),
            mean_exam_score,
            mean_assessment,
            n_opinions,
            opinion_proportions,
            difficulty,
            difficulty_unstable,
            discrimination,
        });
    }
    (rows, excluded)
}

/// Column names in heatmap order.
pub const HEATMAP_COLUMNS: [&str; 8] = [
    "avg_assessment",
    "avg_exam_score",
    "difficulty",
    "discrimination",
    "is_reasonable",
    "is_too_easy",
    "is_complicated",
    "is_ambiguous",
];

pub fn heatmap_columns(aggregates: &[ItemAggregate]) -> Vec<(String, Vec<Option<f64>>)> {
    let pick = |f: &dyn Fn(&ItemAggregate) -> Option<f64>| aggregates.iter().map(f).collect::<Vec<_>>();
    let prop = |k: usize| pick(&|a: &ItemAggregate| a.opinion_proportions.map(|p| p[k]));
    let cols = vec![
        pick(&|a| a.mean_assessment),
        pick(&|a| a.mean_exam_score),
        pick(&|a| a.difficulty),
        pick(&|a| a.discrimination),
        prop(0),
        prop(1),
        prop(2),
        prop(3),
    ];
    HEATMAP_COLUMNS.iter().map(|s| s.to_string()).zip(cols).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson r over the pairs where both values are present. `None` when
/// fewer than three pairs remain or either side is constant.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Option<Correlation> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len();
    if n < MIN_PAIRS {
        return None;
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return None;
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Some(Correlation {
        r,
        p_value: correlation_p_value(r, n),
        n,
    })
}

/// Two-sided p of `t = r√((n−2)/(1−r²))` on n − 2 degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// `cells[i][j]`; the diagonal is 1 for every usable column.
    pub cells: Vec<Vec<Option<Correlation>>>,
}

impl CorrelationMatrix {
    pub fn r(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j].map(|c| c.r)
    }
}

pub fn pearson_matrix(columns: &[(String, Vec<Option<f64>>)]) -> CorrelationMatrix {
    let k = columns.len();
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let c = pearson(&columns[i].1, &columns[j].1).map(|c| {
                if i == j {
                    Correlation { r: 1.0, p_value: 0.0, ..c }
                } else {
                    c
                }
            });
            cells[i][j] = c;
            cells[j][i] = c;
        }
    }
    CorrelationMatrix {
        names: columns.iter().map(|c| c.0.clone()).collect(),
        cells,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub rater_a: String,
    pub rater_b: String,
    pub proportion: f64,
    pub n_items: usize,
}

/// Share of commonly rated items given the same star value.
pub fn exact_agreement(
    rater_a: &str,
    a: &[Option<u8>],
    rater_b: &str,
    b: &[Option<u8>],
) -> Result<AgreementReport> {
    let common: Vec<(u8, u8)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if common.is_empty() {
        return Err(Error::InsufficientData(format!(
            "raters {rater_a} and {rater_b} share no rated items"
        )));
    }
    let same = common.iter().filter(|(x, y)| x == y).count();
    Ok(AgreementReport {
        rater_a: rater_a.to_string(),
        rater_b: rater_b.to_string(),
        proportion: same as f64 / common.len() as f64,
        n_items: common.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementProfile {
    /// Sample SD of star ratings per item; `None` with fewer than 2 raters.
    pub dispersion: Vec<Option<f64>>,
    pub features: Vec<(String, Option<Correlation>)>,
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// `ratings[item]` holds every rater's stars for that item.
pub fn disagreement_profile(
    ratings: &[Vec<Option<u8>>],
    features: &[(String, Vec<Option<f64>>)],
) -> Result<DisagreementProfile> {
    if let Some((name, _)) = features.iter().find(|(_, v)| v.len() != ratings.len()) {
        return Err(Error::InvalidInput(format!(
            "feature {name} has a different item count than the ratings"
        )));
    }
    let dispersion: Vec<Option<f64>> = ratings
        .iter()
        .map(|r| sample_sd(&r.iter().flatten().map(|&v| f64::from(v)).collect::<Vec<_>>()))
        .collect();
    let features = features
        .iter()
        .map(|(name, col)| (name.clone(), pearson(&dispersion, col)))
        .collect();
    Ok(DisagreementProfile { dispersion, features })
}
