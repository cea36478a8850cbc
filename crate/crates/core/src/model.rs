//! Item response functions, parameter containers and the response matrix.
//!
//! Every item is modeled on the logit scale (no 1.702 scaling constant).
//! Dichotomous items follow the two-parameter logistic model
//! `P(x = 1 | θ) = logistic(a(θ − b)) = logistic(aθ + d)` and graded items
//! use cumulative logits `P(X ≥ j + 1 | θ) = logistic(a(θ − b_j))`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this slope magnitude `b = −d/a` is reported as unstable.
pub const SLOPE_EPSILON: f64 = 1e-6;

/// Items need at least this many non-absent cells to survive screening.
pub const MIN_RESPONSES: usize = 2;

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln logistic(x)` without cancellation for large |x|.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Fills `out` (length `logits.len() + 1`) with category probabilities from
/// decreasing cumulative logits `η_1 > η_2 > …`, where
/// `P(X ≥ j + 1) = logistic(η_j)`.
///
/// Each difference is taken on whichever tail keeps it away from 1, so
/// small category probabilities do not cancel to zero.
pub fn category_probs_from_logits(logits: &[f64], out: &mut [f64]) {
    let k = logits.len() + 1;
    debug_assert_eq!(out.len(), k);
    out[0] = logistic(-logits[0]);
    for c in 1..k - 1 {
        let (hi, lo) = (logits[c - 1], logits[c]);
        let p = if lo > 0.0 {
            logistic(-lo) - logistic(-hi)
        } else {
            logistic(hi) - logistic(lo)
        };
        out[c] = p.max(0.0);
    }
    out[k - 1] = logistic(logits[k - 2]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemKind {
    /// Scored 0/1.
    Dichotomous,
    /// Ordinal categories `1..=categories`.
    Graded { categories: u8 },
}

impl ItemKind {
    pub fn accepts(&self, value: u8) -> bool {
        match *self {
            ItemKind::Dichotomous => value <= 1,
            ItemKind::Graded { categories } => (1..=categories).contains(&value),
        }
    }

    pub fn n_categories(&self) -> usize {
        match *self {
            ItemKind::Dichotomous => 2,
            ItemKind::Graded { categories } => categories as usize,
        }
    }
}

/// Persons × items grid of responses; `None` marks an absent cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDocument", into = "MatrixDocument")]
pub struct ResponseMatrix {
    person_ids: Vec<String>,
    item_ids: Vec<String>,
    kinds: Vec<ItemKind>,
    // row-major, persons × items
    cells: Vec<Option<u8>>,
}

impl ResponseMatrix {
    pub fn new(
        person_ids: Vec<String>,
        items: Vec<(String, ItemKind)>,
        rows: Vec<Vec<Option<u8>>>,
    ) -> Result<Self> {
        if rows.len() != person_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} person ids but {} response rows",
                person_ids.len(),
                rows.len()
            )));
        }
        ensure_unique("person", &person_ids)?;
        let (item_ids, kinds): (Vec<String>, Vec<ItemKind>) = items.into_iter().unzip();
        ensure_unique("item", &item_ids)?;
        for (id, kind) in item_ids.iter().zip(&kinds) {
            if let ItemKind::Graded { categories } = kind {
                if *categories < 2 {
                    return Err(Error::InvalidInput(format!(
                        "graded item {id} needs at least 2 categories"
                    )));
                }
            }
        }
        let n_items = item_ids.len();
        let mut cells = Vec::with_capacity(rows.len() * n_items);
        for (p, row) in rows.into_iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::InvalidInput(format!(
                    "row for person {} has {} cells, expected {n_items}",
                    person_ids[p],
                    row.len()
                )));
            }
            for (j, cell) in row.into_iter().enumerate() {
                if let Some(v) = cell {
                    if !kinds[j].accepts(v) {
                        return Err(Error::InvalidInput(format!(
                            "person {} item {}: response {v} outside the item's range",
                            person_ids[p], item_ids[j]
                        )));
                    }
                }
                cells.push(cell);
            }
        }
        Ok(Self {
            person_ids,
            item_ids,
            kinds,
            cells,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_persons() == 0 || self.n_items() == 0
    }

    pub fn person_ids(&self) -> &[String] {
        &self.person_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn kinds(&self) -> &[ItemKind] {
        &self.kinds
    }

    pub fn kind(&self, item: usize) -> ItemKind {
        self.kinds[item]
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|x| x == id)
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> Option<u8> {
        self.cells[person * self.n_items() + item]
    }

    pub fn row(&self, person: usize) -> &[Option<u8>] {
        let n = self.n_items();
        &self.cells[person * n..(person + 1) * n]
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = Option<u8>> + '_ {
        (0..self.n_persons()).map(move |p| self.get(p, item))
    }

    /// Submatrix with the given item columns, in the given order.
    pub fn select_items(&self, items: &[usize]) -> ResponseMatrix {
        let rows = (0..self.n_persons())
            .map(|p| items.iter().map(|&j| self.get(p, j)).collect())
            .collect();
        let kinds = items
            .iter()
            .map(|&j| (self.item_ids[j].clone(), self.kinds[j]))
            .collect();
        ResponseMatrix::new(self.person_ids.clone(), kinds, rows)
            .expect("a column subset of a valid matrix is valid")
    }

    /// Submatrix with the given person rows, in the given order.
    pub fn select_persons(&self, persons: &[usize]) -> Result<ResponseMatrix> {
        let ids = persons.iter().map(|&p| self.person_ids[p].clone()).collect();
        let rows = persons.iter().map(|&p| self.row(p).to_vec()).collect();
        let items = self
            .item_ids
            .iter()
            .cloned()
            .zip(self.kinds.iter().copied())
            .collect();
        ResponseMatrix::new(ids, items, rows)
    }

    /// Counts of each observed value (index = value) for one item.
    pub fn value_counts(&self, item: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.kinds[item].n_categories() + 1];
        for v in self.column(item).flatten() {
            counts[v as usize] += 1;
        }
        counts
    }

    pub fn n_answered(&self, person: usize) -> usize {
        self.row(person).iter().filter(|c| c.is_some()).count()
    }
}

fn ensure_unique(what: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MatrixItem {
    id: String,
    #[serde(flatten)]
    kind: ItemKind,
}

#[derive(Serialize, Deserialize)]
struct MatrixRow {
    id: String,
    responses: Vec<Option<u8>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixDocument {
    items: Vec<MatrixItem>,
    persons: Vec<MatrixRow>,
}

impl TryFrom<MatrixDocument> for ResponseMatrix {
    type Error = Error;

    fn try_from(doc: MatrixDocument) -> Result<Self> {
        let items = doc.items.into_iter().map(|i| (i.id, i.kind)).collect();
        let (ids, rows) = doc.persons.into_iter().map(|r| (r.id, r.responses)).unzip();
        ResponseMatrix::new(ids, items, rows)
    }
}

impl From<ResponseMatrix> for MatrixDocument {
    fn from(m: ResponseMatrix) -> Self {
        let persons = (0..m.n_persons())
            .map(|p| MatrixRow {
                id: m.person_ids[p].clone(),
                responses: m.row(p).to_vec(),
            })
            .collect();
        let items = m
            .item_ids
            .into_iter()
            .zip(m.kinds)
            .map(|(id, kind)| MatrixItem { id, kind })
            .collect();
        MatrixDocument { items, persons }
    }
}

/// Difficulty recovered from the slope–intercept form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Difficulty {
    Value(f64),
    /// |a| below [`SLOPE_EPSILON`]; only the intercept is meaningful.
    Unstable,
}

impl Difficulty {
    pub fn value(self) -> Option<f64> {
        match self {
            Difficulty::Value(b) => Some(b),
            Difficulty::Unstable => None,
        }
    }
}

pub fn slope_intercept_to_difficulty(a: f64, d: f64) -> Difficulty {
    if a.abs() < SLOPE_EPSILON || !a.is_finite() || !d.is_finite() {
        Difficulty::Unstable
    } else {
        Difficulty::Value(-d / a)
    }
}

/// Two-parameter logistic item. `d = −a·b` is always stored; `b` is absent
/// when the slope is too flat for it to be meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dichotomous2PL {
    pub a: f64,
    pub b: Option<f64>,
    pub d: f64,
}

impl Dichotomous2PL {
    pub fn from_difficulty(a: f64, b: f64) -> Self {
        Self {
            a,
            b: Some(b),
            d: -(a * b),
        }
    }

    pub fn from_intercept(a: f64, d: f64) -> Self {
        Self {
            a,
            b: slope_intercept_to_difficulty(a, d).value(),
            d,
        }
    }

    #[inline]
    pub fn logit(&self, theta: f64) -> f64 {
        self.a * theta + self.d
    }
}

/// `P(x = 1 | θ)` for a 2PL item.
#[inline]
pub fn icc_2pl(theta: f64, params: &Dichotomous2PL) -> f64 {
    logistic(params.logit(theta))
}

/// Graded-response item over `thresholds.len() + 1` modeled categories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradedParams {
    pub a: f64,
    pub thresholds: Vec<f64>,
    /// `category_map[c − 1]` is the modeled category (1-based) of observed
    /// category `c`. Unobserved categories share a neighbour's slot.
    pub category_map: Vec<u8>,
}

impl GradedParams {
    pub fn new(a: f64, thresholds: Vec<f64>, category_map: Vec<u8>) -> Result<Self> {
        let p = Self {
            a,
            thresholds,
            category_map,
        };
        p.validate()?;
        Ok(p)
    }

    /// Identity category map over `thresholds.len() + 1` categories.
    pub fn with_identity_map(a: f64, thresholds: Vec<f64>) -> Result<Self> {
        let map = (1..=thresholds.len() as u8 + 1).collect();
        Self::new(a, thresholds, map)
    }

    pub fn n_modeled(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "graded discrimination must be positive and finite, got {}",
                self.a
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::InvalidParameter("graded item without thresholds".into()));
        }
        if self.thresholds.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("non-finite threshold".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "thresholds not strictly increasing: {:?}",
                self.thresholds
            )));
        }
        let k = self.n_modeled() as u8;
        let mut hit = vec![false; k as usize];
        for &m in &self.category_map {
            if m == 0 || m > k {
                return Err(Error::InvalidParameter(format!(
                    "category map entry {m} outside 1..={k}"
                )));
            }
            hit[m as usize - 1] = true;
        }
        if hit.iter().any(|h| !h) {
            return Err(Error::InvalidParameter(format!(
                "category map {:?} is not onto 1..={k}",
                self.category_map
            )));
        }
        Ok(())
    }

    pub fn intercepts(&self) -> Vec<f64> {
        self.thresholds.iter().map(|b| -(self.a * b)).collect()
    }

    fn probs_unchecked(&self, theta: f64) -> Vec<f64> {
        let logits: Vec<f64> = self.thresholds.iter().map(|b| self.a * (theta - b)).collect();
        let mut out = vec![0.0; self.n_modeled()];
        category_probs_from_logits(&logits, &mut out);
        out
    }
}

/// Probabilities of the modeled categories `1..=K` at `theta`.
pub fn grm_category_probs(theta: f64, params: &GradedParams) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(params.probs_unchecked(theta))
}

/// Calibrated parameters of a single item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum ItemParams {
    #[serde(rename = "2pl")]
    Dichotomous(Dichotomous2PL),
    #[serde(rename = "graded")]
    Graded(GradedParams),
}

impl ItemParams {
    pub fn slope(&self) -> f64 {
        match self {
            ItemParams::Dichotomous(p) => p.a,
            ItemParams::Graded(p) => p.a,
        }
    }

    /// Cumulative-logit intercepts `d_j` (one for a 2PL item).
    pub fn intercepts(&self) -> Vec<f64> {
        match self {
            ItemParams::Dichotomous(p) => vec![p.d],
            ItemParams::Graded(p) => p.intercepts(),
        }
    }

    pub fn n_modeled(&self) -> usize {
        match self {
            ItemParams::Dichotomous(_) => 2,
            ItemParams::Graded(p) => p.n_modeled(),
        }
    }

    /// Zero-based modeled category of an observed response.
    #[inline]
    pub fn modeled_index(&self, observed: u8) -> Option<usize> {
        match self {
            ItemParams::Dichotomous(_) => (observed <= 1).then_some(observed as usize),
            ItemParams::Graded(p) => p
                .category_map
                .get((observed as usize).checked_sub(1)?)
                .map(|&m| m as usize - 1),
        }
    }

    pub fn category_probs(&self, theta: f64) -> Vec<f64> {
        match self {
            ItemParams::Dichotomous(p) => {
                let z = p.logit(theta);
                vec![logistic(-z), logistic(z)]
            }
            ItemParams::Graded(p) => p.probs_unchecked(theta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ItemParams::Dichotomous(p) => {
                if !p.a.is_finite() || !p.d.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "non-finite 2PL parameters a={} d={}",
                        p.a, p.d
                    )));
                }
                Ok(())
            }
            ItemParams::Graded(p) => p.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ZeroVariance,
    InsufficientResponses,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::ZeroVariance => f.write_str("zero variance"),
            DropReason::InsufficientResponses => f.write_str("insufficient responses"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub item_id: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Screening {
    /// Column indices of the kept items, in matrix order.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedItem>,
}

/// Drops items with fewer than [`MIN_RESPONSES`] answers or a single
/// distinct answer.
pub fn screen_items(matrix: &ResponseMatrix) -> Result<Screening> {
    if matrix.is_empty() {
        return Err(Error::InvalidInput("cannot screen an empty matrix".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..matrix.n_items() {
        let counts = matrix.value_counts(j);
        let answered: usize = counts.iter().sum();
        let distinct = counts.iter().filter(|&&c| c > 0).count();
        let reason = if answered < MIN_RESPONSES {
            Some(DropReason::InsufficientResponses)
        } else if distinct < 2 {
            Some(DropReason::ZeroVariance)
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedItem {
                item_id: matrix.item_ids()[j].clone(),
                reason,
            }),
            None => kept.push(j),
        }
    }
    Ok(Screening { kept, dropped })
}

/// Collapses unobserved categories of a graded item.
///
/// `counts[c]` is the number of observations of category `c` (index 0 is
/// unused). An unobserved category is merged into the nearest observed
/// category below it, or above it when none lies below.
pub fn collapse_categories(counts: &[usize]) -> Vec<u8> {
    let k = counts.len().saturating_sub(1);
    let mut map = vec![0u8; k];
    let mut modeled = 0u8;
    for c in 1..=k {
        if counts[c] > 0 {
            modeled += 1;
        }
        map[c - 1] = modeled;
    }
    // categories below the first observed one join it
    for m in map.iter_mut() {
        if *m == 0 {
            *m = 1;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dich(rows: Vec<Vec<Option<u8>>>) -> ResponseMatrix {
        let n_items = rows[0].len();
        let persons = (0..rows.len()).map(|i| format!("p{i}")).collect();
        let items = (0..n_items)
            .map(|j| (format!("i{j}"), ItemKind::Dichotomous))
            .collect();
        ResponseMatrix::new(persons, items, rows).unwrap()
    }

    #[test]
    fn icc_midpoint_table_row() {
        let p = Dichotomous2PL::from_difficulty(1.9899, -1.5402);
        assert_eq!(icc_2pl(-1.5402, &p), 0.5);
        assert_eq!(icc_2pl(0.0, &Dichotomous2PL::from_difficulty(1.0, 0.0)), 0.5);
    }

    #[test]
    fn icc_exam_8_at_zero() {
        // logistic(4.26680...) evaluated independently
        let p = Dichotomous2PL::from_difficulty(2.0554, -2.0759);
        let z: f64 = 2.0554 * 2.0759;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert_abs_diff_eq!(icc_2pl(0.0, &p), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(icc_2pl(0.0, &p), 0.98617, epsilon = 1e-4);
    }

    #[test]
    fn icc_saturates() {
        let p = Dichotomous2PL::from_difficulty(3.0, 0.0);
        assert_eq!(icc_2pl(1e6, &p), 1.0);
        assert_eq!(icc_2pl(-1e6, &p), 0.0);
    }

    #[test]
    fn grm_assess_10() {
        let p = GradedParams::with_identity_map(2.8401, vec![-2.0803, -1.4898, -0.4599, 0.0963])
            .unwrap();
        let probs = grm_category_probs(0.0, &p).unwrap();
        let expected = [0.0027, 0.0116, 0.1987, 0.3549, 0.4321];
        for (got, want) in probs.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-3);
        }
        let at_b4 = grm_category_probs(0.0963, &p).unwrap();
        assert_abs_diff_eq!(at_b4[4], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn grm_rejects_unordered_thresholds() {
        let p = GradedParams {
            a: 1.0,
            thresholds: vec![0.5, 0.5],
            category_map: vec![1, 2, 3],
        };
        assert!(matches!(
            grm_category_probs(0.0, &p),
            Err(Error::InvalidParameter(_))
        ));
        assert!(GradedParams::with_identity_map(1.0, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn conversion_examples() {
        match slope_intercept_to_difficulty(0.0582, 2.6420) {
            Difficulty::Value(b) => assert_abs_diff_eq!(b, -45.395, epsilon = 0.01),
            Difficulty::Unstable => panic!("expected a value"),
        }
        assert_eq!(slope_intercept_to_difficulty(1.0, 0.0), Difficulty::Value(-0.0));
        assert_eq!(slope_intercept_to_difficulty(1e-9, 1.0), Difficulty::Unstable);
        assert_eq!(Dichotomous2PL::from_intercept(1e-9, 1.0).b, None);
    }

    #[test]
    fn screening_drops_constant_and_sparse_items() {
        let m = dich(vec![
            vec![Some(1), None, Some(0), Some(1)],
            vec![Some(1), None, Some(1), Some(1)],
            vec![Some(1), None, Some(0), None],
        ]);
        let s = screen_items(&m).unwrap();
        assert_eq!(s.kept, vec![2]);
        assert_eq!(s.dropped.len(), 3);
        assert_eq!(s.dropped[0].reason, DropReason::ZeroVariance);
        assert_eq!(s.dropped[1].reason, DropReason::InsufficientResponses);
        assert_eq!(s.dropped[1].reason.to_string(), "insufficient responses");
        assert_eq!(s.dropped[2].reason, DropReason::ZeroVariance);
    }

    #[test]
    fn screening_empty_matrix_errors() {
        let m = ResponseMatrix::new(vec![], vec![("x".into(), ItemKind::Dichotomous)], vec![])
            .unwrap();
        assert!(matches!(screen_items(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matrix_rejects_bad_cells_and_ids() {
        let items = vec![("x".to_string(), ItemKind::Graded { categories: 5 })];
        assert!(ResponseMatrix::new(vec!["a".into()], items.clone(), vec![vec![Some(0)]]).is_err());
        assert!(ResponseMatrix::new(
            vec!["a".into(), "a".into()],
            items.clone(),
            vec![vec![Some(1)], vec![Some(2)]]
        )
        .is_err());
        let one = vec![("x".to_string(), ItemKind::Graded { categories: 1 })];
        assert!(ResponseMatrix::new(vec!["a".into()], one, vec![vec![Some(1)]]).is_err());
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = ResponseMatrix::new(
            vec!["s1".into(), "s2".into()],
            vec![
                ("exam_1".into(), ItemKind::Dichotomous),
                ("assess_1".into(), ItemKind::Graded { categories: 5 }),
            ],
            vec![vec![Some(1), None], vec![Some(0), Some(4)]],
        )
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: ResponseMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn collapse_map_examples() {
        // observed {1,2,3} of 5
        assert_eq!(collapse_categories(&[0, 3, 4, 1, 0, 0]), vec![1, 2, 3, 3, 3]);
        // observed {2,3,5}
        assert_eq!(collapse_categories(&[0, 0, 2, 2, 0, 1]), vec![1, 1, 2, 2, 3]);
        assert_eq!(collapse_categories(&[0, 1, 1, 1, 1, 1]), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn modeled_index_uses_map() {
        let p = ItemParams::Graded(GradedParams::new(1.0, vec![-1.0, 1.0], vec![1, 2, 3, 3, 3]).unwrap());
        assert_eq!(p.modeled_index(1), Some(0));
        assert_eq!(p.modeled_index(5), Some(2));
        assert_eq!(p.modeled_index(0), None);
        assert_eq!(p.modeled_index(6), None);
    }

    fn graded_strategy() -> impl Strategy<Value = GradedParams> {
        (0.05f64..4.0, -4.0f64..4.0, prop::collection::vec(0.01f64..3.0, 1..6)).prop_map(
            |(a, start, gaps)| {
                let mut t = vec![start];
                for g in gaps {
                    let last = *t.last().unwrap();
                    t.push(last + g);
                }
                GradedParams::with_identity_map(a, t).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn grm_probs_are_a_distribution(p in graded_strategy(), theta in -10.0f64..10.0) {
            let probs = grm_category_probs(theta, &p).unwrap();
            prop_assert!(probs.iter().all(|&x| x >= 0.0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn grm_two_categories_nests_2pl(a in 0.05f64..4.0, b in -4.0f64..4.0, theta in -10.0f64..10.0) {
            let g = GradedParams::with_identity_map(a, vec![b]).unwrap();
            let probs = grm_category_probs(theta, &g).unwrap();
            let icc = icc_2pl(theta, &Dichotomous2PL::from_difficulty(a, b));
            prop_assert!((probs[1] - icc).abs() < 1e-12);
        }

        #[test]
        fn icc_monotone_for_positive_slope(a in 0.01f64..5.0, b in -5.0f64..5.0, t in -8.0f64..8.0, dt in 0.01f64..1.0) {
            let p = Dichotomous2PL::from_difficulty(a, b);
            let (lo, hi) = (icc_2pl(t, &p), icc_2pl(t + dt, &p));
            prop_assert!(hi >= lo);
            if lo < 1.0 - 1e-9 {
                prop_assert!(hi > lo);
            }
            prop_assert!((icc_2pl(b, &p) - 0.5).abs() < 1e-15);
        }

        #[test]
        fn difficulty_round_trip(a in prop_oneof![1e-6f64..10.0, -10.0f64..-1e-6], b in -50.0f64..50.0) {
            let d = -(a * b);
            let back = slope_intercept_to_difficulty(a, d).value().unwrap();
            prop_assert!((back - b).abs() < 1e-9);
        }

        #[test]
        fn screening_is_idempotent(rows in prop::collection::vec(
            prop::collection::vec(prop::option::of(0u8..2), 6), 1..12)) {
            let m = dich(rows);
            let s = screen_items(&m).unwrap();
            if !s.kept.is_empty() {
                let sub = m.select_items(&s.kept);
                let again = screen_items(&sub).unwrap();
                prop_assert!(again.dropped.is_empty());
                prop_assert_eq!(again.kept.len(), s.kept.len());
            }
            prop_assert_eq!(s.kept.len() + s.dropped.len(), m.n_items());
        }
    }
}
