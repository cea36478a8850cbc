//! Plain-text reports and CSV tables.

use std::fmt::Write as _;

use qacal_core::analytics::{CorrelationMatrix, ItemAggregate};
use qacal_core::dif::DifReport;
use qacal_core::scoring::{AbilityEstimate, InformationCurve};
use qacal_core::simulator::{DifPowerReport, RecoveryReport};
use qacal_core::{CalibrationResult, ItemParams};

/// Prefix of the only line that carries a wall-clock time.
pub const GENERATED_PREFIX: &str = "# generated: ";

pub fn header(title: &str, fields: &[(&str, String)]) -> String {
    let mut s = format!("# qacal {title}\n{GENERATED_PREFIX}{}\n", now());
    for (k, v) in fields {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn num(v: f64) -> String {
    format!("{v:.4}")
}

/// Fixed 6-decimal field, blank for missing values.
pub fn cell(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn table(rows: &[Vec<String>]) -> String {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, s) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{s:<w$}", w = widths[0]);
            } else {
                let _ = write!(line, "  {s:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn sorted_items(result: &CalibrationResult) -> Vec<&qacal_core::CalibratedItem> {
    let mut items: Vec<_> = result.items.iter().collect();
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    items
}

pub fn calibration_report(result: &CalibrationResult, info: &InformationCurve) -> String {
    let n_dich = result.items.iter().filter(|i| matches!(i.params, ItemParams::Dichotomous(_))).count();
    let mut s = header(
        "calibration report",
        &[
            ("quad_nodes", result.n_quadrature.to_string()),
            ("persons", result.n_persons.to_string()),
            ("dichotomous_items", n_dich.to_string()),
            ("graded_items", (result.items.len() - n_dich).to_string()),
            ("dropped_items", result.dropped.len().to_string()),
            ("em_cycles", result.n_cycles.to_string()),
            ("converged", result.converged.to_string()),
            ("log_likelihood", num(result.log_likelihood)),
            ("information_singular", result.information_singular.to_string()),
        ],
    );

    s.push_str("\n## Dichotomous items (2PL)\n");
    let mut rows = vec![vec!["item".to_string(), "a".into(), "b".into()]];
    for item in sorted_items(result) {
        if let ItemParams::Dichotomous(p) = &item.params {
            let b = p.b.map(num).unwrap_or_else(|| format!("unstable (d = {})", num(p.d)));
            rows.push(vec![item.item_id.clone(), num(p.a), b]);
        }
    }
    s.push_str(&table(&rows));

    let width = result
        .items
        .iter()
        .filter_map(|i| match &i.params {
            ItemParams::Graded(g) => Some(g.category_map.len() - 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    s.push_str("\n## Graded items\n");
    let mut rows = vec![std::iter::once("item".to_string())
        .chain(std::iter::once("a".to_string()))
        .chain((1..=width).map(|k| format!("b{k}")))
        .collect::<Vec<_>>()];
    for item in sorted_items(result) {
        if let ItemParams::Graded(g) = &item.params {
            let mut row = vec![item.item_id.clone(), num(g.a)];
            // collapsed thresholds stay blank
            row.extend((0..width).map(|k| g.thresholds.get(k).map(|&b| num(b)).unwrap_or_default()));
            rows.push(row);
        }
    }
    s.push_str(&table(&rows));

    s.push_str("\n## Standard errors\n");
    let mut rows = vec![vec!["item".to_string(), "se_a".into(), "se_b".into(), "reliable".into()]];
    for item in sorted_items(result) {
        let se = &item.standard_errors;
        rows.push(vec![
            item.item_id.clone(),
            se.a.map(num).unwrap_or_default(),
            se.difficulty.iter().map(|v| v.map(num).unwrap_or_default()).collect::<Vec<_>>().join(" "),
            se.reliable.to_string(),
        ]);
    }
    s.push_str(&table(&rows));

    s.push_str("\n## Dropped items\n");
    let mut rows = vec![vec!["item".to_string(), "reason".into()]];
    rows.extend(result.dropped.iter().map(|d| vec![d.item_id.clone(), d.reason.to_string()]));
    s.push_str(&table(&rows));

    s.push_str("\n## Test information\n");
    if let Some((t, v)) = info.peak() {
        let _ = writeln!(s, "peak theta {} information {}", num(t), num(v));
    }
    let mut rows = vec![vec!["theta".to_string(), "information".into()]];
    rows.extend(info.theta.iter().zip(&info.total).map(|(t, v)| vec![num(*t), num(*v)]));
    s.push_str(&table(&rows));
    s
}

pub fn information_csv(info: &InformationCurve, item_ids: &[String]) -> String {
    let mut s = String::from("theta,total");
    for id in item_ids {
        let _ = write!(s, ",{id}");
    }
    s.push('\n');
    for (t, theta) in info.theta.iter().enumerate() {
        let _ = write!(s, "{},{}", cell(Some(*theta)), cell(Some(info.total[t])));
        for row in &info.per_item {
            let _ = write!(s, ",{}", cell(Some(row[t])));
        }
        s.push('\n');
    }
    s
}

pub fn abilities_csv(scores: &[AbilityEstimate]) -> String {
    let mut s = String::from("person_id,theta_eap,posterior_sd,n_answered\n");
    for a in scores {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            a.person_id,
            cell(Some(a.theta_eap)),
            cell(Some(a.posterior_sd)),
            a.n_answered
        );
    }
    s
}

pub const DIF_COLUMNS: &str = "item,delta_log_odds,p_value,flagged,separation";

pub fn dif_csv(report: &DifReport) -> String {
    let mut s = format!("{DIF_COLUMNS}\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.item_id,
            cell(Some(r.delta_log_odds)),
            cell(Some(r.wald_p_value)),
            r.flagged,
            r.separation_detected
        );
    }
    s
}

pub fn dif_text(report: &DifReport) -> String {
    let mut s = header(
        "uniform DIF report",
        &[
            ("grouping", report.grouping.clone()),
            ("n_low", report.n_low.to_string()),
            ("n_high", report.n_high.to_string()),
            ("flag_delta", report.delta_flag_threshold.to_string()),
            ("alpha", report.alpha.to_string()),
            ("flagged", report.flagged().count().to_string()),
        ],
    );
    s.push('\n');
    let mut rows = vec![DIF_COLUMNS.split(',').map(String::from).collect::<Vec<_>>()];
    for r in &report.rows {
        rows.push(vec![
            r.item_id.clone(),
            format!("{:.2}", r.delta_log_odds),
            format!("{:.4}", r.wald_p_value),
            if r.flagged { "*".into() } else { String::new() },
            if r.separation_detected { "separation".into() } else { String::new() },
        ]);
    }
    s.push_str(&table(&rows));
    if !report.skipped.is_empty() {
        s.push_str("\n## Skipped items\n");
        let mut rows = vec![vec!["item".to_string(), "reason".into()]];
        rows.extend(report.skipped.iter().map(|k| vec![k.item_id.clone(), k.reason.clone()]));
        s.push_str(&table(&rows));
    }
    s
}

pub fn aggregates_csv(aggs: &[ItemAggregate]) -> String {
    let mut s = String::from(
        "question,exam_item,assess_item,avg_assessment,avg_exam_score,difficulty,difficulty_unstable,discrimination,\
         n_opinions,is_reasonable,is_too_easy,is_complicated,is_ambiguous\n",
    );
    for a in aggs {
        let p = |k: usize| cell(a.opinion_proportions.map(|p| p[k]));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            a.question,
            a.exam_item.as_deref().unwrap_or(""),
            a.assess_item.as_deref().unwrap_or(""),
            cell(a.mean_assessment),
            cell(a.mean_exam_score),
            cell(a.difficulty),
            a.difficulty_unstable,
            cell(a.discrimination),
            a.n_opinions,
            p(0),
            p(1),
            p(2),
            p(3)
        );
    }
    s
}

/// Square matrix CSV with labels on both axes; `value` picks r, p or n.
pub fn matrix_csv(m: &CorrelationMatrix, value: impl Fn(usize, usize) -> String) -> String {
    let mut s = String::from("variable");
    for n in &m.names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (i, n) in m.names.iter().enumerate() {
        s.push_str(n);
        for j in 0..m.names.len() {
            let _ = write!(s, ",{}", value(i, j));
        }
        s.push('\n');
    }
    s
}

fn shade(r: f64) -> char {
    const RAMP: [char; 5] = [' ', '.', ':', '+', '#'];
    RAMP[((r.abs() * 4.0).round() as usize).min(4)]
}

/// Text heatmap: signed r to two decimals plus a density glyph for |r|.
pub fn heatmap(m: &CorrelationMatrix) -> String {
    let label_w = m.names.iter().map(String::len).max().unwrap_or(0);
    let mut s = format!("{:label_w$}", "");
    for j in 0..m.names.len() {
        let _ = write!(s, "  {:>6}", format!("[{}]", j + 1));
    }
    s.push('\n');
    for (i, n) in m.names.iter().enumerate() {
        let _ = write!(s, "{n:<label_w$}");
        for j in 0..m.names.len() {
            match m.r(i, j) {
                Some(r) => {
                    let _ = write!(s, "  {:>5}{}", format!("{r:+.2}"), shade(r));
                }
                None => s.push_str("       -"),
            }
        }
        let _ = writeln!(s, "  [{}]", i + 1);
    }
    s
}

pub fn recovery_text(r: &RecoveryReport) -> String {
    let mut s = header(
        "parameter recovery study",
        &[
            ("replicates", r.n_replicates.to_string()),
            ("failed_replicates", r.failures.len().to_string()),
            ("persons", r.n_persons.to_string()),
            ("rmse_a", num(r.rmse_a)),
            ("rmse_b", num(r.rmse_b)),
        ],
    );
    s.push('\n');
    let mut rows = vec![["item", "parameter", "true", "mean", "bias", "rmse", "n"].map(String::from).to_vec()];
    for p in &r.parameters {
        rows.push(vec![
            p.item_id.clone(),
            p.parameter.clone(),
            num(p.true_value),
            num(p.mean_estimate),
            num(p.bias),
            num(p.rmse),
            p.n.to_string(),
        ]);
    }
    s.push_str(&table(&rows));
    s
}

pub fn dif_power_text(r: &DifPowerReport) -> String {
    let rate = |v: Option<f64>| v.map(num).unwrap_or_else(|| "n/a".into());
    let mut s = header(
        "DIF power study",
        &[
            ("replicates", r.n_replicates.to_string()),
            ("failed_replicates", r.failures.len().to_string()),
            ("persons", r.n_persons.to_string()),
            ("grouping", format!("{:?}", r.grouping).to_lowercase()),
            ("detection_rate", rate(r.detection_rate)),
            ("max_false_flag_rate", rate(r.false_flag_rate)),
        ],
    );
    s.push('\n');
    let mut rows = vec![["item", "true_shift", "mean_delta", "bias", "flag_rate", "top_rate", "n"].map(String::from).to_vec()];
    for p in &r.per_item {
        rows.push(vec![
            p.item_id.clone(),
            num(p.true_shift),
            num(p.mean_delta),
            num(p.mean_delta - p.true_shift),
            num(p.flag_rate),
            num(p.max_abs_delta_rate),
            p.n.to_string(),
        ]);
    }
    s.push_str(&table(&rows));
    s
}
