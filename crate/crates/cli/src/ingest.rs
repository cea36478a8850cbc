//! Response CSV → response matrix plus opinion sidecar.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use anyhow::{anyhow, bail, Context};
use qacal_core::analytics::{Opinion, OpinionEntry, OpinionSheet};
use qacal_core::genpipe::{AnswerKey, GeneratedItem};
use qacal_core::{ItemKind, ResponseMatrix};

/// Stars on the assessment form.
pub const ASSESS_CATEGORIES: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExamValues {
    /// Chosen option index, scored against the key.
    Options,
    /// Already scored 0/1.
    Scored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColumnRole {
    Exam,
    Assess,
    Opinion,
    Comment,
    Alternative,
}

fn classify(name: &str) -> Option<(ColumnRole, u32)> {
    let (prefix, n) = name.rsplit_once('_')?;
    let n: u32 = n.parse().ok().filter(|&n| n >= 1)?;
    let role = match prefix {
        "exam" => ColumnRole::Exam,
        "assess" => ColumnRole::Assess,
        "opinion" => ColumnRole::Opinion,
        "comment" => ColumnRole::Comment,
        "alternative" => ColumnRole::Alternative,
        _ => return None,
    };
    Some((role, n))
}

#[derive(Debug)]
pub struct Ingested {
    pub matrix: ResponseMatrix,
    pub opinions: OpinionSheet,
    pub n_exam: usize,
    pub n_assess: usize,
}

/// The answer key for `exam_<n>` is the n-th bank item.
pub struct ExamKey<'a> {
    pub bank: &'a [GeneratedItem],
    pub key: &'a AnswerKey,
}

pub fn ingest_csv(input: impl Read, values: ExamValues, key: Option<&ExamKey<'_>>) -> anyhow::Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers().context("cannot read CSV header")?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("person_id") {
        bail!("first CSV column must be person_id");
    }
    if values == ExamValues::Options && key.is_none() {
        bail!("option-index exam values need --bank");
    }
    let mut roles = Vec::with_capacity(header.len() - 1);
    let mut unknown = Vec::new();
    let mut seen = HashSet::new();
    for name in &header[1..] {
        if !seen.insert(name.as_str()) {
            bail!("duplicate column {name}");
        }
        match classify(name) {
            Some((ColumnRole::Exam, n)) if key.is_some_and(|k| n as usize > k.bank.len()) => unknown.push(name.clone()),
            Some(c) => roles.push(c),
            None => unknown.push(name.clone()),
        }
    }
    if !unknown.is_empty() {
        bail!("unknown item columns: {}", unknown.join(", "));
    }

    let cols = |role: ColumnRole| -> Vec<usize> { (0..roles.len()).filter(|&c| roles[c].0 == role).collect() };
    let (exam_cols, assess_cols) = (cols(ColumnRole::Exam), cols(ColumnRole::Assess));
    let mut items: Vec<(String, ItemKind)> = exam_cols.iter().map(|&c| (header[c + 1].clone(), ItemKind::Dichotomous)).collect();
    items.extend(
        assess_cols
            .iter()
            .map(|&c| (header[c + 1].clone(), ItemKind::Graded { categories: ASSESS_CATEGORIES })),
    );
    let matrix_cols: Vec<usize> = exam_cols.iter().chain(&assess_cols).copied().collect();

    let mut person_ids = Vec::new();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed CSV at data row {}", r + 1))?;
        let row_no = r + 1;
        let person = record.get(0).unwrap_or_default().to_string();
        if person.is_empty() {
            bail!("row {row_no}: empty person_id");
        }
        let cell = |c: usize| record.get(c + 1).filter(|s| !s.is_empty());
        let mut row = Vec::with_capacity(matrix_cols.len());
        for &c in &matrix_cols {
            let Some(raw) = cell(c) else {
                row.push(None);
                continue;
            };
            let (role, n) = roles[c];
            let parsed = raw.parse::<u8>().ok();
            let value = match (role, values) {
                (ColumnRole::Exam, ExamValues::Options) => {
                    let k = key.expect("checked above");
                    let item = &k.bank[n as usize - 1];
                    let correct = k.key.get(&item.id).copied().unwrap_or(item.correct_index);
                    parsed
                        .filter(|&v| (v as usize) < item.options.len())
                        .map(|v| u8::from(v as usize == correct))
                        .ok_or_else(|| format!("not an option index 0..{}", item.options.len() - 1))
                }
                (ColumnRole::Exam, ExamValues::Scored) => parsed.filter(|&v| v <= 1).ok_or_else(|| "not 0 or 1".to_string()),
                _ => parsed
                    .filter(|v| (1..=ASSESS_CATEGORIES).contains(v))
                    .ok_or_else(|| format!("not a rating 1..{ASSESS_CATEGORIES}")),
            };
            match value {
                Ok(v) => row.push(Some(v)),
                Err(why) => {
                    errors.push(format!("row {row_no}, column {}: {raw:?} is {why}", header[c + 1]));
                    row.push(None);
                }
            }
        }
        let mut per_question: BTreeMap<u32, OpinionEntry> = BTreeMap::new();
        for (c, &(role, n)) in roles.iter().enumerate() {
            let Some(raw) = cell(c) else { continue };
            let entry = || OpinionEntry {
                person_id: person.clone(),
                question: n,
                opinion: None,
                comment: None,
                alternative: None,
            };
            match role {
                ColumnRole::Opinion => match raw.parse::<Opinion>() {
                    Ok(o) => per_question.entry(n).or_insert_with(entry).opinion = Some(o),
                    Err(_) => errors.push(format!("row {row_no}, column {}: unknown opinion {raw:?}", header[c + 1])),
                },
                ColumnRole::Comment => per_question.entry(n).or_insert_with(entry).comment = Some(raw.to_string()),
                ColumnRole::Alternative => per_question.entry(n).or_insert_with(entry).alternative = Some(raw.to_string()),
                _ => {}
            }
        }
        entries.extend(per_question.into_values());
        person_ids.push(person);
        rows.push(row);
    }
    if !errors.is_empty() {
        let shown = errors.len().min(10);
        bail!(
            "{} out-of-range cells:\n  {}{}",
            errors.len(),
            errors[..shown].join("\n  "),
            if errors.len() > shown { "\n  ..." } else { "" }
        );
    }
    if person_ids.is_empty() {
        bail!("response CSV has no data rows");
    }
    let matrix = ResponseMatrix::new(person_ids, items, rows).map_err(|e| anyhow!(e))?;
    Ok(Ingested {
        matrix,
        opinions: OpinionSheet { entries },
        n_exam: exam_cols.len(),
        n_assess: assess_cols.len(),
    })
}
