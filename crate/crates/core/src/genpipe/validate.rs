use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const N_OPTIONS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "kebab-case")]
pub enum ValidationError {
    NotJson { detail: String },
    MissingField { field: String },
    OptionCount { found: usize },
    DuplicateOption { option: String },
    CorrectIndexRange { index: i64 },
    CorrectMismatch { detail: String },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::NotJson { detail } => write!(f, "not-json: {detail}"),
            ValidationError::MissingField { field } => write!(f, "missing-field: {field}"),
            ValidationError::OptionCount { found } => write!(f, "option-count: expected {N_OPTIONS}, found {found}"),
            ValidationError::DuplicateOption { option } => write!(f, "duplicate-option: {option:?}"),
            ValidationError::CorrectIndexRange { index } => write!(f, "correct-index-range: {index}"),
            ValidationError::CorrectMismatch { detail } => write!(f, "correct-mismatch: {detail}"),
        }
    }
}

/// Stem, options and key of a payload that passed every check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidItem {
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
}

impl ValidItem {
    /// Payload in the shape the validator accepts.
    pub fn to_payload(&self) -> Value {
        serde_json::json!({
            "question": self.stem,
            "options": self.options,
            "correct_index": self.correct_index,
        })
    }
}

/// Trims and collapses internal whitespace runs to one space.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The JSON object inside provider text, tolerating code fences and
/// surrounding prose.
pub fn extract_json(text: &str) -> Result<Value, ValidationError> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let (start, end) = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => {
            return Err(ValidationError::NotJson {
                detail: "no JSON object found".into(),
            })
        }
    };
    serde_json::from_str(&trimmed[start..=end]).map_err(|e| ValidationError::NotJson { detail: e.to_string() })
}

fn letter_index(answer: &str) -> Option<usize> {
    let a = answer.trim().trim_end_matches([')', '.', ':']);
    match a.to_ascii_uppercase().as_str() {
        "A" => Some(0),
        "B" => Some(1),
        "C" => Some(2),
        "D" => Some(3),
        _ => None,
    }
}

/// Checks a parsed payload. Every violated rule is reported.
pub fn validate_item(payload: &Value) -> Result<ValidItem, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let obj = match payload.as_object() {
        Some(o) => o,
        None => {
            return Err(vec![ValidationError::NotJson {
                detail: "payload is not an object".into(),
            }])
        }
    };
    let stem = obj
        .get("question")
        .or_else(|| obj.get("stem"))
        .and_then(Value::as_str)
        .map(normalize_whitespace)
        .filter(|s| !s.is_empty());
    if stem.is_none() {
        errors.push(ValidationError::MissingField { field: "question".into() });
    }

    let options: Option<Vec<String>> = match obj.get("options").and_then(Value::as_array) {
        None => {
            errors.push(ValidationError::MissingField { field: "options".into() });
            None
        }
        Some(arr) => {
            let strings: Option<Vec<String>> = arr.iter().map(|v| v.as_str().map(normalize_whitespace)).collect();
            match strings {
                None => {
                    errors.push(ValidationError::MissingField {
                        field: "options (string entries)".into(),
                    });
                    None
                }
                Some(opts) => {
                    if opts.len() != N_OPTIONS {
                        errors.push(ValidationError::OptionCount { found: opts.len() });
                    }
                    if let Some(empty) = opts.iter().position(String::is_empty) {
                        errors.push(ValidationError::MissingField {
                            field: format!("options[{empty}]"),
                        });
                    }
                    let mut seen = HashSet::new();
                    for o in &opts {
                        if !o.is_empty() && !seen.insert(o.clone()) {
                            errors.push(ValidationError::DuplicateOption { option: o.clone() });
                        }
                    }
                    Some(opts)
                }
            }
        }
    };

    let index = match obj.get("correct_index") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_i64() {
            Some(i) if (0..N_OPTIONS as i64).contains(&i) => Some(i as usize),
            Some(i) => {
                errors.push(ValidationError::CorrectIndexRange { index: i });
                None
            }
            None => {
                errors.push(ValidationError::CorrectMismatch {
                    detail: format!("correct_index {v} is not an integer"),
                });
                None
            }
        },
    };
    let answer = obj.get("correct_answer").and_then(Value::as_str).map(normalize_whitespace);
    let from_answer = match (&answer, &options) {
        (Some(a), Some(opts)) => match opts.iter().position(|o| o == a).or_else(|| letter_index(a)) {
            Some(i) => Some(i),
            None => {
                errors.push(ValidationError::CorrectMismatch {
                    detail: format!("correct answer {a:?} matches no option"),
                });
                None
            }
        },
        _ => None,
    };
    let correct_index = match (index, from_answer) {
        (Some(i), Some(j)) if i != j => {
            errors.push(ValidationError::CorrectMismatch {
                detail: format!("correct_index {i} but correct_answer is option {j}"),
            });
            None
        }
        (Some(i), _) | (None, Some(i)) => Some(i),
        (None, None) => {
            if answer.is_none() && !obj.contains_key("correct_index") {
                errors.push(ValidationError::MissingField {
                    field: "correct_index or correct_answer".into(),
                });
            }
            None
        }
    };

    match (stem, options, correct_index) {
        (Some(stem), Some(options), Some(correct_index)) if errors.is_empty() => Ok(ValidItem {
            stem,
            options,
            correct_index,
        }),
        _ => Err(errors),
    }
}

/// Extracts and validates in one step.
pub fn validate_text(text: &str) -> Result<ValidItem, Vec<ValidationError>> {
    let value = extract_json(text).map_err(|e| vec![e])?;
    validate_item(&value)
}
