use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GeneratedItem;
use crate::analytics::Opinion;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormSchema {
    pub title: String,
    pub blocks: Vec<FormBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormBlock {
    pub question: QuestionBlock,
    /// Stars, opinion, comment, alternative.
    pub assessment: Vec<FormField>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionBlock {
    pub key: String,
    pub item_id: String,
    pub stem: String,
    pub options: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FormField {
    Stars { key: String, label: String, min: u8, max: u8 },
    SingleChoice { key: String, label: String, choices: Vec<String> },
    Text { key: String, label: String },
}

impl FormField {
    pub fn key(&self) -> &str {
        match self {
            FormField::Stars { key, .. } | FormField::SingleChoice { key, .. } | FormField::Text { key, .. } => key,
        }
    }
}

/// `item id → correct option index`.
pub type AnswerKey = BTreeMap<String, usize>;

pub fn export_form(items: &[GeneratedItem]) -> Result<(FormSchema, AnswerKey)> {
    if items.is_empty() {
        return Err(Error::InvalidInput("cannot export a form from an empty bank".into()));
    }
    let mut key = AnswerKey::new();
    let blocks = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            key.insert(item.id.clone(), item.correct_index);
            let n = i + 1;
            let a = format!("a{n:02}");
            FormBlock {
                question: QuestionBlock {
                    key: format!("q{n:02}"),
                    item_id: item.id.clone(),
                    stem: item.stem.clone(),
                    options: item.options.clone(),
                },
                assessment: vec![
                    FormField::Stars {
                        key: format!("{a}_stars"),
                        label: "How good is this question?".into(),
                        min: 1,
                        max: 5,
                    },
                    FormField::SingleChoice {
                        key: format!("{a}_opinion"),
                        label: "This question is".into(),
                        choices: Opinion::ALL.iter().map(|o| o.label().to_string()).collect(),
                    },
                    FormField::Text {
                        key: format!("{a}_comment"),
                        label: "Comment".into(),
                    },
                    FormField::Text {
                        key: format!("{a}_alternative"),
                        label: "Suggest an alternative question".into(),
                    },
                ],
            }
        })
        .collect();
    Ok((
        FormSchema {
            title: "Generated test with question assessment".into(),
            blocks,
        },
        key,
    ))
}
