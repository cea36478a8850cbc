//! Multiple-choice item generation from context snippets, schema
//! validation of provider output, and form export.

mod form;
mod prompt;
mod provider;
mod validate;

pub use form::{export_form, AnswerKey, FormBlock, FormField, FormSchema, QuestionBlock};
pub use prompt::{build_prompt, system_message, PromptPair, BASE_PROMPT, SCHEMA_INSTRUCTION};
pub use provider::{
    request_body, response_content, ChatRequest, HttpProvider, Provider, StubProvider, API_KEY_VAR, STUB_TIMESTAMP,
};
pub use validate::{extract_json, normalize_whitespace, validate_item, validate_text, ValidItem, ValidationError, N_OPTIONS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSnippet {
    pub id: String,
    pub text: String,
    pub topic: Option<String>,
}

impl ContextSnippet {
    pub fn new(id: impl Into<String>, text: impl Into<String>, topic: Option<String>) -> Result<Self> {
        let (id, text) = (id.into(), text.into());
        if text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("snippet {id} is empty")));
        }
        Ok(Self { id, text, topic })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub source: String,
    pub model: String,
    pub temperature: f64,
    pub timestamp: String,
}

impl GeneratedItem {
    pub fn validate(&self) -> std::result::Result<(), Vec<ValidationError>> {
        let v = ValidItem {
            stem: self.stem.clone(),
            options: self.options.clone(),
            correct_index: self.correct_index,
        };
        match validate_item(&v.to_payload()) {
            Ok(back) if back == v => Ok(()),
            Ok(_) => Err(vec![ValidationError::CorrectMismatch {
                detail: "item text is not whitespace-normalized".into(),
            }]),
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub model: String,
    pub temperature: f64,
    pub retry_limit: usize,
    pub n_per_snippet: usize,
    pub max_in_flight: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.2,
            retry_limit: 3,
            n_per_snippet: 1,
            max_in_flight: 4,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::InvalidInput(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.n_per_snippet == 0 || self.max_in_flight == 0 {
            return Err(Error::InvalidInput("n_per_snippet and max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub snippet_id: String,
    pub attempts: usize,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub items: Vec<GeneratedItem>,
    pub failures: Vec<GenerationFailure>,
}

type SnippetResult = std::result::Result<Vec<std::result::Result<(ValidItem, String), GenerationFailure>>, Error>;

fn generate_for_snippet(snippet: &ContextSnippet, provider: &dyn Provider, config: &GenConfig) -> SnippetResult {
    let prompt = build_prompt(snippet);
    let request = ChatRequest {
        system: &prompt.system,
        user: &prompt.user,
        temperature: config.temperature,
        model: &config.model,
    };
    let attempts = config.retry_limit + 1;
    let mut out = Vec::with_capacity(config.n_per_snippet);
    for _ in 0..config.n_per_snippet {
        let mut errors = Vec::new();
        let mut produced = None;
        for _ in 0..attempts {
            let text = provider.complete(&request).map_err(|message| Error::Provider {
                snippet: snippet.id.clone(),
                message,
            })?;
            match validate_text(&text) {
                Ok(item) => {
                    produced = Some((item, provider.timestamp()));
                    break;
                }
                Err(errs) => errors.push(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")),
            }
        }
        out.push(produced.ok_or(GenerationFailure {
            snippet_id: snippet.id.clone(),
            attempts,
            errors,
        }));
    }
    Ok(out)
}

/// Runs every snippet, at most `max_in_flight` at a time. Items keep snippet
/// order and are numbered `q01, q02, …`. Payloads that stay invalid after
/// `retry_limit` retries become failure records; a provider transport
/// error aborts the run.
pub fn generate_items(snippets: &[ContextSnippet], provider: &dyn Provider, config: &GenConfig) -> Result<GenerationOutcome> {
    config.validate()?;
    let mut per_snippet: Vec<SnippetResult> = Vec::with_capacity(snippets.len());
    for chunk in snippets.chunks(config.max_in_flight) {
        let results: Vec<SnippetResult> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|snip| s.spawn(move || generate_for_snippet(snip, provider, config)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("generation worker panicked")).collect()
        });
        per_snippet.extend(results);
    }
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (snippet, result) in snippets.iter().zip(per_snippet) {
        for r in result? {
            match r {
                Ok((v, timestamp)) => items.push(GeneratedItem {
                    id: format!("q{:02}", items.len() + 1),
                    stem: v.stem,
                    options: v.options,
                    correct_index: v.correct_index,
                    source: snippet.id.clone(),
                    model: config.model.clone(),
                    temperature: config.temperature,
                    timestamp,
                }),
                Err(f) => failures.push(f),
            }
        }
    }
    Ok(GenerationOutcome { items, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed(String, AtomicUsize);

    impl Provider for Fixed {
        fn complete(&self, _: &ChatRequest<'_>) -> std::result::Result<String, String> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0.clone())
        }
        fn timestamp(&self) -> String {
            STUB_TIMESTAMP.into()
        }
    }

    struct Down;

    impl Provider for Down {
        fn complete(&self, _: &ChatRequest<'_>) -> std::result::Result<String, String> {
            Err("connection refused".into())
        }
        fn timestamp(&self) -> String {
            String::new()
        }
    }

    fn snippets(n: usize) -> Vec<ContextSnippet> {
        (0..n).map(|i| ContextSnippet::new(format!("s{i:02}"), format!("text {i}"), None).unwrap()).collect()
    }

    #[test]
    fn fixed_valid_payload_gives_one_item_per_snippet() {
        let p = Fixed(
            r#"{"question":"Q?","options":["a","b","c","d"],"correct_index":1}"#.into(),
            AtomicUsize::new(0),
        );
        let out = generate_items(&snippets(22), &p, &GenConfig::default()).unwrap();
        assert_eq!(out.items.len(), 22);
        assert!(out.failures.is_empty());
        assert_eq!(out.items[21].id, "q22");
        assert_eq!(out.items[5].source, "s05");
        assert!(out.items.iter().all(|i| i.validate().is_ok()));
    }

    #[test]
    fn three_options_fail_after_retries() {
        let p = Fixed(r#"{"question":"Q?","options":["a","b","c"],"correct_index":1}"#.into(), AtomicUsize::new(0));
        let out = generate_items(&snippets(1), &p, &GenConfig::default()).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.failures[0].attempts, 4);
        assert_eq!(p.1.load(Ordering::SeqCst), 4);
        assert!(out.failures[0].errors[0].starts_with("option-count"));
    }

    #[test]
    fn transport_failure_names_the_snippet() {
        match generate_items(&snippets(3), &Down, &GenConfig::default()) {
            Err(Error::Provider { snippet, .. }) => assert_eq!(snippet, "s00"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn temperature_range_checked() {
        let cfg = GenConfig {
            temperature: 2.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ContextSnippet::new("x", "  ", None).is_err());
    }
}
