use serde::{Deserialize, Serialize};

use super::ContextSnippet;

/// Instruction paragraph sent verbatim as the start of every system message.
pub const BASE_PROMPT: &str = "Based on the context given by the user, generate a question that can be answered using the mentioned text. Remember that the question will be answered without looking at that context, so generate a question that will allow students familiar with it to answer it correctly.";

/// Output contract appended after the base paragraph.
pub const SCHEMA_INSTRUCTION: &str = r#"Respond with a single JSON object and nothing else, using exactly these keys:
{"question": string, "options": [string, string, string, string], "correct_index": integer 0-3, "correct_answer": string}
The question must be multiple-choice with exactly four distinct answer options, exactly one of which is correct. "correct_answer" must repeat the correct option text verbatim."#;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

pub fn system_message() -> String {
    format!("{BASE_PROMPT}\n\n{SCHEMA_INSTRUCTION}")
}

/// The user message is the snippet text, untouched. Topics are not injected.
pub fn build_prompt(snippet: &ContextSnippet) -> PromptPair {
    PromptPair {
        system: system_message(),
        user: snippet.text.clone(),
    }
}
