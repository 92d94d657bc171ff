use serde_json::json;

use super::{sha256_hex, BackendError, LlmBackend, PromptRequest};
use crate::knowledge::prompts::{
    parse_count_word, INPUT_CONCEPT, INPUT_NOUNS, INPUT_TWO_CONCEPTS, PAIR_SEPARATOR,
};

/// Offline backend whose reply is a pure function of the rendered prompt.
///
/// It recognises the three knowledge prompts and answers in the requested
/// JSON shape:
/// - concept: name `"<digest of sorted nouns> <first noun>"`, description
///   listing the nouns;
/// - attributes: the requested number of digest-tagged phrases that mention
///   the concept name(s).
#[derive(Clone, Debug, Default)]
pub struct MockBackend;

fn input_value<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    Some(rest.split("\n").next().unwrap_or(rest).trim())
}

fn requested_count(prompt: &str) -> usize {
    let task = prompt.lines().next().unwrap_or_default();
    let mut words = task.split_whitespace().skip_while(|w| *w != "List").skip(1);
    match words.next() {
        Some("the") => words.next().and_then(parse_count_word),
        Some(w) => parse_count_word(w),
        None => None,
    }
    .unwrap_or(1)
}

fn token(seed: &str) -> String {
    sha256_hex(seed.as_bytes())[..6].to_string()
}

fn mock_reply(prompt: &str) -> String {
    if let Some(nouns) = input_value(prompt, INPUT_NOUNS) {
        let list: Vec<&str> = nouns.split(", ").filter(|n| !n.is_empty()).collect();
        let mut sorted = list.clone();
        sorted.sort_unstable();
        let tag = token(&sorted.join("\n"));
        let first = list.first().copied().unwrap_or("thing");
        return json!({
            "concept": format!("{tag} {first}"),
            "description": format!("objects such as {}", list.join(", ")),
        })
        .to_string();
    }
    let count = requested_count(prompt);
    let attributes: Vec<String> = if let Some(pair) = input_value(prompt, INPUT_TWO_CONCEPTS) {
        let (a, b) = pair.split_once(PAIR_SEPARATOR).unwrap_or((pair, pair));
        (1..=count)
            .map(|i| format!("{a} versus {b} contrast {} {i}", token(&format!("{prompt}#{i}"))))
            .collect()
    } else if let Some(concept) = input_value(prompt, INPUT_CONCEPT) {
        (1..=count)
            .map(|i| format!("{concept} trait {} {i}", token(&format!("{prompt}#{i}"))))
            .collect()
    } else {
        return format!("mock reply {}", token(prompt));
    };
    json!({ "attributes": attributes }).to_string()
}

impl LlmBackend for MockBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        Ok(mock_reply(&request.rendered_prompt))
    }

    fn name(&self) -> &str {
        "mock"
    }
}
