//! Prompt templates for concept abstraction and attribute mining, and the
//! parsers for their structured replies.
//!
//! Every prompt has `[Task]`, `[Additional criteria]`, `[Input]` and
//! `[Output format]` blocks. An optional domain hint is appended to the
//! additional-criteria block.

use serde_json::Value;

pub const INPUT_NOUNS: &str = "[Input] Given Nouns: ";
pub const INPUT_CONCEPT: &str = "[Input] Given concept: ";
pub const INPUT_TWO_CONCEPTS: &str = "[Input] Given two concepts: ";
/// Separator between the two concept names of a pair prompt.
pub const PAIR_SEPARATOR: &str = "; ";

const CONCEPT_TASK: &str = "[Task] Combine the following nouns into a representative **concept** and describe this concept in a few words.";
const CONCEPT_CRITERIA: &str = "[Additional criteria] It should encompass the given nouns without including other related nouns that do not belong to the same class. The concept should be a short noun phrase, and the description should summarize the visual properties shared by objects of this concept.";
const CONCEPT_FORMAT: &str = "[Output format] Reply with one JSON object and nothing else: {\"concept\": \"<concept name>\", \"description\": \"<short description>\"}";

const UNI_CRITERIA: &str = "[Additional criteria] You only need to describe the visual effect of the attribute without providing its function.";
const BI_CRITERIA: &str = "[Additional criteria] You only need to describe the visual effect of the attribute without providing its function. State how the attribute appears for each of the two concepts.";

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// English word for small counts, digits beyond ten.
pub fn count_word(n: usize) -> String {
    NUMBER_WORDS
        .get(n)
        .map_or_else(|| n.to_string(), |w| (*w).to_string())
}

/// Inverse of [`count_word`].
pub fn parse_count_word(word: &str) -> Option<usize> {
    NUMBER_WORDS
        .iter()
        .position(|w| w.eq_ignore_ascii_case(word))
        .or_else(|| word.parse().ok())
}

fn criteria(base: &str, domain_hint: Option<&str>) -> String {
    match domain_hint.map(str::trim).filter(|h| !h.is_empty()) {
        Some(hint) => format!("{base} {hint}"),
        None => base.to_string(),
    }
}

fn attribute_format(n: usize) -> String {
    let items: Vec<String> = (1..=n).map(|i| format!("\"<attribute {i}>\"")).collect();
    format!(
        "[Output format] Reply with one JSON object and nothing else: {{\"attributes\": [{}]}}",
        items.join(", ")
    )
}

pub fn concept_prompt(nouns: &[String], domain_hint: Option<&str>) -> String {
    format!(
        "{CONCEPT_TASK}\n\n{}\n\n{INPUT_NOUNS}{}\n\n{CONCEPT_FORMAT}",
        criteria(CONCEPT_CRITERIA, domain_hint),
        nouns.join(", ")
    )
}

pub fn uni_attribute_prompt(concept: &str, count: usize, domain_hint: Option<&str>) -> String {
    let noun = if count == 1 { "attribute" } else { "attributes" };
    format!(
        "[Task] List the {} most **representative** and **distinctive** {noun} observable from images for the given concept, which can clearly distinguish objects under this concept from other similar classes.\n\n{}\n\n{INPUT_CONCEPT}{concept}\n\n{}",
        count_word(count),
        criteria(UNI_CRITERIA, domain_hint),
        attribute_format(count)
    )
}

pub fn bi_attribute_prompt(
    first: &str,
    second: &str,
    count: usize,
    domain_hint: Option<&str>,
) -> String {
    let noun = if count == 1 { "attribute" } else { "attributes" };
    format!(
        "[Task] List {} {noun} that can distinguish two given concepts, where the specific manifestations of the {noun} allow for easy identification of objects belonging to each concept.\n\n{}\n\n{INPUT_TWO_CONCEPTS}{first}{PAIR_SEPARATOR}{second}\n\n{}",
        count_word(count),
        criteria(BI_CRITERIA, domain_hint),
        attribute_format(count)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no concept name found in reply")]
    MissingName,
    #[error("expected {expected} attributes, found {found}")]
    Shortfall { expected: usize, found: usize },
}

/// Locates the outermost `{...}` in `text` and parses it as JSON.
fn embedded_json(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn clean(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '*' || c == '"' || c == '\'' || c == '`')
        .trim()
        .trim_end_matches(['.', ','])
        .trim()
        .to_string()
}

/// Value after a `key:` prefix, tolerating markdown emphasis and case.
fn keyed_line<'a>(line: &'a str, keys: &[&str]) -> Option<&'a str> {
    let bare = line
        .trim()
        .trim_start_matches(['-', '*', '#', ' '])
        .trim_start_matches("**");
    let (key, rest) = bare.split_once(':')?;
    let key = key.trim().trim_matches('*').trim().to_ascii_lowercase();
    keys.contains(&key.as_str()).then_some(rest)
}

/// Parses `(name, description)` from a concept reply: JSON first, then
/// `Concept:` / `Description:` lines.
pub fn parse_concept(text: &str) -> Result<(String, String), ParseError> {
    if let Some(v) = embedded_json(text) {
        let name = ["concept", "name"]
            .iter()
            .find_map(|k| v.get(k).and_then(Value::as_str))
            .map(clean)
            .unwrap_or_default();
        let desc = v
            .get("description")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if !name.is_empty() {
            return Ok((name, desc));
        }
    }
    let mut name = None;
    let mut desc = None;
    for line in text.lines() {
        if name.is_none() {
            if let Some(v) = keyed_line(line, &["concept", "name", "concept name"]) {
                name = Some(clean(v));
                continue;
            }
        }
        if desc.is_none() {
            if let Some(v) = keyed_line(line, &["description"]) {
                desc = Some(v.trim().to_string());
            }
        }
    }
    match name.filter(|n| !n.is_empty()) {
        Some(n) => Ok((n, desc.unwrap_or_default())),
        None => Err(ParseError::MissingName),
    }
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

/// Parses exactly `count` attribute strings: JSON `attributes` array (or a
/// bare JSON array), then list-style lines. Extra items are dropped.
pub fn parse_attributes(text: &str, count: usize) -> Result<Vec<String>, ParseError> {
    let from_json = embedded_json(text)
        .and_then(|v| v.get("attributes").cloned())
        .or_else(|| {
            let start = text.find('[')?;
            let end = text.rfind(']')?;
            serde_json::from_str::<Value>(text.get(start..=end)?).ok()
        })
        .and_then(|v| {
            v.as_array().map(|a| {
                a.iter()
                    .filter_map(|x| match x {
                        Value::String(s) => Some(clean(s)),
                        Value::Object(o) => o
                            .values()
                            .filter_map(Value::as_str)
                            .next()
                            .map(clean),
                        _ => None,
                    })
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
            })
        });
    let items = match from_json {
        Some(items) if !items.is_empty() => items,
        _ => text
            .lines()
            .map(strip_list_marker)
            .filter(|l| !l.is_empty() && !l.starts_with('[') && !l.ends_with(':'))
            .map(|l| match keyed_line(l, &["attribute", "attributes"]) {
                Some(v) => clean(v),
                None => clean(l),
            })
            .filter(|s| !s.is_empty())
            .collect(),
    };
    if items.len() < count {
        return Err(ParseError::Shortfall {
            expected: count,
            found: items.len(),
        });
    }
    Ok(items.into_iter().take(count).collect())
}
