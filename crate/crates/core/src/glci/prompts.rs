//! Prompt templates and answer parsers for the three question stages.

use serde::{Deserialize, Serialize};

use super::GlciError;

pub const GLOBAL_PROMPT: &str = "What kind of scene is it mostly like? Describe the scene.";
pub const LOCAL_PROMPT: &str = "What is it?";

const PLAUSIBILITY_PREFIX: &str = "Is it normal to see a ";
const PLAUSIBILITY_MIDDLE: &str = " in a ";
const PLAUSIBILITY_SUFFIX: &str = "?";
const RECLASS_PREFIX: &str = "If the object is not a ";
const RECLASS_SUFFIX: &str =
    ", what is it probably based on the scene description and the object feature?";

pub fn render_plausibility_prompt(class_name: &str, scene_type: &str) -> Result<String, GlciError> {
    if class_name.trim().is_empty() || scene_type.trim().is_empty() {
        return Err(GlciError::EmptyName);
    }
    Ok(format!(
        "{PLAUSIBILITY_PREFIX}{class_name}{PLAUSIBILITY_MIDDLE}{scene_type}{PLAUSIBILITY_SUFFIX}"
    ))
}

pub fn render_reclass_prompt(class_name: &str) -> Result<String, GlciError> {
    if class_name.trim().is_empty() {
        return Err(GlciError::EmptyName);
    }
    Ok(format!("{RECLASS_PREFIX}{class_name}{RECLASS_SUFFIX}"))
}

/// Inverse of [`render_plausibility_prompt`]: `(class, scene)`.
pub fn parse_plausibility_prompt(prompt: &str) -> Option<(&str, &str)> {
    let body = prompt
        .strip_prefix(PLAUSIBILITY_PREFIX)?
        .strip_suffix(PLAUSIBILITY_SUFFIX)?;
    let (class, scene) = body.split_once(PLAUSIBILITY_MIDDLE)?;
    (!class.is_empty() && !scene.is_empty()).then_some((class, scene))
}

/// Inverse of [`render_reclass_prompt`]: the rejected class.
pub fn parse_reclass_prompt(prompt: &str) -> Option<&str> {
    let class = prompt.strip_prefix(RECLASS_PREFIX)?.strip_suffix(RECLASS_SUFFIX)?;
    (!class.is_empty()).then_some(class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictValue {
    Plausible,
    Implausible,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub raw_answer: String,
}

const NEGATIONS: &[&str] = &[
    "not normal",
    "isn't normal",
    "unusual",
    "not common",
    "uncommon",
    "unlikely",
    "not likely",
    "abnormal",
];

const AFFIRMATIONS: &[&str] = &["yes", "normal", "common", "usual", "likely", "reasonable"];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn find_phrase(haystack: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return None;
    }
    haystack.windows(phrase.len()).position(|w| w == phrase)
}

/// Reads a plausibility answer sentence by sentence; the first sentence that
/// expresses a judgement decides. Negated forms are checked before
/// affirmative ones within a sentence.
pub fn parse_verdict(answer: &str) -> Verdict {
    let negations: Vec<Vec<String>> = NEGATIONS.iter().map(|p| words(p)).collect();
    let affirmations: Vec<Vec<String>> = AFFIRMATIONS.iter().map(|p| words(p)).collect();
    let mut value = VerdictValue::Unknown;
    for sentence in answer.split(['.', '!', '?', ';', '\n']) {
        let ws = words(sentence);
        if negations.iter().any(|p| find_phrase(&ws, p).is_some()) {
            value = VerdictValue::Implausible;
            break;
        }
        if affirmations.iter().any(|p| find_phrase(&ws, p).is_some()) {
            value = VerdictValue::Plausible;
            break;
        }
    }
    Verdict {
        value,
        raw_answer: answer.to_string(),
    }
}

/// Longest vocabulary term (whole words, case-insensitive) occurring in
/// `answer`, ignoring `forbidden`. Equal lengths resolve to the earliest
/// occurrence, then vocabulary order.
pub fn longest_vocabulary_match<'v>(
    answer: &str,
    vocabulary: &'v [String],
    forbidden: Option<&str>,
) -> Option<&'v String> {
    let ws = words(answer);
    let mut best: Option<(&String, usize, usize)> = None;
    for term in vocabulary {
        if forbidden.is_some_and(|f| f.eq_ignore_ascii_case(term)) {
            continue;
        }
        let Some(pos) = find_phrase(&ws, &words(term)) else {
            continue;
        };
        let len = term.chars().count();
        let better = match best {
            None => true,
            Some((_, blen, bpos)) => len > blen || (len == blen && pos < bpos),
        };
        if better {
            best = Some((term, len, pos));
        }
    }
    best.map(|(t, _, _)| t)
}

/// First scene type mentioned in `answer`; at the same position the longer
/// name wins.
pub fn first_scene_mention<'v>(answer: &str, scene_types: &'v [String]) -> Option<&'v String> {
    let ws = words(answer);
    let mut best: Option<(&String, usize, usize)> = None;
    for scene in scene_types {
        let Some(pos) = find_phrase(&ws, &words(scene)) else {
            continue;
        };
        let len = scene.chars().count();
        let better = match best {
            None => true,
            Some((_, blen, bpos)) => pos < bpos || (pos == bpos && len > blen),
        };
        if better {
            best = Some((scene, len, pos));
        }
    }
    best.map(|(s, _, _)| s)
}

pub fn parse_reclass<'v>(answer: &str, vocabulary: &'v [String], forbidden: &str) -> Option<&'v String> {
    longest_vocabulary_match(answer, vocabulary, Some(forbidden))
}
