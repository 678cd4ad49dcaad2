//! Language-model backends: a deterministic knowledge-base mock and an HTTP
//! client.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kb::KnowledgeBase;
use super::prompts::{parse_plausibility_prompt, parse_reclass_prompt, GLOBAL_PROMPT, LOCAL_PROMPT};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("language model transport failed: {0}")]
pub struct LlmError(pub String);

/// What accompanies a prompt: the projected feature plus whatever the session
/// already knows about the scene.
#[derive(Debug, Clone, Copy, Default)]
pub struct LlmContext<'a> {
    pub feature: Option<&'a [f64]>,
    pub scene_type: Option<&'a str>,
    pub description: Option<&'a str>,
}

impl LlmContext<'_> {
    /// Text rendering of the context for backends that cannot take vectors.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        if let Some(s) = self.scene_type {
            let _ = writeln!(out, "scene type: {s}");
        }
        if let Some(d) = self.description {
            let _ = writeln!(out, "scene description: {d}");
        }
        if let Some(f) = self.feature {
            let parts: Vec<String> = f.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "feature: [{}]", parts.join(", "));
        }
        out
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, context: &LlmContext<'_>) -> Result<String, LlmError>;

    /// Whether the backend consumes raw feature vectors.
    fn accepts_feature_context(&self) -> bool;

    /// Whether `complete` may be called concurrently.
    fn concurrent(&self) -> bool {
        true
    }
}

pub const REFUSAL: &str = "Sorry, I cannot answer that question.";
pub const NO_IDEA: &str = "I am not sure what it is.";

/// Deterministic stand-in for the language model, answering from a
/// [`KnowledgeBase`].
#[derive(Debug, Clone)]
pub struct MockLlm {
    kb: KnowledgeBase,
}

impl MockLlm {
    pub fn new(kb: KnowledgeBase) -> Result<Self, super::kb::KbError> {
        kb.validate()?;
        Ok(Self { kb })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    fn answer(&self, prompt: &str, context: &LlmContext<'_>) -> String {
        let kb = &self.kb;
        if prompt == GLOBAL_PROMPT {
            let Some(feature) = context.feature else {
                return REFUSAL.to_string();
            };
            let scene = &kb.scene_types[kb.decode_scene(feature)];
            return format!("It is mostly like a {scene}. {}", kb.description(scene));
        }
        if prompt == LOCAL_PROMPT {
            let Some(feature) = context.feature else {
                return REFUSAL.to_string();
            };
            return match kb.decode_class(feature, |_| true) {
                Some(c) => format!("It is a {}.", kb.classes[c]),
                None => REFUSAL.to_string(),
            };
        }
        if let Some((class, scene)) = parse_plausibility_prompt(prompt) {
            return match kb.is_plausible(scene, class) {
                Some(true) => format!("It is normal to see a {class} in a {scene}."),
                Some(false) => format!("It is not normal to see a {class} in a {scene}."),
                None => REFUSAL.to_string(),
            };
        }
        if let Some(forbidden) = parse_reclass_prompt(prompt) {
            let Some(scene) = context.scene_type else {
                return REFUSAL.to_string();
            };
            let candidates: Vec<&String> =
                kb.prior(scene).iter().filter(|c| c.as_str() != forbidden).collect();
            if candidates.is_empty() {
                return NO_IDEA.to_string();
            }
            // With an object feature, pick the candidate whose prototype is
            // nearest; the prior order breaks ties and covers the no-feature
            // case.
            let chosen = match context.feature {
                Some(f) => {
                    let mut best = candidates[0];
                    let mut best_val = f64::NEG_INFINITY;
                    for c in &candidates {
                        let axis = kb.class_prototype_axis(kb.class_index(c).unwrap_or(0));
                        let v = f.get(axis).copied().unwrap_or(0.0);
                        if v > best_val {
                            best = c;
                            best_val = v;
                        }
                    }
                    best
                }
                None => candidates[0],
            };
            return format!("It is probably a {chosen}.");
        }
        REFUSAL.to_string()
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, prompt: &str, context: &LlmContext<'_>) -> Result<String, LlmError> {
        Ok(self.answer(prompt, context))
    }

    fn accepts_feature_context(&self) -> bool {
        true
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    context_digest: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    answer: String,
}

/// `POST {prompt, context_digest}` → `{answer}` against a remote endpoint.
pub struct HttpLlm {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    concurrent: bool,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retries,
            concurrent: true,
        }
    }

    pub fn serial(mut self) -> Self {
        self.concurrent = false;
        self
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str, context: &LlmContext<'_>) -> Result<String, LlmError> {
        let body = CompletionRequest {
            prompt,
            context_digest: context.digest(),
        };
        let mut last = String::from("no attempt made");
        for _ in 0..=self.retries {
            match self.agent.post(&self.endpoint).send_json(&body) {
                Ok(resp) => match resp.into_json::<CompletionResponse>() {
                    Ok(r) => return Ok(r.answer),
                    Err(e) => last = format!("bad response body: {e}"),
                },
                Err(e) => last = e.to_string(),
            }
        }
        Err(LlmError(last))
    }

    fn accepts_feature_context(&self) -> bool {
        false
    }

    fn concurrent(&self) -> bool {
        self.concurrent
    }
}
