//! Global-local collaborative inference.
//!
//! One session per scene walks three question stages against a language
//! model:
//!
//! 1. **global**: the scene feature is described and typed;
//! 2. **local**: each selected proposal's feature is named from the
//!    vocabulary;
//! 3. **collaborative**: every predicted class is checked for plausibility
//!    in the scene. Detections of implausible classes are removed when their
//!    objectness is below the keep threshold and otherwise re-queried for a
//!    better class.
//!
//! Every question, answer and resulting decision is appended to a
//! [`Transcript`].

pub mod client;
pub mod kb;
pub mod prompts;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baol::Proposal;
use crate::geometry::Box3D;

pub use client::{HttpLlm, LlmClient, LlmContext, LlmError, MockLlm};
pub use kb::{KbError, KnowledgeBase};
pub use prompts::{
    parse_reclass, parse_verdict, render_plausibility_prompt, render_reclass_prompt, Verdict,
    VerdictValue, GLOBAL_PROMPT, LOCAL_PROMPT,
};

pub const DEFAULT_PHI_KEEP: f64 = 0.75;

/// Scene type used when the global answer names no known scene.
pub const UNKNOWN_SCENE: &str = "unknown";
/// Class used when the local answer names no vocabulary term.
pub const UNKNOWN_CLASS: &str = "unknown";

#[derive(Debug, Error)]
pub enum GlciError {
    #[error("name must not be empty")]
    EmptyName,
    #[error("global feature is empty")]
    EmptyFeature,
    #[error("{source}")]
    Transport {
        source: LlmError,
        transcript: Transcript,
    },
}

impl GlciError {
    pub fn partial_transcript(&self) -> Option<&Transcript> {
        match self {
            GlciError::Transport { transcript, .. } => Some(transcript),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub scene_type: String,
    pub description: String,
    pub global_feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionStatus {
    Initial,
    Confirmed,
    Removed,
    Reclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class_name: String,
    pub objectness: f64,
    pub feature: Vec<f64>,
    pub status: DetectionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_class: Option<String>,
    /// Set when an answer could not be parsed and a default was kept.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

impl Detection {
    pub fn new(bbox: Box3D, class_name: impl Into<String>, objectness: f64) -> Self {
        Self {
            bbox,
            class_name: class_name.into(),
            objectness,
            feature: Vec::new(),
            status: DetectionStatus::Initial,
            original_class: None,
            flagged: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Global,
    Local,
    Collaborative,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Global => "global",
            Stage::Local => "local",
            Stage::Collaborative => "collaborative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub stage: Stage,
    pub prompt: String,
    pub answer: String,
    pub decision: String,
}

/// Decision prefixes used in collaborative records.
pub mod decision {
    pub const VERDICT: &str = "verdict:";
    pub const REMOVED: &str = "removed:";
    pub const RECLASSIFIED: &str = "reclassified:";
    pub const KEPT_FLAGGED: &str = "kept (flagged):";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn push(&mut self, stage: Stage, prompt: &str, answer: &str, decision: impl Into<String>) {
        self.records.push(TranscriptRecord {
            stage,
            prompt: prompt.to_string(),
            answer: answer.to_string(),
            decision: decision.into(),
        });
    }

    pub fn count_decisions(&self, prefix: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.decision.starts_with(prefix))
            .count()
    }

    /// One JSON object per line, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("transcript record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

fn ask(
    client: &dyn LlmClient,
    prompt: &str,
    context: &LlmContext<'_>,
    transcript: &Transcript,
) -> Result<String, GlciError> {
    client
        .complete(prompt, context)
        .map_err(|source| GlciError::Transport {
            source,
            transcript: transcript.clone(),
        })
}

/// Asks for the scene type and description of a global feature.
pub fn global_qa(
    client: &dyn LlmClient,
    f_glob: &[f64],
    scene_types: &[String],
    transcript: &mut Transcript,
) -> Result<SceneContext, GlciError> {
    if f_glob.is_empty() {
        return Err(GlciError::EmptyFeature);
    }
    let ctx = LlmContext {
        feature: Some(f_glob),
        ..Default::default()
    };
    let answer = ask(client, GLOBAL_PROMPT, &ctx, transcript)?;
    let scene_type = prompts::first_scene_mention(&answer, scene_types)
        .cloned()
        .unwrap_or_else(|| UNKNOWN_SCENE.to_string());
    transcript.push(
        Stage::Global,
        GLOBAL_PROMPT,
        &answer,
        format!("scene type: {scene_type}"),
    );
    Ok(SceneContext {
        scene_type,
        description: answer,
        global_feature: f_glob.to_vec(),
    })
}

/// Names every proposal from `vocabulary`.
pub fn local_qa(
    client: &dyn LlmClient,
    proposals: &[Proposal],
    vocabulary: &[String],
    transcript: &mut Transcript,
) -> Result<Vec<Detection>, GlciError> {
    let mut out = Vec::with_capacity(proposals.len());
    for (i, p) in proposals.iter().enumerate() {
        let ctx = LlmContext {
            feature: Some(&p.feature),
            ..Default::default()
        };
        let answer = ask(client, LOCAL_PROMPT, &ctx, transcript)?;
        let parsed = prompts::longest_vocabulary_match(&answer, vocabulary, None);
        let class_name = parsed.map_or(UNKNOWN_CLASS, String::as_str).to_string();
        let decision = match parsed {
            Some(c) => format!("proposal {i}: {c}"),
            None => format!("proposal {i}: {UNKNOWN_CLASS} (flagged)"),
        };
        transcript.push(Stage::Local, LOCAL_PROMPT, &answer, decision);
        out.push(Detection {
            bbox: p.bbox,
            class_name,
            objectness: p.objectness,
            feature: p.feature.clone(),
            status: DetectionStatus::Initial,
            original_class: None,
            flagged: parsed.is_none(),
        });
    }
    Ok(out)
}

/// Detections after the collaborative stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    /// Confirmed and reclassified detections, in input order.
    pub detections: Vec<Detection>,
    pub removed: Vec<Detection>,
}

/// Collaborative plausibility checks and the keep-threshold gate.
pub fn refine(
    client: &dyn LlmClient,
    detections: Vec<Detection>,
    scene: &SceneContext,
    vocabulary: &[String],
    phi_keep: f64,
    transcript: &mut Transcript,
) -> Result<RefineOutcome, GlciError> {
    let mut dets = detections;
    let mut seen = HashSet::new();
    let classes: Vec<String> = dets
        .iter()
        .filter(|d| seen.insert(d.class_name.clone()))
        .map(|d| d.class_name.clone())
        .collect();

    for class in &classes {
        let members: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].class_name == *class && dets[i].status == DetectionStatus::Initial)
            .collect();

        let verdict = if class == UNKNOWN_CLASS {
            transcript.push(
                Stage::Collaborative,
                "",
                "",
                format!("{} skipped (unrecognized class); {} kept", decision::VERDICT, members.len()),
            );
            VerdictValue::Unknown
        } else if scene.scene_type == UNKNOWN_SCENE {
            transcript.push(
                Stage::Collaborative,
                "",
                "",
                format!(
                    "{} skipped (unknown scene) for {class}; treated as plausible",
                    decision::VERDICT
                ),
            );
            VerdictValue::Unknown
        } else {
            let prompt = render_plausibility_prompt(class, &scene.scene_type)?;
            let ctx = LlmContext {
                feature: None,
                scene_type: Some(&scene.scene_type),
                description: Some(&scene.description),
            };
            let answer = ask(client, &prompt, &ctx, transcript)?;
            let v = parse_verdict(&answer).value;
            let text = match v {
                VerdictValue::Plausible => format!("plausible; {} confirmed", members.len()),
                VerdictValue::Implausible => "implausible".to_string(),
                VerdictValue::Unknown => {
                    format!("unknown, treated as plausible; {} confirmed", members.len())
                }
            };
            transcript.push(
                Stage::Collaborative,
                &prompt,
                &answer,
                format!("{} {text}", decision::VERDICT),
            );
            v
        };

        if verdict != VerdictValue::Implausible {
            for &i in &members {
                dets[i].status = DetectionStatus::Confirmed;
            }
            continue;
        }

        for &i in &members {
            let objectness = dets[i].objectness;
            if objectness < phi_keep {
                dets[i].status = DetectionStatus::Removed;
                transcript.push(
                    Stage::Collaborative,
                    "",
                    "",
                    format!(
                        "{} detection {i} ({class}, objectness {objectness}) below keep threshold {phi_keep}",
                        decision::REMOVED
                    ),
                );
                continue;
            }
            let prompt = render_reclass_prompt(class)?;
            let ctx = LlmContext {
                feature: Some(&dets[i].feature),
                scene_type: Some(&scene.scene_type),
                description: Some(&scene.description),
            };
            let answer = ask(client, &prompt, &ctx, transcript)?;
            match parse_reclass(&answer, vocabulary, class) {
                Some(new_class) => {
                    transcript.push(
                        Stage::Collaborative,
                        &prompt,
                        &answer,
                        format!(
                            "{} detection {i} from {class} to {new_class}",
                            decision::RECLASSIFIED
                        ),
                    );
                    dets[i].original_class = Some(class.clone());
                    dets[i].class_name = new_class.clone();
                    dets[i].status = DetectionStatus::Reclassified;
                }
                None => {
                    transcript.push(
                        Stage::Collaborative,
                        &prompt,
                        &answer,
                        format!(
                            "{} detection {i} stays {class}; no alternative class in answer",
                            decision::KEPT_FLAGGED
                        ),
                    );
                    dets[i].status = DetectionStatus::Confirmed;
                    dets[i].flagged = true;
                }
            }
        }
    }

    let (removed, detections): (Vec<_>, Vec<_>) = dets
        .into_iter()
        .partition(|d| d.status == DetectionStatus::Removed);
    Ok(RefineOutcome {
        detections,
        removed,
    })
}

/// Everything one scene session produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub scene: SceneContext,
    pub initial: Vec<Detection>,
    pub refined: RefineOutcome,
    pub transcript: Transcript,
}

/// Settings shared by every scene session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub scene_types: Vec<String>,
    pub vocabulary: Vec<String>,
    pub phi_keep: f64,
}

/// Global QA, local QA and refinement for one scene. `proposals` must already
/// be objectness-filtered.
pub fn run_session(
    client: &dyn LlmClient,
    cfg: &SessionConfig,
    f_glob: &[f64],
    proposals: &[Proposal],
) -> Result<SessionOutput, GlciError> {
    let mut transcript = Transcript::default();
    let scene = global_qa(client, f_glob, &cfg.scene_types, &mut transcript)?;
    let initial = local_qa(client, proposals, &cfg.vocabulary, &mut transcript)?;
    let refined = refine(
        client,
        initial.clone(),
        &scene,
        &cfg.vocabulary,
        cfg.phi_keep,
        &mut transcript,
    )?;
    Ok(SessionOutput {
        scene,
        initial,
        refined,
        transcript,
    })
}
