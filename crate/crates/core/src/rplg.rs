//! Reflected pseudo-label generation.
//!
//! 2D detections are re-scored by an image-text scorer against a positive and
//! a negative caption template. A two-way softmax turns the raw scores into a
//! confidence that the patch really shows the detected class; labels that
//! clear the threshold are lifted into 3D boxes through the camera frustum.

use std::collections::HashMap;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{lift_box_2d_to_3d, Box2D, Box3D, PointCloud, ProjectionMatrix};

/// Default reflection threshold.
pub const DEFAULT_PHI_CLIP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RplgError {
    #[error("class name must not be empty")]
    EmptyClass,
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("non-finite raw score")]
    NonFinite,
    #[error("no score for patch {patch_id:?} ({class_name})")]
    MissingScore { patch_id: String, class_name: String },
    #[error("scorer transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label2D {
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub class_name: String,
    pub patch_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionScore {
    pub pos_raw: f64,
    pub neg_raw: f64,
    pub phi_pos: f64,
    pub phi_neg: f64,
}

/// A 2D label that survived reflection filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptLabel {
    pub label: Label2D,
    pub phi_pos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel3D {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class_name: String,
    pub phi_pos: f64,
}

/// Why a kept label produced no 3D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub patch_id: String,
    pub reason: String,
}

pub fn render_templates(class_name: &str) -> Result<(String, String), RplgError> {
    if class_name.trim().is_empty() {
        return Err(RplgError::EmptyClass);
    }
    Ok((
        format!("This is a {class_name}."),
        format!("This is not a {class_name}."),
    ))
}

/// Two-way softmax over the positive and negative template scores.
pub fn reflection_score(pos_raw: f64, neg_raw: f64) -> Result<ReflectionScore, RplgError> {
    if !(pos_raw.is_finite() && neg_raw.is_finite()) {
        return Err(RplgError::NonFinite);
    }
    // Logistic form of the softmax; exp of a non-positive argument cannot
    // overflow, and equal logits give exactly one half.
    let d = pos_raw - neg_raw;
    let (mut phi_pos, mut phi_neg) = if d >= 0.0 {
        let e = (-d).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = d.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    // For |d| below about 1e-16 both round to one half; nudge by one ulp so
    // the sign of d still decides which side of one half phi_pos lands on.
    if d > 0.0 && phi_pos <= 0.5 {
        phi_pos = 0.5f64.next_up();
        phi_neg = 1.0 - phi_pos;
    } else if d < 0.0 && phi_pos >= 0.5 {
        phi_pos = 0.5f64.next_down();
        phi_neg = 1.0 - phi_pos;
    }
    Ok(ReflectionScore {
        pos_raw,
        neg_raw,
        phi_pos,
        phi_neg,
    })
}

/// Keeps the labels whose positive confidence reaches `phi_clip`.
pub fn filter_labels(
    labels: &[Label2D],
    scores: &[ReflectionScore],
    phi_clip: f64,
) -> Result<Vec<KeptLabel>, RplgError> {
    if labels.len() != scores.len() {
        return Err(RplgError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    Ok(labels
        .iter()
        .zip(scores)
        .filter(|(_, s)| s.phi_pos >= phi_clip)
        .map(|(l, s)| KeptLabel {
            label: l.clone(),
            phi_pos: s.phi_pos,
        })
        .collect())
}

/// Lifts every kept label; labels whose lift fails are reported, not fatal.
pub fn generate_pseudo_labels(
    kept: &[KeptLabel],
    cloud: &PointCloud,
    m: &ProjectionMatrix,
    trim: f64,
) -> (Vec<PseudoLabel3D>, Vec<DropRecord>) {
    let mut labels = Vec::with_capacity(kept.len());
    let mut drops = Vec::new();
    for k in kept {
        match lift_box_2d_to_3d(cloud, m, &k.label.bbox, trim) {
            Ok(bbox) => labels.push(PseudoLabel3D {
                bbox,
                class_name: k.label.class_name.clone(),
                phi_pos: k.phi_pos,
            }),
            Err(e) => {
                debug!("dropping pseudo label {}: {e}", k.label.patch_id);
                drops.push(DropRecord {
                    patch_id: k.label.patch_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    (labels, drops)
}

/// Hex SHA-256 of the positive and negative templates for a class.
pub fn template_hash(class_name: &str) -> Result<String, RplgError> {
    let (pos, neg) = render_templates(class_name)?;
    let mut h = Sha256::new();
    h.update(pos.as_bytes());
    h.update([0u8]);
    h.update(neg.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// One row of a precomputed scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub patch_id: String,
    pub class_name: String,
    pub pos_raw: f64,
    pub neg_raw: f64,
}

/// Source of raw image-text similarity scores for the two templates.
pub trait ImageTextScorer: Send + Sync {
    fn score(&self, label: &Label2D) -> Result<(f64, f64), RplgError>;

    /// Whether `score` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Scores looked up from a precomputed file, keyed by patch and template hash.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    table: HashMap<(String, String), (f64, f64)>,
}

impl FileScorer {
    pub fn new(records: &[ScoreRecord]) -> Result<Self, RplgError> {
        let mut table = HashMap::with_capacity(records.len());
        for r in records {
            let key = (r.patch_id.clone(), template_hash(&r.class_name)?);
            table.insert(key, (r.pos_raw, r.neg_raw));
        }
        Ok(Self { table })
    }
}

impl ImageTextScorer for FileScorer {
    fn score(&self, label: &Label2D) -> Result<(f64, f64), RplgError> {
        let key = (label.patch_id.clone(), template_hash(&label.class_name)?);
        self.table
            .get(&key)
            .copied()
            .ok_or_else(|| RplgError::MissingScore {
                patch_id: label.patch_id.clone(),
                class_name: label.class_name.clone(),
            })
    }
}

/// Remote scorer: `POST {patch_id, positive, negative}` → `{pos_raw, neg_raw}`.
pub struct HttpScorer {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    patch_id: &'a str,
    positive: &'a str,
    negative: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    pos_raw: f64,
    neg_raw: f64,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retries,
        }
    }
}

impl ImageTextScorer for HttpScorer {
    fn score(&self, label: &Label2D) -> Result<(f64, f64), RplgError> {
        let (positive, negative) = render_templates(&label.class_name)?;
        let body = ScoreRequest {
            patch_id: &label.patch_id,
            positive: &positive,
            negative: &negative,
        };
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.agent.post(&self.endpoint).send_json(&body) {
                Ok(resp) => {
                    let r: ScoreResponse = resp
                        .into_json()
                        .map_err(|e| RplgError::Transport(e.to_string()))?;
                    return Ok((r.pos_raw, r.neg_raw));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(RplgError::Transport(last))
    }
}

/// Scores every label with `scorer`, preserving order.
pub fn score_labels(
    scorer: &dyn ImageTextScorer,
    labels: &[Label2D],
) -> Result<Vec<ReflectionScore>, RplgError> {
    labels
        .iter()
        .map(|l| {
            let (p, n) = scorer.score(l)?;
            reflection_score(p, n)
        })
        .collect()
}
