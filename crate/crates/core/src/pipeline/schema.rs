//! Interchange documents and their (de)serialization.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::validate::validate_value;
use super::{PipelineError, SCHEMA_VERSION};
use crate::baol::MatchPair;
use crate::evaluator::EvalReport;
use crate::geometry::ProjectionMatrix;
use crate::glci::{Detection, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaName {
    Scenes,
    Points,
    Proposals,
    PseudoLabels,
    Scores,
    Labels2d,
    Captions,
    Kb,
    GroundTruth,
    Transcript,
    Drops,
    Report,
    Detections,
    Assignments,
}

impl SchemaName {
    pub const ALL: [SchemaName; 14] = [
        SchemaName::Scenes,
        SchemaName::Points,
        SchemaName::Proposals,
        SchemaName::PseudoLabels,
        SchemaName::Scores,
        SchemaName::Labels2d,
        SchemaName::Captions,
        SchemaName::Kb,
        SchemaName::GroundTruth,
        SchemaName::Transcript,
        SchemaName::Drops,
        SchemaName::Report,
        SchemaName::Detections,
        SchemaName::Assignments,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemaName::Scenes => "scenes",
            SchemaName::Points => "points",
            SchemaName::Proposals => "proposals",
            SchemaName::PseudoLabels => "pseudo_labels",
            SchemaName::Scores => "scores",
            SchemaName::Labels2d => "labels_2d",
            SchemaName::Captions => "captions",
            SchemaName::Kb => "kb",
            SchemaName::GroundTruth => "ground_truth",
            SchemaName::Transcript => "transcript",
            SchemaName::Drops => "drops",
            SchemaName::Report => "report",
            SchemaName::Detections => "detections",
            SchemaName::Assignments => "assignments",
        }
    }

    /// Line-delimited JSON rather than a single document.
    pub fn is_jsonl(&self) -> bool {
        matches!(self, SchemaName::Transcript | SchemaName::Drops)
    }

    /// Stored as a list of records.
    pub fn is_list(&self) -> bool {
        matches!(
            self,
            SchemaName::Points
                | SchemaName::Proposals
                | SchemaName::PseudoLabels
                | SchemaName::Scores
                | SchemaName::Labels2d
                | SchemaName::Captions
                | SchemaName::GroundTruth
        )
    }
}

impl fmt::Display for SchemaName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_end_matches(".jsonl").trim_end_matches(".json");
        SchemaName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown schema {s:?}"))
    }
}

/// One scene's inputs. Paths are relative to the scenes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: String,
    pub points: PathBuf,
    pub projection: ProjectionMatrix,
    pub proposals: PathBuf,
    pub global_feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_2d: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenesDoc {
    pub schema_version: u32,
    pub scenes: Vec<SceneRecord>,
}

/// Scene caption produced by an image captioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub scene_id: String,
    pub scene_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbDoc {
    pub schema_version: u32,
    #[serde(flatten)]
    pub kb: KnowledgeBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub schema_version: u32,
    pub scene_id: String,
    pub scene_type: String,
    pub description: String,
    pub detections: Vec<Detection>,
    pub removed: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentsDoc {
    pub schema_version: u32,
    pub scene_id: String,
    pub y: Vec<u8>,
    pub pairs: Vec<MatchPair>,
    pub unmatched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Serialize)]
struct ListDoc<'a, T> {
    schema_version: u32,
    records: &'a [T],
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

pub fn list_to_json<T: Serialize>(records: &[T]) -> String {
    to_json(&ListDoc {
        schema_version: SCHEMA_VERSION,
        records,
    })
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Parses a file into a JSON value; JSON-lines files become an array.
pub fn parse_value(text: &str, schema: SchemaName) -> Result<Value, String> {
    if schema.is_jsonl() {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            items.push(
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?,
            );
        }
        Ok(Value::Array(items))
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

fn checked_value(path: &Path, schema: SchemaName) -> Result<Value, PipelineError> {
    let text = read_text(path)?;
    let value = parse_value(&text, schema)
        .map_err(|e| PipelineError::Schema(format!("{}: {e}", path.display())))?;
    let violations = validate_value(&value, schema);
    if !violations.is_empty() {
        let details: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(PipelineError::Invalid {
            path: path.to_path_buf(),
            count: violations.len(),
            details: details.join("; "),
        });
    }
    Ok(value)
}

fn deserialize<T: DeserializeOwned>(path: &Path, value: Value) -> Result<T, PipelineError> {
    serde_json::from_value(value).map_err(|e| PipelineError::Schema(format!("{}: {e}", path.display())))
}

/// Loads a list file (enveloped or bare array) after validation.
pub fn load_list<T: DeserializeOwned>(path: &Path, schema: SchemaName) -> Result<Vec<T>, PipelineError> {
    let value = checked_value(path, schema)?;
    let items = match value {
        Value::Object(mut m) => m.remove("records").unwrap_or(Value::Array(vec![])),
        other => other,
    };
    deserialize(path, items)
}

/// Loads a single-document or JSON-lines file after validation.
pub fn load_doc<T: DeserializeOwned>(path: &Path, schema: SchemaName) -> Result<T, PipelineError> {
    let value = checked_value(path, schema)?;
    deserialize(path, value)
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, PipelineError> {
    let doc: KbDoc = load_doc(path, SchemaName::Kb)?;
    doc.kb
        .validate()
        .map_err(|e| PipelineError::Schema(format!("{}: {e}", path.display())))?;
    Ok(doc.kb)
}

pub fn kb_to_json(kb: &KnowledgeBase) -> String {
    to_json(&KbDoc {
        schema_version: SCHEMA_VERSION,
        kb: kb.clone(),
    })
}
