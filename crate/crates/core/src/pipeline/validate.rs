//! Structural validation of interchange files with JSON-pointer locations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::schema::{
    parse_value, AssignmentsDoc, Caption, DetectionsDoc, KbDoc, ReportDoc, SchemaName, ScenesDoc,
};
use super::SCHEMA_VERSION;
use crate::baol::Proposal;
use crate::evaluator::GroundTruthObject;
use crate::geometry::Point3;
use crate::glci::TranscriptRecord;
use crate::rplg::{DropRecord, Label2D, PseudoLabel3D, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, pointer: &str, message: impl Into<String>) {
        self.out.push(Violation {
            pointer: pointer.to_string(),
            message: message.into(),
        });
    }

    fn object<'a>(&mut self, v: &'a Value, ptr: &str) -> Option<&'a Map<String, Value>> {
        let m = v.as_object();
        if m.is_none() {
            self.fail(ptr, "expected an object");
        }
        m
    }

    fn array<'a>(&mut self, v: &'a Value, ptr: &str) -> Option<&'a Vec<Value>> {
        let a = v.as_array();
        if a.is_none() {
            self.fail(ptr, "expected an array");
        }
        a
    }

    fn field<'a>(&mut self, m: &'a Map<String, Value>, key: &str, ptr: &str) -> Option<&'a Value> {
        let v = m.get(key);
        if v.is_none() {
            self.fail(ptr, format!("missing field {key:?}"));
        }
        v
    }

    fn string(&mut self, m: &Map<String, Value>, key: &str, ptr: &str) {
        if let Some(v) = self.field(m, key, ptr) {
            let p = format!("{ptr}/{key}");
            match v.as_str() {
                Some(s) if s.trim().is_empty() => self.fail(&p, "must not be empty"),
                Some(_) => {}
                None => self.fail(&p, "expected a string"),
            }
        }
    }

    fn opt_string(&mut self, m: &Map<String, Value>, key: &str, ptr: &str) {
        if m.contains_key(key) {
            self.string(m, key, ptr);
        }
    }

    fn number(&mut self, v: &Value, ptr: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(ptr, "expected a finite number");
                None
            }
        }
    }

    fn num_field(&mut self, m: &Map<String, Value>, key: &str, ptr: &str) -> Option<f64> {
        let v = self.field(m, key, ptr)?;
        self.number(v, &format!("{ptr}/{key}"))
    }

    fn unit_field(&mut self, m: &Map<String, Value>, key: &str, ptr: &str) {
        if let Some(x) = self.num_field(m, key, ptr) {
            if !(0.0..=1.0).contains(&x) {
                self.fail(&format!("{ptr}/{key}"), format!("must be in [0, 1], got {x}"));
            }
        }
    }

    fn numbers(&mut self, v: &Value, ptr: &str) -> Option<Vec<f64>> {
        let a = self.array(v, ptr)?;
        let mut xs = Vec::with_capacity(a.len());
        let mut ok = true;
        for (i, x) in a.iter().enumerate() {
            match self.number(x, &format!("{ptr}/{i}")) {
                Some(x) => xs.push(x),
                None => ok = false,
            }
        }
        ok.then_some(xs)
    }

    fn fixed_numbers(&mut self, v: &Value, len: usize, ptr: &str) -> Option<Vec<f64>> {
        let xs = self.numbers(v, ptr)?;
        if xs.len() != len {
            self.fail(ptr, format!("expected {len} numbers, got {}", xs.len()));
            return None;
        }
        Some(xs)
    }

    fn box3d(&mut self, m: &Map<String, Value>, ptr: &str) {
        let Some(v) = self.field(m, "box", ptr) else { return };
        let ptr = format!("{ptr}/box");
        if let Some(b) = self.fixed_numbers(v, 7, &ptr) {
            for (i, name) in [(3, "length"), (4, "width"), (5, "height")] {
                if b[i] <= 0.0 {
                    self.fail(&format!("{ptr}/{i}"), format!("{name} must be positive, got {}", b[i]));
                }
            }
        }
    }

    fn box2d(&mut self, m: &Map<String, Value>, ptr: &str) {
        let Some(v) = self.field(m, "box", ptr) else { return };
        let ptr = format!("{ptr}/box");
        if let Some(b) = self.fixed_numbers(v, 4, &ptr) {
            if b[0] >= b[2] {
                self.fail(&format!("{ptr}/2"), "u_max must exceed u_min");
            }
            if b[1] >= b[3] {
                self.fail(&format!("{ptr}/3"), "v_max must exceed v_min");
            }
        }
    }

    fn version(&mut self, m: &Map<String, Value>, ptr: &str) {
        if let Some(v) = self.field(m, "schema_version", ptr) {
            if v.as_u64() != Some(SCHEMA_VERSION as u64) {
                self.fail(
                    &format!("{ptr}/schema_version"),
                    format!("expected {SCHEMA_VERSION}, got {v}"),
                );
            }
        }
    }

    fn string_list(&mut self, v: &Value, ptr: &str) {
        if let Some(a) = self.array(v, ptr) {
            for (i, s) in a.iter().enumerate() {
                if !s.as_str().is_some_and(|s| !s.trim().is_empty()) {
                    self.fail(&format!("{ptr}/{i}"), "expected a non-empty string");
                }
            }
        }
    }

    fn detection(&mut self, v: &Value, ptr: &str) {
        let Some(m) = self.object(v, ptr) else { return };
        self.box3d(m, ptr);
        self.string(m, "class_name", ptr);
        self.unit_field(m, "objectness", ptr);
        if let Some(f) = self.field(m, "feature", ptr) {
            self.numbers(f, &format!("{ptr}/feature"));
        }
        if let Some(s) = self.field(m, "status", ptr) {
            let known = ["initial", "confirmed", "removed", "reclassified"];
            if !s.as_str().is_some_and(|s| known.contains(&s)) {
                self.fail(&format!("{ptr}/status"), format!("unknown status {s}"));
            }
        }
        self.opt_string(m, "original_class", ptr);
    }

    /// Per-record checks for list schemas; `lengths` collects feature lengths.
    fn record(&mut self, schema: SchemaName, v: &Value, ptr: &str, lengths: &mut Vec<(String, usize)>) {
        if schema == SchemaName::Points {
            self.fixed_numbers(v, 3, ptr);
            return;
        }
        let Some(m) = self.object(v, ptr) else { return };
        match schema {
            SchemaName::Proposals => {
                self.box3d(m, ptr);
                self.unit_field(m, "objectness", ptr);
                if let Some(f) = self.field(m, "feature", ptr) {
                    let p = format!("{ptr}/feature");
                    if let Some(xs) = self.numbers(f, &p) {
                        lengths.push((p, xs.len()));
                    }
                }
            }
            SchemaName::PseudoLabels => {
                self.box3d(m, ptr);
                self.string(m, "class_name", ptr);
                self.unit_field(m, "phi_pos", ptr);
            }
            SchemaName::Scores => {
                self.string(m, "patch_id", ptr);
                self.string(m, "class_name", ptr);
                self.num_field(m, "pos_raw", ptr);
                self.num_field(m, "neg_raw", ptr);
            }
            SchemaName::Labels2d => {
                self.box2d(m, ptr);
                self.string(m, "class_name", ptr);
                self.string(m, "patch_id", ptr);
            }
            SchemaName::Captions => {
                self.string(m, "scene_id", ptr);
                self.string(m, "scene_type", ptr);
                self.string(m, "description", ptr);
            }
            SchemaName::GroundTruth => {
                self.box3d(m, ptr);
                self.string(m, "class_name", ptr);
            }
            SchemaName::Transcript => {
                if let Some(s) = self.field(m, "stage", ptr) {
                    if !s.as_str().is_some_and(|s| ["global", "local", "collaborative"].contains(&s)) {
                        self.fail(&format!("{ptr}/stage"), format!("unknown stage {s}"));
                    }
                }
                for key in ["prompt", "answer", "decision"] {
                    if let Some(s) = self.field(m, key, ptr) {
                        if !s.is_string() {
                            self.fail(&format!("{ptr}/{key}"), "expected a string");
                        }
                    }
                }
            }
            SchemaName::Drops => {
                self.string(m, "patch_id", ptr);
                self.string(m, "reason", ptr);
            }
            _ => unreachable!("not a record schema"),
        }
    }

    /// Flags every feature whose length differs from the most common one.
    fn feature_lengths(&mut self, lengths: &[(String, usize)]) {
        let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, n) in lengths {
            *freq.entry(*n).or_default() += 1;
        }
        // Most common length; the smaller length wins a tie.
        let Some((&mode, _)) = freq.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            return;
        };
        for (ptr, n) in lengths {
            if *n != mode {
                self.fail(ptr, format!("feature length {n} differs from the scene's {mode}"));
            } else if *n == 0 {
                self.fail(ptr, "feature must not be empty");
            }
        }
    }

    fn list(&mut self, schema: SchemaName, v: &Value) {
        let (items, base) = match v {
            Value::Array(a) => (a, String::new()),
            Value::Object(m) => {
                self.version(m, "");
                let Some(r) = self.field(m, "records", "") else { return };
                let Some(a) = self.array(r, "/records") else { return };
                (a, "/records".to_string())
            }
            _ => {
                self.fail("", "expected a records envelope or an array");
                return;
            }
        };
        let mut lengths = Vec::new();
        for (i, item) in items.iter().enumerate() {
            self.record(schema, item, &format!("{base}/{i}"), &mut lengths);
        }
        self.feature_lengths(&lengths);
    }

    fn document(&mut self, schema: SchemaName, v: &Value) {
        if schema.is_jsonl() {
            let Some(items) = self.array(v, "") else { return };
            for (i, item) in items.iter().enumerate() {
                self.record(schema, item, &format!("/{i}"), &mut Vec::new());
            }
            return;
        }
        if schema.is_list() {
            self.list(schema, v);
            return;
        }
        let Some(m) = self.object(v, "") else { return };
        self.version(m, "");
        match schema {
            SchemaName::Scenes => {
                let Some(s) = self.field(m, "scenes", "") else { return };
                let Some(scenes) = self.array(s, "/scenes") else { return };
                let mut dims = Vec::new();
                for (i, scene) in scenes.iter().enumerate() {
                    let ptr = format!("/scenes/{i}");
                    let Some(sm) = self.object(scene, &ptr) else { continue };
                    self.string(sm, "scene_id", &ptr);
                    self.string(sm, "points", &ptr);
                    self.string(sm, "proposals", &ptr);
                    for key in ["ground_truth", "labels_2d", "scores"] {
                        self.opt_string(sm, key, &ptr);
                    }
                    if let Some(p) = self.field(sm, "projection", &ptr) {
                        let pp = format!("{ptr}/projection");
                        if let Some(rows) = self.array(p, &pp) {
                            if rows.len() != 3 {
                                self.fail(&pp, format!("expected 3 rows, got {}", rows.len()));
                            }
                            for (r, row) in rows.iter().enumerate() {
                                self.fixed_numbers(row, 4, &format!("{pp}/{r}"));
                            }
                        }
                    }
                    if let Some(f) = self.field(sm, "global_feature", &ptr) {
                        let p = format!("{ptr}/global_feature");
                        if let Some(xs) = self.numbers(f, &p) {
                            dims.push((p, xs.len()));
                        }
                    }
                }
                self.feature_lengths(&dims);
            }
            SchemaName::Kb => {
                for key in ["scene_types", "classes"] {
                    if let Some(v) = self.field(m, key, "") {
                        self.string_list(v, &format!("/{key}"));
                    }
                }
                if let Some(p) = self.field(m, "plausible", "") {
                    if let Some(pm) = self.object(p, "/plausible") {
                        for (scene, row) in pm {
                            let ptr = format!("/plausible/{}", escape(scene));
                            if let Some(rm) = self.object(row, &ptr) {
                                for (class, b) in rm {
                                    if !b.is_boolean() {
                                        self.fail(&format!("{ptr}/{}", escape(class)), "expected a boolean");
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(p) = self.field(m, "class_prior", "") {
                    if let Some(rows) = self.array(p, "/class_prior") {
                        for (i, row) in rows.iter().enumerate() {
                            self.string_list(row, &format!("/class_prior/{i}"));
                        }
                    }
                }
                if self.out.is_empty() {
                    if let Ok(doc) = serde_json::from_value::<KbDoc>(v.clone()) {
                        if let Err(e) = doc.kb.validate() {
                            self.fail("", e.to_string());
                        }
                    }
                }
            }
            SchemaName::Report => {
                if let Some(ap) = self.field(m, "per_class_ap", "") {
                    if let Some(am) = self.object(ap, "/per_class_ap") {
                        for (c, x) in am {
                            self.number(x, &format!("/per_class_ap/{}", escape(c)));
                        }
                    }
                }
                self.unit_field(m, "map", "");
                if let Some(c) = self.field(m, "counts", "") {
                    self.object(c, "/counts");
                }
            }
            SchemaName::Detections => {
                self.string(m, "scene_id", "");
                self.string(m, "scene_type", "");
                if let Some(d) = self.field(m, "description", "") {
                    if !d.is_string() {
                        self.fail("/description", "expected a string");
                    }
                }
                for key in ["detections", "removed"] {
                    if let Some(d) = self.field(m, key, "") {
                        if let Some(items) = self.array(d, &format!("/{key}")) {
                            for (i, item) in items.iter().enumerate() {
                                self.detection(item, &format!("/{key}/{i}"));
                            }
                        }
                    }
                }
            }
            SchemaName::Assignments => {
                self.string(m, "scene_id", "");
                if let Some(y) = self.field(m, "y", "") {
                    if let Some(ys) = self.array(y, "/y") {
                        for (i, b) in ys.iter().enumerate() {
                            if !matches!(b.as_u64(), Some(0 | 1)) {
                                self.fail(&format!("/y/{i}"), "expected 0 or 1");
                            }
                        }
                    }
                }
                for key in ["pairs", "unmatched"] {
                    if let Some(a) = self.field(m, key, "") {
                        self.array(a, &format!("/{key}"));
                    }
                }
            }
            _ => unreachable!("list schemas handled above"),
        }
    }
}

/// JSON-pointer escaping of one reference token.
fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn typed<T: DeserializeOwned>(v: &Value) -> Result<(), String> {
    serde_json::from_value::<T>(v.clone()).map(|_| ()).map_err(|e| e.to_string())
}

fn list_items(v: &Value) -> Value {
    match v {
        Value::Object(m) => m.get("records").cloned().unwrap_or(Value::Null),
        other => other.clone(),
    }
}

/// Final typed decode, catching anything the structural pass let through.
fn decode(schema: SchemaName, v: &Value) -> Result<(), String> {
    let items = list_items(v);
    match schema {
        SchemaName::Scenes => typed::<ScenesDoc>(v),
        SchemaName::Points => typed::<Vec<Point3>>(&items),
        SchemaName::Proposals => typed::<Vec<Proposal>>(&items),
        SchemaName::PseudoLabels => typed::<Vec<PseudoLabel3D>>(&items),
        SchemaName::Scores => typed::<Vec<ScoreRecord>>(&items),
        SchemaName::Labels2d => typed::<Vec<Label2D>>(&items),
        SchemaName::Captions => typed::<Vec<Caption>>(&items),
        SchemaName::Kb => typed::<KbDoc>(v),
        SchemaName::GroundTruth => typed::<Vec<GroundTruthObject>>(&items),
        SchemaName::Transcript => typed::<Vec<TranscriptRecord>>(v),
        SchemaName::Drops => typed::<Vec<DropRecord>>(v),
        SchemaName::Report => typed::<ReportDoc>(v),
        SchemaName::Detections => typed::<DetectionsDoc>(v),
        SchemaName::Assignments => typed::<AssignmentsDoc>(v),
    }
}

/// Violations of `schema` in an already-parsed value; empty iff valid.
pub fn validate_value(value: &Value, schema: SchemaName) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    c.document(schema, value);
    if c.out.is_empty() {
        if let Err(e) = decode(schema, value) {
            c.fail("", e);
        }
    }
    c.out
}

/// Reads and validates a file. Unparseable JSON is reported as a single
/// violation at the root; for a scenes file, referenced paths must exist.
pub fn validate_file(path: &Path, schema: SchemaName) -> std::io::Result<Vec<Violation>> {
    let text = std::fs::read_to_string(path)?;
    let value = match parse_value(&text, schema) {
        Ok(v) => v,
        Err(e) => {
            return Ok(vec![Violation {
                pointer: String::new(),
                message: format!("not valid JSON: {e}"),
            }])
        }
    };
    let mut out = validate_value(&value, schema);
    if schema == SchemaName::Scenes && out.is_empty() {
        let base = path.parent().unwrap_or(Path::new("."));
        let scenes = value["scenes"].as_array().cloned().unwrap_or_default();
        for (i, scene) in scenes.iter().enumerate() {
            for key in ["points", "proposals", "ground_truth", "labels_2d", "scores"] {
                if let Some(rel) = scene.get(key).and_then(Value::as_str) {
                    if !base.join(rel).is_file() {
                        out.push(Violation {
                            pointer: format!("/scenes/{i}/{key}"),
                            message: format!("referenced file {rel:?} does not exist"),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
