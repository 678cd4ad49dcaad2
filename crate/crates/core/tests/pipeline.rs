mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{brute_force_max_total, unit_cube, WALKTHROUGHS};
use glis::baol::{iou_matrix, Proposal};
use glis::evaluator::GroundTruthObject;
use glis::geometry::{Point3, ProjectionMatrix};
use glis::glci::{Detection, Transcript};
use glis::pipeline::config::Config;
use glis::pipeline::schema::{
    kb_to_json, list_to_json, load_doc, load_kb, load_list, parse_value, to_json, to_jsonl,
    AssignmentsDoc, Caption, DetectionsDoc, ReportDoc, SceneRecord, ScenesDoc,
};
use glis::pipeline::{load_config, run_stage, validate_file, RunOptions, SchemaName, Stage};
use glis::rplg::{DropRecord, Label2D, PseudoLabel3D, ScoreRecord};
use glis::synthbench::default_kb;
use serde_json::{json, Value};
use tempfile::TempDir;

fn glis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glis")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn config_file(dir: &Path, body: Value) -> PathBuf {
    let path = dir.join("config.json");
    write(&path, &serde_json::to_string_pretty(&body).unwrap());
    path
}

/// A synthetic workspace: config plus generated scenes.
fn synth_workspace(num_scenes: usize) -> (TempDir, Config) {
    let dir = TempDir::new().unwrap();
    let path = config_file(
        dir.path(),
        json!({"seed": 7, "workers": 2, "trials": 3, "synth": {"num_scenes": num_scenes}}),
    );
    let cfg = load_config(&path).unwrap();
    run_stage(Stage::Synth, &cfg, &RunOptions::default()).unwrap();
    (dir, cfg)
}

fn run_all(cfg: &Config) {
    for stage in [Stage::Rplg, Stage::BaolLabel, Stage::Infer, Stage::Eval] {
        run_stage(stage, cfg, &RunOptions::default()).unwrap();
    }
}

/// Every file under `root`, relative path to contents.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn changed(before: &BTreeMap<PathBuf, Vec<u8>>, after: &BTreeMap<PathBuf, Vec<u8>>) -> Vec<String> {
    let mut names: Vec<String> = after
        .iter()
        .filter(|(k, v)| before.get(*k) != Some(*v))
        .map(|(k, _)| k.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names.dedup();
    names
}

/// Hand-built scene directory with a scenes file and kb.
fn fixture_scene(dir: &Path, scene_id: &str, proposals: &[Proposal], global: Vec<f64>) -> PathBuf {
    let scene_dir = dir.join("scenes").join(scene_id);
    let pts = vec![Point3::new(0.0, 0.0, 1.0)];
    write(&scene_dir.join("points.json"), &list_to_json(&pts));
    write(&scene_dir.join("proposals.json"), &list_to_json(proposals));
    let rec = SceneRecord {
        scene_id: scene_id.into(),
        points: PathBuf::from("scenes").join(scene_id).join("points.json"),
        projection: ProjectionMatrix::identity(),
        proposals: PathBuf::from("scenes").join(scene_id).join("proposals.json"),
        global_feature: global,
        ground_truth: None,
        labels_2d: None,
        scores: None,
    };
    let doc = ScenesDoc {
        schema_version: 1,
        scenes: vec![rec],
    };
    write(&dir.join("scenes.json"), &to_json(&doc));
    write(&dir.join("kb.json"), &kb_to_json(&default_kb()));
    config_file(dir, json!({"workers": 1}))
}

#[test]
fn config_defaults_and_errors() {
    let c = Config::from_json_str("").unwrap();
    assert_eq!((c.phi_clip, c.phi_obj, c.phi_low, c.phi_high, c.phi_keep), (0.5, 0.1, 0.25, 0.6, 0.75));
    assert_eq!(c.iou_threshold, 0.25);
    assert_eq!(c.weights.lambda1, 4.0);
    let dir = TempDir::new().unwrap();
    let path = config_file(dir.path(), json!({"phi_low": 0.3, "paths": {"out_dir": "results"}}));
    let c = load_config(&path).unwrap();
    assert_eq!(c.phi_low, 0.3);
    assert_eq!(c.paths.out_dir, dir.path().join("results"));
    for bad in [json!({"phi_keep": 1.5}), json!({"trim": 0.5}), json!({"schema_version": 2}), json!({"nope": 1})] {
        let err = Config::from_json_str(&bad.to_string()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}");
    }
    assert_eq!(load_config(&dir.path().join("missing.json")).unwrap_err().exit_code(), 4);
}

#[test]
fn cli_exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(glis(&["eval", "--config", missing.to_str().unwrap()]).status.code(), Some(4));

    let bad = config_file(dir.path(), json!({"phi_keep": 2.0}));
    let out = glis(&["infer", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phi_keep"));

    let w = &WALKTHROUGHS[0];
    let kb = default_kb();
    let cfg = fixture_scene(dir.path(), "conf", &w.proposals(&kb), w.global_feature(&kb));
    let cfg = cfg.to_str().unwrap();
    // Nothing listens on port 9 of the loopback interface.
    let out = Command::new(env!("CARGO_BIN_EXE_glis"))
        .args(["infer", "--config", cfg, "--backend", "http"])
        .env("GLIS_LLM_ENDPOINT", "http://127.0.0.1:9/")
        .env("GLIS_LLM_TIMEOUT_MS", "500")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("out/conf/transcript.partial.jsonl").is_file());
    assert!(!dir.path().join("out/conf/detections.json").exists());

    assert_eq!(glis(&["infer", "--config", cfg, "--scene", "elsewhere"]).status.code(), Some(4));
    let out = glis(&["infer", "--config", cfg, "--scene", "conf"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["stage"], "infer");

    let out = glis(&["losses-check", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient"));
}

#[test]
fn validate_reports_pointers() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("proposals.json");
    let p = |w: f64, f: Vec<f64>| json!({"box": [0, 0, 0, 1, w, 1, 0], "objectness": 0.5, "feature": f});
    write(&good, &json!({"schema_version": 1, "records": [p(1.0, vec![0.1, 0.2]), p(2.0, vec![0.3, 0.4])]}).to_string());
    assert!(validate_file(&good, SchemaName::Proposals).unwrap().is_empty());
    let out = glis(&["validate", good.to_str().unwrap(), "--schema", "proposals"]);
    assert_eq!(out.status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    write(&bad, &json!({"schema_version": 1, "records": [p(1.0, vec![0.0]), p(-1.0, vec![0.0])]}).to_string());
    let v = validate_file(&bad, SchemaName::Proposals).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].pointer, "/records/1/box/4");
    let out = glis(&["validate", bad.to_str().unwrap(), "--schema", "proposals"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/records/1/box/4"));

    let mixed = dir.path().join("mixed.json");
    let records: Vec<Value> = [2, 2, 3, 2, 1].iter().map(|&n| p(1.0, vec![0.5; n])).collect();
    write(&mixed, &Value::Array(records).to_string());
    let v = validate_file(&mixed, SchemaName::Proposals).unwrap();
    let pointers: Vec<&str> = v.iter().map(|x| x.pointer.as_str()).collect();
    assert_eq!(pointers, ["/2/feature", "/4/feature"]);

    let garbage = dir.path().join("garbage.json");
    write(&garbage, "{not json");
    assert_eq!(validate_file(&garbage, SchemaName::Scores).unwrap().len(), 1);
    assert_eq!(glis(&["validate", "/nonexistent/x.json", "--schema", "scores"]).status.code(), Some(4));
    assert_eq!(glis(&["validate", good.to_str().unwrap(), "--schema", "bogus"]).status.code(), Some(2));
}

fn roundtrip_list<T: serde::de::DeserializeOwned + serde::Serialize>(path: &Path, schema: SchemaName) {
    let text = std::fs::read_to_string(path).unwrap();
    let items: Vec<T> = load_list(path, schema).unwrap();
    assert_eq!(list_to_json(&items), text, "{}", path.display());
}

fn roundtrip_doc<T: serde::de::DeserializeOwned + serde::Serialize>(path: &Path, schema: SchemaName) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc: T = load_doc(path, schema).unwrap();
    assert_eq!(to_json(&doc), text, "{}", path.display());
}

#[test]
fn every_schema_round_trips_byte_for_byte() {
    let (dir, cfg) = synth_workspace(2);
    run_all(&cfg);
    let root = dir.path();
    let s = root.join("scenes/scene0000");
    let o = root.join("out/scene0000");
    roundtrip_doc::<ScenesDoc>(&root.join("scenes.json"), SchemaName::Scenes);
    roundtrip_list::<Point3>(&s.join("points.json"), SchemaName::Points);
    roundtrip_list::<Proposal>(&s.join("proposals.json"), SchemaName::Proposals);
    roundtrip_list::<GroundTruthObject>(&s.join("ground_truth.json"), SchemaName::GroundTruth);
    roundtrip_list::<Label2D>(&s.join("labels_2d.json"), SchemaName::Labels2d);
    roundtrip_list::<ScoreRecord>(&s.join("scores.json"), SchemaName::Scores);
    roundtrip_list::<PseudoLabel3D>(&o.join("pseudo_labels.json"), SchemaName::PseudoLabels);
    roundtrip_doc::<AssignmentsDoc>(&o.join("assignments.json"), SchemaName::Assignments);
    roundtrip_doc::<DetectionsDoc>(&o.join("detections.json"), SchemaName::Detections);
    roundtrip_doc::<ReportDoc>(&root.join("out/report.json"), SchemaName::Report);
    let kb_text = std::fs::read_to_string(root.join("kb.json")).unwrap();
    assert_eq!(kb_to_json(&load_kb(&root.join("kb.json")).unwrap()), kb_text);

    let transcript = std::fs::read_to_string(o.join("transcript.jsonl")).unwrap();
    assert!(validate_file(&o.join("transcript.jsonl"), SchemaName::Transcript).unwrap().is_empty());
    assert_eq!(Transcript::from_jsonl(&transcript).unwrap().to_jsonl(), transcript);

    let drops = vec![DropRecord {
        patch_id: "p3".into(),
        reason: "too few points".into(),
    }];
    let text = to_jsonl(&drops);
    let back: Vec<DropRecord> = serde_json::from_value(parse_value(&text, SchemaName::Drops).unwrap()).unwrap();
    assert_eq!(to_jsonl(&back), text);

    let captions = root.join("captions.json");
    let c = vec![Caption {
        scene_id: "scene0000".into(),
        scene_type: "library".into(),
        description: "There is a bookshelf containing numerous books.".into(),
    }];
    write(&captions, &list_to_json(&c));
    roundtrip_list::<Caption>(&captions, SchemaName::Captions);

    // Bare arrays are accepted on input.
    let bare = root.join("bare.json");
    write(&bare, &serde_json::to_string(&c).unwrap());
    assert_eq!(load_list::<Caption>(&bare, SchemaName::Captions).unwrap(), c);
}

#[test]
fn stages_are_deterministic() {
    let (a, ca) = synth_workspace(3);
    let (b, cb) = synth_workspace(3);
    run_all(&ca);
    run_all(&cb);
    run_stage(Stage::Experiment, &ca, &RunOptions::default()).unwrap();
    run_stage(Stage::Experiment, &cb, &RunOptions::default()).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(sb[k] == *v, "{} differs", k.display());
    }
    // Serial and parallel scene processing agree.
    let serial = Config { workers: 1, ..cb.clone() };
    run_all(&serial);
    assert_eq!(snapshot(b.path()), sb);
}

#[test]
fn stages_touch_only_their_outputs() {
    let (dir, cfg) = synth_workspace(2);
    let expected: [(Stage, &[&str]); 4] = [
        (Stage::Rplg, &["drops.jsonl", "pseudo_labels.json"]),
        (Stage::BaolLabel, &["assignments.json"]),
        (Stage::Infer, &["detections.json", "transcript.jsonl"]),
        (Stage::Eval, &["report.json"]),
    ];
    for (stage, files) in expected {
        let before = snapshot(dir.path());
        run_stage(stage, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(changed(&before, &snapshot(dir.path())), files, "{stage}");
    }
    let before = snapshot(dir.path());
    run_stage(Stage::LossesCheck, &cfg, &RunOptions::default()).unwrap();
    assert!(changed(&before, &snapshot(dir.path())).is_empty());
}

#[test]
fn stage_inputs_missing() {
    let (_dir, cfg) = synth_workspace(1);
    let err = run_stage(Stage::BaolLabel, &cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    let err = run_stage(Stage::Eval, &cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn baol_label_matches_oracle() {
    let dir = TempDir::new().unwrap();
    let a = unit_cube(0.0, 0.0, 0.0);
    let b = unit_cube(0.0526 + 0.212, 0.0, 0.0);
    let proposals: Vec<Proposal> = [a, b]
        .iter()
        .map(|&bbox| Proposal {
            bbox,
            objectness: 0.5,
            feature: vec![1.0],
        })
        .collect();
    let labels = [unit_cube(0.0526, 0.0, 0.0), unit_cube(-0.25, 0.0, 0.0)];
    let cfg_path = fixture_scene(dir.path(), "s", &proposals, vec![1.0]);
    let pseudo: Vec<PseudoLabel3D> = labels
        .iter()
        .map(|&bbox| PseudoLabel3D {
            bbox,
            class_name: "chair".into(),
            phi_pos: 0.9,
        })
        .collect();
    write(&dir.path().join("out/s/pseudo_labels.json"), &list_to_json(&pseudo));
    let cfg = load_config(&cfg_path).unwrap();
    run_stage(Stage::BaolLabel, &cfg, &RunOptions::default()).unwrap();
    let doc: AssignmentsDoc = load_doc(&dir.path().join("out/s/assignments.json"), SchemaName::Assignments).unwrap();
    let total: f64 = doc.pairs.iter().map(|p| p.iou).sum();
    let oracle = brute_force_max_total(&iou_matrix(&[a, b], &labels));
    assert!((total - oracle).abs() <= 1e-12, "{total} vs {oracle}");
    let pairs: Vec<(usize, usize)> = doc.pairs.iter().map(|p| (p.proposal, p.label)).collect();
    assert_eq!(pairs, [(0, 1), (1, 0)]);
    assert_eq!(doc.y, [1, 1]);
}

#[test]
fn infer_removes_conference_room_bed() {
    let dir = TempDir::new().unwrap();
    let w = &WALKTHROUGHS[0];
    let kb = default_kb();
    let cfg = load_config(&fixture_scene(dir.path(), "conf", &w.proposals(&kb), w.global_feature(&kb))).unwrap();
    run_stage(Stage::Infer, &cfg, &RunOptions::default()).unwrap();
    let doc: DetectionsDoc = load_doc(&dir.path().join("out/conf/detections.json"), SchemaName::Detections).unwrap();
    assert_eq!(doc.scene_type, "conference room");
    let classes: Vec<&str> = doc.detections.iter().map(|d| d.class_name.as_str()).collect();
    assert_eq!(classes, ["sofa", "chair", "table"]);
    assert_eq!(doc.removed.len(), 1);
    assert_eq!(doc.removed[0].class_name, "bed");
    let transcript = std::fs::read_to_string(dir.path().join("out/conf/transcript.jsonl")).unwrap();
    assert_eq!(transcript, std::fs::read_to_string(w.golden()).unwrap());
}

#[test]
fn eval_on_perfect_detections() {
    let (dir, cfg) = synth_workspace(3);
    let scenes: ScenesDoc = load_doc(&cfg.paths.scenes, SchemaName::Scenes).unwrap();
    for s in &scenes.scenes {
        let gt: Vec<GroundTruthObject> =
            load_list(&dir.path().join(s.ground_truth.as_ref().unwrap()), SchemaName::GroundTruth).unwrap();
        let doc = DetectionsDoc {
            schema_version: 1,
            scene_id: s.scene_id.clone(),
            scene_type: "unknown".into(),
            description: String::new(),
            detections: gt.iter().map(|g| Detection::new(g.bbox, g.class_name.clone(), 0.9)).collect(),
            removed: vec![],
        };
        write(&dir.path().join("out").join(&s.scene_id).join("detections.json"), &to_json(&doc));
    }
    let out = run_stage(Stage::Eval, &cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.summary["map"], 1.0);
    assert!(out.table.unwrap().contains("mAP"));
    let report: ReportDoc = load_doc(&dir.path().join("out/report.json"), SchemaName::Report).unwrap();
    assert_eq!(report.report.map_value, 1.0);
}

#[test]
fn experiment_stage_outputs() {
    let (dir, cfg) = synth_workspace(1);
    let opts = RunOptions {
        trials: Some(2),
        ..Default::default()
    };
    let out = run_stage(Stage::Experiment, &cfg, &opts).unwrap();
    assert_eq!(out.summary["summary"]["trials"], 2);
    let results = std::fs::read_to_string(dir.path().join("out/experiment/results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(dir.path().join("out/experiment/summary.json").is_file());
    assert!(out.table.unwrap().lines().last().unwrap().starts_with("mAP"));
}
