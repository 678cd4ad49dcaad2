//! Stage runners. Each reads its inputs, writes its artifacts atomically and
//! returns a JSON summary for standard output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::checks::{format_table, run_loss_checks};
use super::config::{Config, LlmBackend, ScorerBackend};
use super::schema::{
    kb_to_json, list_to_json, load_doc, load_kb, load_list, to_json, to_jsonl, AssignmentsDoc,
    DetectionsDoc, ReportDoc, SceneRecord, SchemaName, ScenesDoc,
};
use super::{write_atomic, PipelineError, SCHEMA_VERSION};
use crate::baol::{assign_labels, match_proposals, select_proposals, Proposal};
use crate::evaluator::{evaluate, GroundTruthObject};
use crate::geometry::{Box3D, Point3, PointCloud};
use crate::glci::{run_session, GlciError, HttpLlm, KnowledgeBase, LlmClient, MockLlm, SessionConfig};
use crate::rplg::{
    filter_labels, generate_pseudo_labels, score_labels, FileScorer, HttpScorer, ImageTextScorer,
    Label2D, PseudoLabel3D, RplgError, ScoreRecord,
};
use crate::seed::derive_seed;
use crate::synthbench::{
    corrupt, default_kb, generate_scene, run_experiment, ExperimentParams, SynthConfig,
    SynthError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rplg,
    BaolLabel,
    Infer,
    Eval,
    Synth,
    LossesCheck,
    Experiment,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Rplg,
        Stage::BaolLabel,
        Stage::Infer,
        Stage::Eval,
        Stage::Synth,
        Stage::LossesCheck,
        Stage::Experiment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Rplg => "rplg",
            Stage::BaolLabel => "baol-label",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
            Stage::Synth => "synth",
            Stage::LossesCheck => "losses-check",
            Stage::Experiment => "experiment",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Command-line overrides on top of the config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub scene: Option<String>,
    pub backend: Option<LlmBackend>,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    /// Machine-readable summary for standard output.
    pub summary: Value,
    /// Human-readable table for standard error, if the stage has one.
    pub table: Option<String>,
    /// False when the stage ran but its checks failed.
    pub ok: bool,
}

impl StageOutput {
    fn new(summary: Value) -> Self {
        Self {
            summary,
            table: None,
            ok: true,
        }
    }
}

pub fn run_stage(stage: Stage, cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    info!("running stage {stage}");
    match stage {
        Stage::Rplg => run_rplg(cfg, opts),
        Stage::BaolLabel => run_baol(cfg, opts),
        Stage::Infer => run_infer(cfg, opts),
        Stage::Eval => run_eval(cfg, opts),
        Stage::Synth => run_synth(cfg),
        Stage::LossesCheck => Ok(run_losses_check(cfg)),
        Stage::Experiment => run_experiment_stage(cfg, opts),
    }
}

struct SceneSet {
    base: PathBuf,
    scenes: Vec<SceneRecord>,
}

impl SceneSet {
    fn load(cfg: &Config, opts: &RunOptions) -> Result<Self, PipelineError> {
        let path = &cfg.paths.scenes;
        let doc: ScenesDoc = load_doc(path, SchemaName::Scenes)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let scenes = match &opts.scene {
            None => doc.scenes,
            Some(id) => {
                let s: Vec<_> = doc.scenes.into_iter().filter(|s| &s.scene_id == id).collect();
                if s.is_empty() {
                    return Err(PipelineError::MissingInput {
                        path: path.clone(),
                        reason: format!("scene {id:?} is not listed"),
                    });
                }
                s
            }
        };
        Ok(Self { base, scenes })
    }

    fn input(&self, rel: &Path) -> PathBuf {
        self.base.join(rel)
    }

    fn required(&self, scene: &SceneRecord, rel: &Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
        rel.as_ref()
            .map(|p| self.input(p))
            .ok_or_else(|| PipelineError::MissingInput {
                path: self.base.clone(),
                reason: format!("scene {} has no {what} file", scene.scene_id),
            })
    }
}

fn scene_dir(cfg: &Config, scene_id: &str) -> PathBuf {
    cfg.paths.out_dir.join(scene_id)
}

fn pool(cfg: &Config) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Other(format!("worker pool: {e}")))
}

/// Runs `f` over every scene, in parallel unless `serial`; results keep
/// scene order and the first failing scene's error is returned.
fn per_scene<T, F>(cfg: &Config, scenes: &[SceneRecord], serial: bool, f: F) -> Result<Vec<T>, PipelineError>
where
    T: Send,
    F: Fn(&SceneRecord) -> Result<T, PipelineError> + Sync,
{
    if serial {
        scenes.iter().map(&f).collect()
    } else {
        pool(cfg)?.install(|| scenes.par_iter().map(&f).collect())
    }
}

fn rplg_error(e: RplgError) -> PipelineError {
    match e {
        RplgError::Transport(m) => PipelineError::Transport(m),
        other => PipelineError::Schema(other.to_string()),
    }
}

fn run_rplg(cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    let set = SceneSet::load(cfg, opts)?;
    let http: Option<HttpScorer> = match cfg.scorer.backend {
        ScorerBackend::File => None,
        ScorerBackend::Http => Some(HttpScorer::new(
            cfg.scorer.endpoint.clone().unwrap_or_default(),
            std::time::Duration::from_millis(cfg.scorer.timeout_ms),
            cfg.scorer.retries,
        )),
    };
    let serial = http.as_ref().is_some_and(|h| !h.concurrent());
    let rows = per_scene(cfg, &set.scenes, serial, |scene| {
        let labels: Vec<Label2D> =
            load_list(&set.required(scene, &scene.labels_2d, "labels_2d")?, SchemaName::Labels2d)?;
        let file_scorer;
        let scorer: &dyn ImageTextScorer = match &http {
            Some(h) => h,
            None => {
                let records: Vec<ScoreRecord> =
                    load_list(&set.required(scene, &scene.scores, "scores")?, SchemaName::Scores)?;
                file_scorer = FileScorer::new(&records).map_err(rplg_error)?;
                &file_scorer
            }
        };
        let points: Vec<Point3> = load_list(&set.input(&scene.points), SchemaName::Points)?;
        let cloud = PointCloud::new(points).map_err(|e| PipelineError::Schema(e.to_string()))?;

        let scores = score_labels(scorer, &labels).map_err(rplg_error)?;
        let kept = filter_labels(&labels, &scores, cfg.phi_clip).map_err(rplg_error)?;
        let (pseudo, drops) = generate_pseudo_labels(&kept, &cloud, &scene.projection, cfg.trim);

        let dir = scene_dir(cfg, &scene.scene_id);
        write_atomic(&dir.join("pseudo_labels.json"), list_to_json(&pseudo).as_bytes())?;
        write_atomic(&dir.join("drops.jsonl"), to_jsonl(&drops).as_bytes())?;
        Ok(json!({
            "scene_id": scene.scene_id,
            "labels": labels.len(),
            "kept": kept.len(),
            "pseudo_labels": pseudo.len(),
            "dropped": drops.len(),
        }))
    })?;
    Ok(StageOutput::new(json!({"stage": "rplg", "scenes": rows})))
}

fn run_baol(cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    let set = SceneSet::load(cfg, opts)?;
    let rows = per_scene(cfg, &set.scenes, false, |scene| {
        let dir = scene_dir(cfg, &scene.scene_id);
        let labels: Vec<PseudoLabel3D> =
            load_list(&dir.join("pseudo_labels.json"), SchemaName::PseudoLabels)?;
        let proposals: Vec<Proposal> = load_list(&set.input(&scene.proposals), SchemaName::Proposals)?;
        let p_boxes: Vec<Box3D> = proposals.iter().map(|p| p.bbox).collect();
        let l_boxes: Vec<Box3D> = labels.iter().map(|l| l.bbox).collect();
        let matched = match_proposals(&p_boxes, &l_boxes);
        let y = assign_labels(&matched, &p_boxes, cfg.phi_low, cfg.phi_high)
            .map_err(|e| PipelineError::Other(e.to_string()))?
            .y;
        let positives = y.iter().filter(|&&v| v == 1).count();
        let doc = AssignmentsDoc {
            schema_version: SCHEMA_VERSION,
            scene_id: scene.scene_id.clone(),
            y,
            pairs: matched.pairs.clone(),
            unmatched: matched.unmatched.clone(),
        };
        write_atomic(&dir.join("assignments.json"), to_json(&doc).as_bytes())?;
        Ok(json!({
            "scene_id": scene.scene_id,
            "proposals": proposals.len(),
            "pseudo_labels": labels.len(),
            "matched": matched.pairs.len(),
            "positives": positives,
            "total_iou": matched.total_iou(),
        }))
    })?;
    Ok(StageOutput::new(json!({"stage": "baol-label", "scenes": rows})))
}

fn llm_client(cfg: &Config, opts: &RunOptions, kb: &KnowledgeBase) -> Result<Box<dyn LlmClient>, PipelineError> {
    match opts.backend.unwrap_or(cfg.llm.backend) {
        LlmBackend::Mock => Ok(Box::new(
            MockLlm::new(kb.clone()).map_err(|e| PipelineError::Schema(e.to_string()))?,
        )),
        LlmBackend::Http => {
            let endpoint = cfg.llm.endpoint.clone().ok_or_else(|| {
                PipelineError::Schema("llm.endpoint: required for the http backend".into())
            })?;
            let client = HttpLlm::new(endpoint, cfg.llm.timeout(), cfg.llm.retries);
            Ok(Box::new(if cfg.llm.serial { client.serial() } else { client }))
        }
    }
}

fn run_infer(cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    let set = SceneSet::load(cfg, opts)?;
    let kb = load_kb(&cfg.paths.kb)?;
    let client = llm_client(cfg, opts, &kb)?;
    let session = SessionConfig {
        scene_types: kb.scene_types.clone(),
        vocabulary: kb.classes.clone(),
        phi_keep: cfg.phi_keep,
    };
    let rows = per_scene(cfg, &set.scenes, !client.concurrent(), |scene| {
        let proposals: Vec<Proposal> = load_list(&set.input(&scene.proposals), SchemaName::Proposals)?;
        let selected = select_proposals(&proposals, cfg.phi_obj);
        let dir = scene_dir(cfg, &scene.scene_id);
        let out = match run_session(client.as_ref(), &session, &scene.global_feature, &selected) {
            Ok(out) => out,
            Err(GlciError::Transport { source, transcript }) => {
                write_atomic(&dir.join("transcript.partial.jsonl"), transcript.to_jsonl().as_bytes())?;
                return Err(PipelineError::Transport(format!("scene {}: {source}", scene.scene_id)));
            }
            Err(e) => return Err(PipelineError::Schema(format!("scene {}: {e}", scene.scene_id))),
        };
        let doc = DetectionsDoc {
            schema_version: SCHEMA_VERSION,
            scene_id: scene.scene_id.clone(),
            scene_type: out.scene.scene_type.clone(),
            description: out.scene.description.clone(),
            detections: out.refined.detections.clone(),
            removed: out.refined.removed.clone(),
        };
        write_atomic(&dir.join("detections.json"), to_json(&doc).as_bytes())?;
        write_atomic(&dir.join("transcript.jsonl"), out.transcript.to_jsonl().as_bytes())?;
        Ok(json!({
            "scene_id": scene.scene_id,
            "scene_type": out.scene.scene_type,
            "proposals": proposals.len(),
            "selected": selected.len(),
            "detections": doc.detections.len(),
            "removed": doc.removed.len(),
            "classes": doc.detections.iter().map(|d| d.class_name.as_str()).collect::<Vec<_>>(),
        }))
    })?;
    Ok(StageOutput::new(json!({"stage": "infer", "scenes": rows})))
}

fn run_eval(cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    let set = SceneSet::load(cfg, opts)?;
    let mut dets = Vec::with_capacity(set.scenes.len());
    let mut gts = Vec::with_capacity(set.scenes.len());
    for scene in &set.scenes {
        let doc: DetectionsDoc = load_doc(
            &scene_dir(cfg, &scene.scene_id).join("detections.json"),
            SchemaName::Detections,
        )?;
        let gt: Vec<GroundTruthObject> = load_list(
            &set.required(scene, &scene.ground_truth, "ground_truth")?,
            SchemaName::GroundTruth,
        )?;
        dets.push(doc.detections);
        gts.push(gt);
    }
    let mut class_set: Vec<String> = gts.iter().flatten().map(|g| g.class_name.clone()).collect();
    class_set.sort();
    class_set.dedup();
    let report = evaluate(&dets, &gts, &class_set, cfg.iou_threshold)
        .map_err(|e| PipelineError::Other(e.to_string()))?;
    let doc = ReportDoc {
        schema_version: SCHEMA_VERSION,
        report,
    };
    write_atomic(&cfg.paths.out_dir.join("report.json"), to_json(&doc).as_bytes())?;
    Ok(StageOutput {
        summary: json!({
            "stage": "eval",
            "scenes": set.scenes.len(),
            "map": doc.report.map_value,
            "per_class_ap": doc.report.per_class_ap,
        }),
        table: Some(doc.report.table()),
        ok: true,
    })
}

fn synth_error(e: SynthError) -> PipelineError {
    PipelineError::Other(e.to_string())
}

/// The knowledge base at `paths.kb` if present, otherwise the built-in one.
fn kb_or_default(cfg: &Config) -> Result<KnowledgeBase, PipelineError> {
    if cfg.paths.kb.is_file() {
        load_kb(&cfg.paths.kb)
    } else {
        Ok(default_kb())
    }
}

fn synth_config(cfg: &Config) -> Result<SynthConfig, PipelineError> {
    Ok(SynthConfig {
        kb: kb_or_default(cfg)?,
        seed: cfg.seed,
        ..cfg.synth.clone()
    })
}

fn run_synth(cfg: &Config) -> Result<StageOutput, PipelineError> {
    let synth = synth_config(cfg)?;
    synth.validate().map_err(|e| PipelineError::Schema(format!("synth: {e}")))?;
    cfg.noise.validate().map_err(|e| PipelineError::Schema(format!("noise: {e}")))?;
    let base = cfg.paths.scenes.parent().unwrap_or(Path::new(".")).to_path_buf();
    let indices: Vec<usize> = (0..synth.num_scenes).collect();
    let records = pool(cfg)?.install(|| {
        indices
            .par_iter()
            .map(|&i| -> Result<SceneRecord, PipelineError> {
                let scene = generate_scene(&synth, i).map_err(synth_error)?;
                let c = corrupt(
                    &scene.objects,
                    &scene.scene_type,
                    &synth.kb,
                    &cfg.noise,
                    derive_seed(synth.seed, &scene.scene_id, "corrupt"),
                );
                let rel = PathBuf::from("scenes").join(&scene.scene_id);
                let dir = base.join(&rel);
                write_atomic(&dir.join("points.json"), list_to_json(scene.cloud.points()).as_bytes())?;
                write_atomic(&dir.join("proposals.json"), list_to_json(&c.proposals).as_bytes())?;
                write_atomic(&dir.join("ground_truth.json"), list_to_json(&scene.ground_truth()).as_bytes())?;
                write_atomic(&dir.join("labels_2d.json"), list_to_json(&scene.labels_2d).as_bytes())?;
                write_atomic(&dir.join("scores.json"), list_to_json(&scene.scores).as_bytes())?;
                Ok(SceneRecord {
                    scene_id: scene.scene_id.clone(),
                    points: rel.join("points.json"),
                    projection: scene.projection,
                    proposals: rel.join("proposals.json"),
                    global_feature: scene.global_feature.clone(),
                    ground_truth: Some(rel.join("ground_truth.json")),
                    labels_2d: Some(rel.join("labels_2d.json")),
                    scores: Some(rel.join("scores.json")),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let doc = ScenesDoc {
        schema_version: SCHEMA_VERSION,
        scenes: records,
    };
    write_atomic(&cfg.paths.scenes, to_json(&doc).as_bytes())?;
    if !cfg.paths.kb.is_file() {
        write_atomic(&cfg.paths.kb, kb_to_json(&synth.kb).as_bytes())?;
    }
    Ok(StageOutput::new(json!({
        "stage": "synth",
        "scenes": doc.scenes.len(),
        "scenes_file": cfg.paths.scenes,
        "kb_file": cfg.paths.kb,
    })))
}

fn run_losses_check(cfg: &Config) -> StageOutput {
    let rows = run_loss_checks(cfg.seed, &cfg.weights);
    let ok = rows.iter().all(|r| r.passed);
    StageOutput {
        summary: json!({"stage": "losses-check", "passed": ok, "checks": rows}),
        table: Some(format_table(&rows)),
        ok,
    }
}

fn run_experiment_stage(cfg: &Config, opts: &RunOptions) -> Result<StageOutput, PipelineError> {
    let synth = synth_config(cfg)?;
    let params = ExperimentParams {
        phi_obj: cfg.phi_obj,
        phi_keep: cfg.phi_keep,
        iou_threshold: cfg.iou_threshold,
    };
    let trials = opts.trials.unwrap_or(cfg.trials);
    let (results, summary) = pool(cfg)?
        .install(|| run_experiment(&synth, &cfg.noise, &params, trials))
        .map_err(synth_error)?;
    let dir = cfg.paths.out_dir.join("experiment");
    write_atomic(&dir.join("results.jsonl"), to_jsonl(&results).as_bytes())?;
    write_atomic(&dir.join("summary.json"), to_json(&summary).as_bytes())?;

    let width = summary.per_class_mean_delta.keys().map(String::len).max().unwrap_or(5).max(5);
    let mut table = format!("{:<width$}  {:>10}\n", "class", "mean dAP");
    for (c, d) in &summary.per_class_mean_delta {
        table.push_str(&format!("{c:<width$}  {d:>+10.4}\n"));
    }
    table.push_str(&format!("{:<width$}  {:>+10.4}\n", "mAP", summary.mean_delta));
    Ok(StageOutput {
        summary: json!({"stage": "experiment", "summary": summary}),
        table: Some(table),
        ok: true,
    })
}
