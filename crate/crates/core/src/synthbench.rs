//! Synthetic indoor scenes and the refinement experiment.
//!
//! Scenes are populated with knowledge-base-plausible objects whose features
//! sit on their class prototypes, so the mock language model reads them back
//! exactly when no noise is applied. [`corrupt`] then degrades the ground
//! truth into detector-like proposals: jittered boxes, confused classes
//! (biased toward classes that do not belong in the scene), false positives,
//! misses, and objectness tied to correctness. [`run_experiment`] measures
//! how much the collaborative refinement stage recovers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baol::{select_proposals, Proposal};
use crate::evaluator::{evaluate, EvalError, GroundTruthObject};
use crate::geometry::{
    convex_intersection_area, corners, project_point, Box2D, Box3D, Point3, PointCloud,
    ProjectionMatrix,
};
use crate::glci::{decision, run_session, GlciError, KnowledgeBase, MockLlm, SessionConfig};
use crate::rplg::{Label2D, ScoreRecord};
use crate::seed::derive_seed;

/// Room footprint and height in meters.
pub const ROOM_EXTENT: [f64; 3] = [8.0, 8.0, 3.0];
const PLACEMENT_RETRIES: usize = 500;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("could not place object {index} in scene {scene} after {PLACEMENT_RETRIES} tries")]
    Placement { scene: String, index: usize },
    #[error("scene type {0:?} has no plausible classes")]
    NoPlausibleClasses(String),
    #[error(transparent)]
    Session(#[from] GlciError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_scenes: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: (usize, usize),
    #[serde(skip)]
    pub kb: KnowledgeBase,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub points_per_object: usize,
    /// Probability that a synthetic 2D label carries a wrong class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            objects_per_scene: (4, 8),
            kb: default_kb(),
            feature_dim: 32,
            feature_noise: 0.05,
            points_per_object: 64,
            label_noise: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.kb
            .validate()
            .map_err(|e| SynthError::Config(e.to_string()))?;
        if self.feature_dim < self.kb.prototype_dim() {
            return Err(SynthError::Config(format!(
                "feature_dim {} is below the {} prototype axes",
                self.feature_dim,
                self.kb.prototype_dim()
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(SynthError::Config("feature_noise must be >= 0".into()));
        }
        if self.objects_per_scene.0 > self.objects_per_scene.1 {
            return Err(SynthError::Config("objects_per_scene range is inverted".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(SynthError::Config("label_noise must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Objectness bands for proposals of correct and corrupted objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectnessCalibration {
    pub correct: (f64, f64),
    pub corrupted: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub box_jitter: f64,
    pub class_confusion_rate: f64,
    pub implausible_bias: f64,
    pub false_positive_rate: f64,
    pub miss_rate: f64,
    /// Weight of the wrong class prototype in a confused object's feature;
    /// the rest stays on the true class.
    pub confusion_strength: f64,
    pub objectness_calibration: ObjectnessCalibration,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            box_jitter: 0.05,
            class_confusion_rate: 0.3,
            implausible_bias: 0.8,
            false_positive_rate: 0.15,
            miss_rate: 0.05,
            confusion_strength: 0.6,
            objectness_calibration: ObjectnessCalibration {
                correct: (0.7, 0.95),
                corrupted: (0.3, 0.9),
            },
        }
    }
}

impl NoiseModel {
    /// Identity corruption: proposals reproduce the ground truth with
    /// objectness 1.
    pub fn none() -> Self {
        Self {
            box_jitter: 0.0,
            class_confusion_rate: 0.0,
            implausible_bias: 0.0,
            false_positive_rate: 0.0,
            miss_rate: 0.0,
            confusion_strength: 0.6,
            objectness_calibration: ObjectnessCalibration {
                correct: (1.0, 1.0),
                corrupted: (1.0, 1.0),
            },
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let rates = [
            ("class_confusion_rate", self.class_confusion_rate),
            ("implausible_bias", self.implausible_bias),
            ("false_positive_rate", self.false_positive_rate),
            ("miss_rate", self.miss_rate),
            ("confusion_strength", self.confusion_strength),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::Config(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if !(self.box_jitter >= 0.0 && self.box_jitter.is_finite()) {
            return Err(SynthError::Config("box_jitter must be >= 0".into()));
        }
        for (lo, hi) in [
            self.objectness_calibration.correct,
            self.objectness_calibration.corrupted,
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(SynthError::Config(format!(
                    "objectness band ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
                )));
            }
        }
        Ok(())
    }
}

/// A ground-truth object together with its clean feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub gt: GroundTruthObject,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene_id: String,
    pub scene_type: String,
    pub global_feature: Vec<f64>,
    pub objects: Vec<SynthObject>,
    pub cloud: PointCloud,
    pub projection: ProjectionMatrix,
    pub labels_2d: Vec<Label2D>,
    pub scores: Vec<ScoreRecord>,
}

impl SynthScene {
    pub fn ground_truth(&self) -> Vec<GroundTruthObject> {
        self.objects.iter().map(|o| o.gt.clone()).collect()
    }
}

/// Camera above the room center looking straight down.
pub fn synth_camera() -> ProjectionMatrix {
    ProjectionMatrix::top_down(
        100.0,
        (400.0, 400.0),
        Point3::new(0.5 * ROOM_EXTENT[0], 0.5 * ROOM_EXTENT[1], 10.0),
    )
    .expect("finite camera")
}

/// Typical `(l, w, h)` of a class in meters.
pub fn class_size(class: &str) -> [f64; 3] {
    match class {
        "bathtub" => [1.6, 0.8, 0.6],
        "bed" => [2.0, 1.6, 0.6],
        "bookshelf" => [1.0, 0.35, 1.8],
        "cabinet" => [0.9, 0.5, 1.0],
        "chair" => [0.5, 0.5, 0.9],
        "counter" => [1.8, 0.6, 0.9],
        "desk" => [1.2, 0.7, 0.75],
        "door" => [0.9, 0.1, 2.0],
        "dresser" => [1.0, 0.5, 1.0],
        "night stand" => [0.5, 0.4, 0.55],
        "refrigerator" => [0.8, 0.7, 1.8],
        "sink" => [0.6, 0.5, 0.9],
        "sofa" => [2.0, 0.9, 0.85],
        "stand" => [0.5, 0.5, 1.0],
        "table" => [1.5, 0.9, 0.75],
        "toilet" => [0.7, 0.45, 0.8],
        "whiteboard" => [1.8, 0.1, 1.2],
        "window" => [1.2, 0.1, 1.2],
        _ => [0.8, 0.8, 0.8],
    }
}

/// Indoor knowledge base used by the synthetic benchmark and the demo
/// fixtures.
pub fn default_kb() -> KnowledgeBase {
    let scene_types = [
        "bathroom",
        "bedroom",
        "conference room",
        "kitchen",
        "library",
        "living room",
        "office",
    ];
    let classes = [
        "bathtub",
        "bed",
        "bookshelf",
        "cabinet",
        "chair",
        "counter",
        "desk",
        "door",
        "dresser",
        "night stand",
        "refrigerator",
        "sink",
        "sofa",
        "stand",
        "table",
        "toilet",
        "whiteboard",
        "window",
    ];
    let priors: [&[&str]; 7] = [
        &["toilet", "sink", "bathtub", "counter", "cabinet", "door", "window"],
        &[
            "bed",
            "night stand",
            "dresser",
            "desk",
            "chair",
            "cabinet",
            "door",
            "window",
            "stand",
        ],
        &["table", "chair", "whiteboard", "sofa", "door", "window"],
        &[
            "refrigerator",
            "counter",
            "sink",
            "cabinet",
            "table",
            "chair",
            "door",
            "window",
        ],
        &["bookshelf", "table", "chair", "desk", "door", "window"],
        &[
            "sofa",
            "table",
            "chair",
            "bookshelf",
            "cabinet",
            "stand",
            "door",
            "window",
        ],
        &[
            "desk",
            "chair",
            "cabinet",
            "bookshelf",
            "table",
            "whiteboard",
            "door",
            "window",
        ],
    ];
    let mut plausible = BTreeMap::new();
    for (scene, prior) in scene_types.iter().zip(priors.iter()) {
        let row = classes
            .iter()
            .map(|c| (c.to_string(), prior.contains(c)))
            .collect();
        plausible.insert(scene.to_string(), row);
    }
    let descriptions = BTreeMap::from([
        (
            "library".to_string(),
            "There is a bookshelf containing numerous books.".to_string(),
        ),
        (
            "conference room".to_string(),
            "There is a long table surrounded by chairs.".to_string(),
        ),
    ]);
    KnowledgeBase {
        scene_types: scene_types.iter().map(|s| s.to_string()).collect(),
        classes: classes.iter().map(|s| s.to_string()).collect(),
        plausible,
        class_prior: priors
            .iter()
            .map(|p| p.iter().map(|s| s.to_string()).collect())
            .collect(),
        descriptions,
    }
}

fn prototype(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

fn add_noise(v: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    for x in v.iter_mut() {
        *x += n.sample(rng);
    }
}

fn overlaps(a: &Box3D, b: &Box3D) -> bool {
    convex_intersection_area(&a.bev_corners(), &b.bev_corners()) > 0.0
}

fn bounding_rect(m: &ProjectionMatrix, b: &Box3D) -> Option<Box2D> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in corners(b) {
        let (u, v, _) = project_point(m, &c).ok()?;
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
    }
    Box2D::new(lo[0], lo[1], hi[0], hi[1]).ok()
}

pub fn scene_id(index: usize) -> String {
    format!("scene{index:04}")
}

/// Builds one synthetic scene; identical `(cfg, scene_index)` give identical
/// scenes.
pub fn generate_scene(cfg: &SynthConfig, scene_index: usize) -> Result<SynthScene, SynthError> {
    let kb = &cfg.kb;
    let id = scene_id(scene_index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &id, "synth"));

    let scene_idx = rng.gen_range(0..kb.scene_types.len());
    let scene_type = kb.scene_types[scene_idx].clone();
    let plausible: Vec<&String> = kb.plausible_classes(&scene_type).collect();
    if plausible.is_empty() {
        return Err(SynthError::NoPlausibleClasses(scene_type));
    }
    let mut global_feature = prototype(cfg.feature_dim, kb.scene_prototype_axis(scene_idx));
    add_noise(&mut global_feature, cfg.feature_noise, &mut rng);

    let count = rng.gen_range(cfg.objects_per_scene.0..=cfg.objects_per_scene.1);
    let mut objects: Vec<SynthObject> = Vec::with_capacity(count);
    for index in 0..count {
        let class = plausible[rng.gen_range(0..plausible.len())].clone();
        let [l, w, h] = class_size(&class).map(|s| s * rng.gen_range(0.85..1.15));
        let margin = 0.5 * (l * l + w * w).sqrt();
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.gen_range(margin..ROOM_EXTENT[0] - margin);
            let y = rng.gen_range(margin..ROOM_EXTENT[1] - margin);
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let b = Box3D::new(Point3::new(x, y, 0.5 * h), l, w, h, heading)
                .expect("positive synthetic size");
            if objects.iter().all(|o| !overlaps(&o.gt.bbox, &b)) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| SynthError::Placement {
            scene: id.clone(),
            index,
        })?;
        let class_idx = kb.class_index(&class).expect("class from kb");
        let mut feature = prototype(cfg.feature_dim, kb.class_prototype_axis(class_idx));
        add_noise(&mut feature, cfg.feature_noise, &mut rng);
        objects.push(SynthObject {
            gt: GroundTruthObject {
                bbox,
                class_name: class,
            },
            feature,
        });
    }

    let mut points = Vec::with_capacity(objects.len() * cfg.points_per_object + 1);
    for o in &objects {
        let b = &o.gt.bbox;
        let (s, c) = b.heading().sin_cos();
        for _ in 0..cfg.points_per_object {
            let lx = (rng.gen::<f64>() - 0.5) * b.length();
            let ly = (rng.gen::<f64>() - 0.5) * b.width();
            let lz = (rng.gen::<f64>() - 0.5) * b.height();
            let ctr = b.center();
            points.push(Point3::new(
                ctr.x + c * lx - s * ly,
                ctr.y + s * lx + c * ly,
                ctr.z + lz,
            ));
        }
    }
    if points.is_empty() {
        points.push(Point3::new(0.5 * ROOM_EXTENT[0], 0.5 * ROOM_EXTENT[1], 0.0));
    }
    let cloud = PointCloud::new(points).expect("finite synthetic points");

    let projection = synth_camera();
    let mut labels_2d = Vec::new();
    let mut scores = Vec::new();
    let score_noise = Normal::new(0.0, 1.0).expect("unit normal");
    for (k, o) in objects.iter().enumerate() {
        let wrong = rng.gen::<f64>() < cfg.label_noise;
        let alt = rng.gen_range(0..kb.classes.len());
        let (z_pos, z_neg) = (score_noise.sample(&mut rng), score_noise.sample(&mut rng));
        let Some(bbox) = bounding_rect(&projection, &o.gt.bbox) else {
            continue;
        };
        let mut class_name = o.gt.class_name.clone();
        if wrong && kb.classes[alt] != class_name {
            class_name = kb.classes[alt].clone();
        }
        let correct = class_name == o.gt.class_name;
        let (pos_raw, neg_raw) = if correct {
            (25.0 + z_pos, 23.0 + z_neg)
        } else {
            (23.0 + z_pos, 25.0 + z_neg)
        };
        let patch_id = format!("{id}/p{k}");
        labels_2d.push(Label2D {
            bbox,
            class_name: class_name.clone(),
            patch_id: patch_id.clone(),
        });
        scores.push(ScoreRecord {
            patch_id,
            class_name,
            pos_raw,
            neg_raw,
        });
    }

    Ok(SynthScene {
        scene_id: id,
        scene_type,
        global_feature,
        objects,
        cloud,
        projection,
        labels_2d,
        scores,
    })
}

/// Tally of what [`corrupt`] did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionStats {
    pub objects: usize,
    pub misses: usize,
    pub flips: usize,
    pub implausible_flips: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub proposals: Vec<Proposal>,
    pub stats: CorruptionStats,
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen();
    lo + u * (hi - lo)
}

/// Degrades ground truth into detector proposals.
///
/// Each object draws from its own seeded stream with a fixed number of draws,
/// so changing one rate never reshuffles the randomness of other decisions.
pub fn corrupt(
    objects: &[SynthObject],
    scene_type: &str,
    kb: &KnowledgeBase,
    noise: &NoiseModel,
    seed: u64,
) -> Corruption {
    let implausible: Vec<usize> = kb
        .implausible_classes(scene_type)
        .filter_map(|c| kb.class_index(c))
        .collect();
    let mut proposals = Vec::with_capacity(objects.len());
    let mut fps = Vec::new();
    let mut stats = CorruptionStats {
        objects: objects.len(),
        ..Default::default()
    };
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let cal = noise.objectness_calibration;

    for (k, obj) in objects.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("object{k}"), "corrupt"));
        let u_miss: f64 = rng.gen();
        let u_flip: f64 = rng.gen();
        let u_bias: f64 = rng.gen();
        let u_pick: f64 = rng.gen();
        let z: [f64; 6] = std::array::from_fn(|_| jitter.sample(&mut rng));
        let u_obj: f64 = rng.gen();
        let u_fp: f64 = rng.gen();

        if u_fp < noise.false_positive_rate {
            fps.push(k);
        }
        if u_miss < noise.miss_rate {
            stats.misses += 1;
            continue;
        }

        let true_idx = kb.class_index(&obj.gt.class_name);
        let mut feature = obj.feature.clone();
        let mut flipped = false;
        if let (Some(true_idx), true) = (true_idx, u_flip < noise.class_confusion_rate) {
            let want_implausible = u_bias < noise.implausible_bias && !implausible.is_empty();
            let pool: Vec<usize> = if want_implausible {
                implausible.clone()
            } else {
                (0..kb.classes.len()).filter(|&c| c != true_idx).collect()
            };
            let wrong = pool[((u_pick * pool.len() as f64) as usize).min(pool.len() - 1)];
            let s = noise.confusion_strength;
            let wrong_axis = kb.class_prototype_axis(wrong);
            let true_axis = kb.class_prototype_axis(true_idx);
            for (i, v) in feature.iter_mut().enumerate() {
                let clean = if i == true_axis { 1.0 } else { 0.0 };
                let mixed = if i == wrong_axis { s } else { 0.0 }
                    + if i == true_axis { 1.0 - s } else { 0.0 };
                *v += mixed - clean;
            }
            flipped = true;
            stats.flips += 1;
            if kb.is_plausible(scene_type, &kb.classes[wrong]) == Some(false) {
                stats.implausible_flips += 1;
            }
        }

        let b = obj.gt.bbox;
        let sigma = noise.box_jitter;
        let bbox = if sigma == 0.0 {
            b
        } else {
            let c = b.center();
            Box3D::new(
                Point3::new(c.x + sigma * z[0], c.y + sigma * z[1], c.z + sigma * z[2]),
                (b.length() + sigma * z[3]).max(0.05),
                (b.width() + sigma * z[4]).max(0.05),
                (b.height() + sigma * z[5]).max(0.05),
                b.heading(),
            )
            .expect("jittered box stays valid")
        };
        let band = if flipped { cal.corrupted } else { cal.correct };
        proposals.push(Proposal {
            bbox,
            objectness: band.0 + u_obj * (band.1 - band.0),
            feature,
        });
    }

    let plausible: Vec<usize> = kb
        .plausible_classes(scene_type)
        .filter_map(|c| kb.class_index(c))
        .collect();
    let dim = objects.first().map_or(kb.prototype_dim(), |o| o.feature.len());
    for k in fps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("fp{k}"), "corrupt"));
        let u_bias: f64 = rng.gen();
        let u_pick: f64 = rng.gen();
        let pool = if u_bias < noise.implausible_bias && !implausible.is_empty() {
            &implausible
        } else if !plausible.is_empty() {
            &plausible
        } else {
            &implausible
        };
        if pool.is_empty() {
            continue;
        }
        let class = pool[((u_pick * pool.len() as f64) as usize).min(pool.len() - 1)];
        let [l, w, h] = class_size(&kb.classes[class]);
        let x = rng.gen_range(0.5..ROOM_EXTENT[0] - 0.5);
        let y = rng.gen_range(0.5..ROOM_EXTENT[1] - 0.5);
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let bbox = Box3D::new(Point3::new(x, y, 0.5 * h), l, w, h, heading).expect("valid size");
        let mut feature = vec![0.0; dim.max(kb.prototype_dim())];
        feature[kb.class_prototype_axis(class)] = 1.0;
        let objectness = uniform_in(&mut rng, cal.corrupted);
        stats.false_positives += 1;
        proposals.push(Proposal {
            bbox,
            objectness,
            feature,
        });
    }

    Corruption { proposals, stats }
}

/// Thresholds the experiment runs the inference pipeline with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub phi_obj: f64,
    pub phi_keep: f64,
    pub iou_threshold: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            phi_obj: crate::baol::DEFAULT_PHI_OBJ,
            phi_keep: crate::glci::DEFAULT_PHI_KEEP,
            iou_threshold: crate::evaluator::DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStats {
    pub plausibility_checks: usize,
    pub removed: usize,
    pub reclassified: usize,
    pub kept_flagged: usize,
}

impl TranscriptStats {
    pub fn interventions(&self) -> usize {
        self.removed + self.reclassified + self.kept_flagged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub map_initial: f64,
    pub map_refined: f64,
    pub per_class_delta: BTreeMap<String, f64>,
    pub transcript_stats: TranscriptStats,
    pub corruption: CorruptionStats,
}

impl TrialResult {
    pub fn delta(&self) -> f64 {
        self.map_refined - self.map_initial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: usize,
    pub mean_map_initial: f64,
    pub mean_map_refined: f64,
    pub mean_delta: f64,
    /// Fraction of trials where refinement strictly improved mAP.
    pub win_rate: f64,
    /// Fraction of trials where refinement did not lower mAP.
    pub non_decrease_rate: f64,
    pub per_class_mean_delta: BTreeMap<String, f64>,
}

/// Runs one trial: generate, corrupt, infer with and without refinement,
/// evaluate both.
pub fn run_trial(
    cfg: &SynthConfig,
    noise: &NoiseModel,
    params: &ExperimentParams,
    trial: usize,
) -> Result<TrialResult, SynthError> {
    let seed = derive_seed(cfg.seed, &format!("trial{trial}"), "experiment");
    let trial_cfg = SynthConfig {
        seed,
        ..cfg.clone()
    };
    let mock = MockLlm::new(cfg.kb.clone()).map_err(|e| SynthError::Config(e.to_string()))?;
    let session_cfg = SessionConfig {
        scene_types: cfg.kb.scene_types.clone(),
        vocabulary: cfg.kb.classes.clone(),
        phi_keep: params.phi_keep,
    };

    let mut initial = Vec::with_capacity(cfg.num_scenes);
    let mut refined = Vec::with_capacity(cfg.num_scenes);
    let mut gts = Vec::with_capacity(cfg.num_scenes);
    let mut tstats = TranscriptStats::default();
    let mut cstats = CorruptionStats::default();
    for i in 0..cfg.num_scenes {
        let scene = generate_scene(&trial_cfg, i)?;
        let c = corrupt(
            &scene.objects,
            &scene.scene_type,
            &cfg.kb,
            noise,
            derive_seed(seed, &scene.scene_id, "corrupt"),
        );
        cstats.objects += c.stats.objects;
        cstats.misses += c.stats.misses;
        cstats.flips += c.stats.flips;
        cstats.implausible_flips += c.stats.implausible_flips;
        cstats.false_positives += c.stats.false_positives;

        let selected = select_proposals(&c.proposals, params.phi_obj);
        let out = run_session(&mock, &session_cfg, &scene.global_feature, &selected)?;
        let t = &out.transcript;
        tstats.plausibility_checks += t.count_decisions(decision::VERDICT);
        tstats.removed += t.count_decisions(decision::REMOVED);
        tstats.reclassified += t.count_decisions(decision::RECLASSIFIED);
        tstats.kept_flagged += t.count_decisions(decision::KEPT_FLAGGED);
        initial.push(out.initial);
        refined.push(out.refined.detections);
        gts.push(scene.ground_truth());
    }

    let class_set: Vec<String> = cfg
        .kb
        .classes
        .iter()
        .filter(|c| gts.iter().flatten().any(|g| g.class_name == **c))
        .cloned()
        .collect();
    if class_set.is_empty() {
        return Err(SynthError::Eval(EvalError::NoGroundTruth));
    }
    let before = evaluate(&initial, &gts, &class_set, params.iou_threshold)?;
    let after = evaluate(&refined, &gts, &class_set, params.iou_threshold)?;
    let per_class_delta = class_set
        .iter()
        .map(|c| {
            let b = before.per_class_ap.get(c).copied().unwrap_or(0.0);
            let a = after.per_class_ap.get(c).copied().unwrap_or(0.0);
            (c.clone(), a - b)
        })
        .collect();
    Ok(TrialResult {
        trial,
        seed,
        map_initial: before.map_value,
        map_refined: after.map_value,
        per_class_delta,
        transcript_stats: tstats,
        corruption: cstats,
    })
}

/// Runs `trials` independent trials in parallel and summarizes them.
pub fn run_experiment(
    cfg: &SynthConfig,
    noise: &NoiseModel,
    params: &ExperimentParams,
    trials: usize,
) -> Result<(Vec<TrialResult>, ExperimentSummary), SynthError> {
    if trials == 0 {
        return Err(SynthError::Config("at least one trial is required".into()));
    }
    cfg.validate()?;
    noise.validate()?;
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, noise, params, t))
        .collect::<Result<_, _>>()?;
    Ok((results.clone(), summarize(&results)))
}

pub fn summarize(results: &[TrialResult]) -> ExperimentSummary {
    let n = results.len().max(1) as f64;
    let mut per_class: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in results {
        for (c, d) in &r.per_class_delta {
            let e = per_class.entry(c.clone()).or_default();
            e.0 += d;
            e.1 += 1;
        }
    }
    ExperimentSummary {
        trials: results.len(),
        mean_map_initial: results.iter().map(|r| r.map_initial).sum::<f64>() / n,
        mean_map_refined: results.iter().map(|r| r.map_refined).sum::<f64>() / n,
        mean_delta: results.iter().map(TrialResult::delta).sum::<f64>() / n,
        win_rate: results.iter().filter(|r| r.delta() > 0.0).count() as f64 / n,
        non_decrease_rate: results.iter().filter(|r| r.delta() >= 0.0).count() as f64 / n,
        per_class_mean_delta: per_class
            .into_iter()
            .map(|(c, (s, k))| (c, s / k as f64))
            .collect(),
    }
}
