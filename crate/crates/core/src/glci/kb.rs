use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("knowledge base has no scene types")]
    NoSceneTypes,
    #[error("knowledge base has no classes")]
    NoClasses,
    #[error("empty name in {0}")]
    EmptyName(&'static str),
    #[error("duplicate {kind} {name:?}")]
    Duplicate { kind: &'static str, name: String },
    #[error("plausibility table lacks ({scene:?}, {class:?})")]
    MissingPair { scene: String, class: String },
    #[error("plausibility table mentions unknown {kind} {name:?}")]
    UnknownName { kind: &'static str, name: String },
    #[error("class_prior has {got} rankings for {expected} scene types")]
    PriorCount { expected: usize, got: usize },
    #[error("class_prior for {scene:?} is not a permutation of its plausible classes")]
    PriorNotPermutation { scene: String },
}

/// Scene-type × class common-sense table backing the mock language model.
///
/// Scene type `i` and class `j` own the unit prototype vectors `e_i` and
/// `e_{S+j}` (S = number of scene types) in feature space, which is how the
/// mock decodes features into names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub scene_types: Vec<String>,
    pub classes: Vec<String>,
    pub plausible: BTreeMap<String, BTreeMap<String, bool>>,
    /// One ranking per entry of `scene_types`, most likely class first.
    pub class_prior: Vec<Vec<String>>,
    /// Optional fixed scene descriptions; a templated one is used otherwise.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<String, String>,
}

impl KnowledgeBase {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.scene_types.is_empty() {
            return Err(KbError::NoSceneTypes);
        }
        if self.classes.is_empty() {
            return Err(KbError::NoClasses);
        }
        check_names("scene type", &self.scene_types)?;
        check_names("class", &self.classes)?;
        for (scene, row) in &self.plausible {
            if !self.scene_types.contains(scene) {
                return Err(KbError::UnknownName {
                    kind: "scene type",
                    name: scene.clone(),
                });
            }
            if let Some(c) = row.keys().find(|c| !self.classes.contains(c)) {
                return Err(KbError::UnknownName {
                    kind: "class",
                    name: c.clone(),
                });
            }
        }
        for scene in &self.scene_types {
            for class in &self.classes {
                if self.plausible.get(scene).and_then(|r| r.get(class)).is_none() {
                    return Err(KbError::MissingPair {
                        scene: scene.clone(),
                        class: class.clone(),
                    });
                }
            }
        }
        if self.class_prior.len() != self.scene_types.len() {
            return Err(KbError::PriorCount {
                expected: self.scene_types.len(),
                got: self.class_prior.len(),
            });
        }
        for (scene, ranking) in self.scene_types.iter().zip(&self.class_prior) {
            let ranked: BTreeSet<&String> = ranking.iter().collect();
            let expected: BTreeSet<&String> = self.plausible_classes(scene).collect();
            if ranked.len() != ranking.len() || ranked != expected {
                return Err(KbError::PriorNotPermutation {
                    scene: scene.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn scene_index(&self, scene: &str) -> Option<usize> {
        self.scene_types.iter().position(|s| s == scene)
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn is_plausible(&self, scene: &str, class: &str) -> Option<bool> {
        self.plausible.get(scene)?.get(class).copied()
    }

    pub fn plausible_classes<'a>(&'a self, scene: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.classes
            .iter()
            .filter(move |c| self.is_plausible(scene, c) == Some(true))
    }

    pub fn implausible_classes<'a>(
        &'a self,
        scene: &'a str,
    ) -> impl Iterator<Item = &'a String> + 'a {
        self.classes
            .iter()
            .filter(move |c| self.is_plausible(scene, c) == Some(false))
    }

    pub fn prior(&self, scene: &str) -> &[String] {
        self.scene_index(scene)
            .map(|i| self.class_prior[i].as_slice())
            .unwrap_or(&[])
    }

    /// Feature length needed to hold every prototype.
    pub fn prototype_dim(&self) -> usize {
        self.scene_types.len() + self.classes.len()
    }

    pub fn scene_prototype_axis(&self, scene_index: usize) -> usize {
        scene_index
    }

    pub fn class_prototype_axis(&self, class_index: usize) -> usize {
        self.scene_types.len() + class_index
    }

    /// Nearest scene-type prototype to `feature`.
    pub fn decode_scene(&self, feature: &[f64]) -> usize {
        nearest_axis(feature, 0, self.scene_types.len(), |_| true)
    }

    /// Nearest class prototype to `feature`, restricted by `allow`.
    pub fn decode_class(&self, feature: &[f64], allow: impl Fn(usize) -> bool) -> Option<usize> {
        let n = self.classes.len();
        if !(0..n).any(&allow) {
            return None;
        }
        Some(nearest_axis(feature, self.scene_types.len(), n, allow))
    }

    pub fn description(&self, scene: &str) -> String {
        if let Some(d) = self.descriptions.get(scene) {
            return d.clone();
        }
        match self.prior(scene) {
            [] => format!("The {scene} looks empty."),
            [a] => format!("There is a {a} in the {scene}."),
            [a, b, ..] => format!("There is a {a} and a {b} in the {scene}."),
        }
    }
}

fn check_names(kind: &'static str, names: &[String]) -> Result<(), KbError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(KbError::EmptyName(kind));
        }
        if !seen.insert(n) {
            return Err(KbError::Duplicate {
                kind,
                name: n.clone(),
            });
        }
    }
    Ok(())
}

/// Index in `0..count` of the unit prototype `e_{offset+k}` closest to
/// `feature` in Euclidean distance. All prototypes have unit norm, so this is
/// the largest component; missing components count as zero and ties go to
/// the lowest index.
fn nearest_axis(feature: &[f64], offset: usize, count: usize, allow: impl Fn(usize) -> bool) -> usize {
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    for k in (0..count).filter(|&k| allow(k)) {
        let v = feature.get(offset + k).copied().unwrap_or(0.0);
        if best.is_none() || v > best_val {
            best = Some(k);
            best_val = v;
        }
    }
    best.unwrap_or(0)
}
