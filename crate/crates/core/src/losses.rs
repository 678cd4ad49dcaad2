//! Training objectives: objectness BCE, token-level text loss, and their
//! weighted sum. The box regression term is supplied by a caller-provided
//! hook.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3D;

/// Suggested clamp for probabilities fed into [`conf_loss`].
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{targets} targets but {predictions} predictions")]
    LengthMismatch { targets: usize, predictions: usize },
    #[error("at least one element is required")]
    Empty,
    #[error("probability {0} outside the open interval (0, 1)")]
    OpenIntervalDomain(f64),
    #[error("token probability {0} outside (0, 1]")]
    TokenDomain(f64),
    #[error("target {0} is not binary")]
    NonBinaryTarget(u8),
    #[error("weight {0} must be finite and non-negative")]
    InvalidWeight(f64),
}

/// Clamps `p` into `[PROB_EPS, 1 - PROB_EPS]`.
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_conf: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_conf: 0.2,
            lambda1: 4.0,
            lambda2: 10.0,
            lambda3: 1.0,
            lambda4: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for w in [
            self.lambda_conf,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LossError::InvalidWeight(w));
            }
        }
        Ok(())
    }
}

/// Per-token probabilities of a label text under the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    probabilities: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, LossError> {
        if probabilities.is_empty() {
            return Err(LossError::Empty);
        }
        if let Some(&p) = probabilities.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(LossError::TokenDomain(p));
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Balanced binary cross-entropy over objectness and its gradient with
/// respect to each prediction.
pub fn conf_loss(y: &[u8], o_hat: &[f64], lambda_conf: f64) -> Result<(f64, Vec<f64>), LossError> {
    if y.len() != o_hat.len() {
        return Err(LossError::LengthMismatch {
            targets: y.len(),
            predictions: o_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(LossError::Empty);
    }
    let n = y.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&t, &o) in y.iter().zip(o_hat) {
        if !(o > 0.0 && o < 1.0) {
            return Err(LossError::OpenIntervalDomain(o));
        }
        match t {
            1 => {
                sum += o.ln();
                grad.push(-1.0 / (n * o));
            }
            0 => {
                sum += lambda_conf * (1.0 - o).ln();
                grad.push(lambda_conf / (n * (1.0 - o)));
            }
            other => return Err(LossError::NonBinaryTarget(other)),
        }
    }
    Ok((-sum / n, grad))
}

/// Negative log-likelihood of a token sequence.
pub fn text_loss(dist: &TokenDistribution) -> f64 {
    0.0 - dist.probabilities.iter().map(|p| p.ln()).sum::<f64>()
}

/// Mean text loss over the pseudo labels' class names.
pub fn cls_loss(dists: &[TokenDistribution]) -> Result<f64, LossError> {
    if dists.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(dists.iter().map(text_loss).sum::<f64>() / dists.len() as f64)
}

pub fn scene_loss(type_dist: &TokenDistribution, desc_dist: &TokenDistribution) -> f64 {
    text_loss(type_dist) + text_loss(desc_dist)
}

pub fn total_loss(l_bbox: f64, l_conf: f64, l_cls: f64, l_scene: f64, w: &LossWeights) -> f64 {
    w.lambda1 * l_bbox + w.lambda2 * l_conf + w.lambda3 * l_cls + w.lambda4 * l_scene
}

/// Box regression loss between predicted boxes and pseudo-label boxes.
pub trait RegressionLoss {
    fn regression_loss(&self, predicted: &[Box3D], targets: &[Box3D]) -> f64;
}

impl<F> RegressionLoss for F
where
    F: Fn(&[Box3D], &[Box3D]) -> f64,
{
    fn regression_loss(&self, predicted: &[Box3D], targets: &[Box3D]) -> f64 {
        self(predicted, targets)
    }
}

/// Inputs for the full weighted objective of one batch.
pub struct LossInputs<'a> {
    pub predicted_boxes: &'a [Box3D],
    pub pseudo_boxes: &'a [Box3D],
    pub y: &'a [u8],
    pub o_hat: &'a [f64],
    pub class_tokens: &'a [TokenDistribution],
    pub scene_type_tokens: &'a TokenDistribution,
    pub description_tokens: &'a TokenDistribution,
}

/// Evaluates every term, with the box term delegated to `regression`.
pub fn total_loss_with(
    regression: &dyn RegressionLoss,
    inputs: &LossInputs<'_>,
    w: &LossWeights,
) -> Result<f64, LossError> {
    w.validate()?;
    let l_bbox = regression.regression_loss(inputs.predicted_boxes, inputs.pseudo_boxes);
    let (l_conf, _) = conf_loss(inputs.y, inputs.o_hat, w.lambda_conf)?;
    let l_cls = cls_loss(inputs.class_tokens)?;
    let l_scene = scene_loss(inputs.scene_type_tokens, inputs.description_tokens);
    Ok(total_loss(l_bbox, l_conf, l_cls, l_scene, w))
}
