//! Background-aware object localization.
//!
//! Class-agnostic proposals are matched one-to-one to pseudo labels by
//! maximum total 3D IoU. The match decides which proposals supervise the
//! objectness head as foreground, with two corrections: loosely matched
//! proposals become background, and near-duplicates of a foreground proposal
//! become foreground too. At inference, proposals below the objectness
//! threshold are dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::max_weight_assignment;
use crate::geometry::{iou_3d, Box3D};

pub const DEFAULT_PHI_OBJ: f64 = 0.1;
pub const DEFAULT_PHI_LOW: f64 = 0.25;
pub const DEFAULT_PHI_HIGH: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum BaolError {
    #[error("match refers to proposal {index} but only {count} proposals were given")]
    InconsistentMatch { index: usize, count: usize },
}

/// A class-agnostic detector output with its objectness and object feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub objectness: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub proposal: usize,
    pub label: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by proposal index.
    pub pairs: Vec<MatchPair>,
    pub unmatched: Vec<usize>,
}

impl MatchResult {
    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }

    pub fn pair_for(&self, proposal: usize) -> Option<&MatchPair> {
        self.pairs.iter().find(|p| p.proposal == proposal)
    }
}

/// Binary foreground targets, one per proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentLabels {
    pub y: Vec<u8>,
}

pub fn iou_matrix(proposals: &[Box3D], labels: &[Box3D]) -> Vec<Vec<f64>> {
    proposals
        .iter()
        .map(|p| labels.iter().map(|l| iou_3d(p, l)).collect())
        .collect()
}

/// Maximum-total-IoU one-to-one matching; zero-IoU pairs never match.
pub fn match_proposals(proposals: &[Box3D], labels: &[Box3D]) -> MatchResult {
    let weights = iou_matrix(proposals, labels);
    let assigned = max_weight_assignment(&weights);
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (i, a) in assigned.iter().enumerate() {
        match a {
            Some(j) if weights[i][*j] > 0.0 => pairs.push(MatchPair {
                proposal: i,
                label: *j,
                iou: weights[i][*j],
            }),
            _ => unmatched.push(i),
        }
    }
    MatchResult { pairs, unmatched }
}

/// Foreground targets from a match.
///
/// A proposal is foreground iff it is matched with IoU at least `phi_low`;
/// then every unmatched proposal whose IoU with one of those foreground
/// proposals exceeds `phi_high` is promoted. Promotion is a single pass.
pub fn assign_labels(
    matched: &MatchResult,
    proposals: &[Box3D],
    phi_low: f64,
    phi_high: f64,
) -> Result<AssignmentLabels, BaolError> {
    let n = proposals.len();
    let mut y = vec![0u8; n];
    let mut is_matched = vec![false; n];
    for pair in &matched.pairs {
        if pair.proposal >= n {
            return Err(BaolError::InconsistentMatch {
                index: pair.proposal,
                count: n,
            });
        }
        is_matched[pair.proposal] = true;
        if pair.iou >= phi_low {
            y[pair.proposal] = 1;
        }
    }
    if let Some(&index) = matched.unmatched.iter().find(|&&i| i >= n) {
        return Err(BaolError::InconsistentMatch { index, count: n });
    }

    let seeds: Vec<usize> = (0..n).filter(|&i| y[i] == 1).collect();
    for j in (0..n).filter(|&j| !is_matched[j]) {
        if seeds
            .iter()
            .any(|&i| iou_3d(&proposals[i], &proposals[j]) > phi_high)
        {
            y[j] = 1;
        }
    }
    Ok(AssignmentLabels { y })
}

/// Keeps proposals whose objectness reaches `phi_obj`, in input order.
pub fn select_proposals(proposals: &[Proposal], phi_obj: f64) -> Vec<Proposal> {
    proposals
        .iter()
        .filter(|p| p.objectness >= phi_obj)
        .cloned()
        .collect()
}
