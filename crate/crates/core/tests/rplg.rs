mod common;

use std::time::Duration;

use common::{cloud, grid_cloud, serve};
use glis::geometry::{Box2D, ProjectionMatrix};
use glis::rplg::{
    filter_labels, generate_pseudo_labels, reflection_score, render_templates, score_labels,
    template_hash, FileScorer, HttpScorer, ImageTextScorer, KeptLabel, Label2D, ReflectionScore,
    RplgError, ScoreRecord,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label(id: &str, class: &str, b: [f64; 4]) -> Label2D {
    Label2D {
        bbox: Box2D::new(b[0], b[1], b[2], b[3]).unwrap(),
        class_name: class.into(),
        patch_id: id.into(),
    }
}

fn score(phi_pos: f64) -> ReflectionScore {
    ReflectionScore {
        pos_raw: 0.0,
        neg_raw: 0.0,
        phi_pos,
        phi_neg: 1.0 - phi_pos,
    }
}

fn softmax_oracle(a: f64, b: f64) -> f64 {
    a.exp() / (a.exp() + b.exp())
}

#[test]
fn templates() {
    assert_eq!(
        render_templates("chair").unwrap(),
        ("This is a chair.".into(), "This is not a chair.".into())
    );
    assert_eq!(
        render_templates("sofa").unwrap(),
        ("This is a sofa.".into(), "This is not a sofa.".into())
    );
    assert!(matches!(render_templates(""), Err(RplgError::EmptyClass)));
}

#[test]
fn reflection_examples() {
    let s = reflection_score(0.0, 0.0).unwrap();
    assert_eq!((s.phi_pos, s.phi_neg), (0.5, 0.5));
    let s = reflection_score(2.0, 0.0).unwrap();
    assert!((s.phi_pos - 0.8808).abs() <= 1e-4 && (s.phi_neg - 0.1192).abs() <= 1e-4);
    assert!(reflection_score(-3.0, 5.0).unwrap().phi_pos < 0.001);
    assert!(matches!(reflection_score(f64::NAN, 0.0), Err(RplgError::NonFinite)));
}

#[test]
fn reflection_matches_direct_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (a, b) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let s = reflection_score(a, b).unwrap();
        assert!((s.phi_pos - softmax_oracle(a, b)).abs() <= 1e-12, "{a} {b}");
    }
}

#[test]
fn reflection_extreme_logits() {
    let s = reflection_score(1e308, -1e308).unwrap();
    assert_eq!((s.phi_pos, s.phi_neg), (1.0, 0.0));
    let s = reflection_score(-800.0, 800.0).unwrap();
    assert_eq!(s.phi_pos, 0.0);
    let s = reflection_score(1.0, 1.0 - f64::EPSILON).unwrap();
    assert!(s.phi_pos > 0.5);
    let s = reflection_score(5e-324, 0.0).unwrap();
    assert!(s.phi_pos > 0.5 && s.phi_neg < 0.5);
}

#[test]
fn filter_examples() {
    let labels = vec![label("a", "chair", [0.0, 0.0, 1.0, 1.0]), label("b", "sofa", [0.0, 0.0, 1.0, 1.0])];
    let kept = filter_labels(&labels, &[score(0.9), score(0.3)], 0.5).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].label.patch_id, "a");

    let kept = filter_labels(&labels, &[score(0.5), score(0.5)], 0.5).unwrap();
    assert_eq!(kept.len(), 2);

    assert!(matches!(
        filter_labels(&labels, &[score(0.9)], 0.5),
        Err(RplgError::LengthMismatch { labels: 2, scores: 1 })
    ));
}

#[test]
fn filter_matches_predicate_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for round in 0..100 {
        let n = rng.gen_range(0..40);
        let labels: Vec<Label2D> = (0..n)
            .map(|i| label(&format!("p{round}_{i}"), "chair", [0.0, 0.0, 1.0, 1.0]))
            .collect();
        let scores: Vec<ReflectionScore> = (0..n)
            .map(|_| reflection_score(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)).unwrap())
            .collect();
        let phi_clip = rng.gen_range(0.0..1.0);
        let kept = filter_labels(&labels, &scores, phi_clip).unwrap();
        let mut oracle = Vec::new();
        for i in 0..n {
            if scores[i].phi_pos >= phi_clip {
                oracle.push((labels[i].patch_id.clone(), scores[i].phi_pos));
            }
        }
        let got: Vec<_> = kept.iter().map(|k| (k.label.patch_id.clone(), k.phi_pos)).collect();
        assert_eq!(got, oracle);
    }
}

fn kept(id: &str, class: &str, b: [f64; 4]) -> KeptLabel {
    KeptLabel {
        label: label(id, class, b),
        phi_pos: 0.9,
    }
}

#[test]
fn pseudo_label_over_cube() {
    let pts = cloud(grid_cloud([-0.5, -0.5, 4.0], [0.5, 0.5, 5.0], 4));
    let (labels, drops) = generate_pseudo_labels(
        &[kept("a", "chair", [-0.2, -0.2, 0.2, 0.2])],
        &pts,
        &ProjectionMatrix::identity(),
        0.0,
    );
    assert!(drops.is_empty());
    assert_eq!(labels.len(), 1);
    assert_eq!(labels[0].bbox.to_array(), [0.0, 0.0, 4.5, 1.0, 1.0, 1.0, 0.0]);
    assert_eq!((labels[0].class_name.as_str(), labels[0].phi_pos), ("chair", 0.9));
}

#[test]
fn empty_region_is_dropped() {
    let pts = cloud(grid_cloud([-0.5, -0.5, 4.0], [0.5, 0.5, 5.0], 4));
    let (labels, drops) = generate_pseudo_labels(
        &[kept("a", "chair", [3.0, 3.0, 4.0, 4.0])],
        &pts,
        &ProjectionMatrix::identity(),
        0.05,
    );
    assert!(labels.is_empty());
    assert_eq!(drops.len(), 1);
    assert_eq!(drops[0].patch_id, "a");
    assert!(!drops[0].reason.is_empty());
}

#[test]
fn disjoint_clusters_lift_to_their_hulls() {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut hulls = Vec::new();
    for i in 0..5 {
        let x0 = -10.0 + 4.0 * i as f64;
        let (lo, hi) = ([x0, -0.5, 4.0], [x0 + 1.0 + 0.1 * i as f64, 0.5, 5.0]);
        points.extend(grid_cloud(lo, hi, 4));
        // Image extent of the cluster under u = x/z, v = y/z, with a margin.
        let us = [lo[0] / 4.0, lo[0] / 5.0, hi[0] / 4.0, hi[0] / 5.0];
        let umin = us.iter().cloned().fold(f64::INFINITY, f64::min);
        let umax = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let b = [umin - 0.01, -0.2, umax + 0.01, 0.2];
        labels.push(kept(&format!("p{i}"), "box", b));
        hulls.push((lo, hi));
    }
    let (out, drops) = generate_pseudo_labels(&labels, &cloud(points), &ProjectionMatrix::identity(), 0.0);
    assert!(drops.is_empty(), "{drops:?}");
    assert_eq!(out.len(), 5);
    for (p, (lo, hi)) in out.iter().zip(hulls) {
        let a = p.bbox.to_array();
        for k in 0..3 {
            assert!((a[k] - 0.5 * (lo[k] + hi[k])).abs() < 1e-12);
            assert!((a[k + 3] - (hi[k] - lo[k])).abs() < 1e-12);
        }
    }
}

#[test]
fn file_scorer_keys_on_patch_and_templates() {
    let records = vec![
        ScoreRecord { patch_id: "p1".into(), class_name: "chair".into(), pos_raw: 2.0, neg_raw: 0.0 },
        ScoreRecord { patch_id: "p1".into(), class_name: "sofa".into(), pos_raw: -1.0, neg_raw: 1.0 },
    ];
    let scorer = FileScorer::new(&records).unwrap();
    let l = label("p1", "sofa", [0.0, 0.0, 1.0, 1.0]);
    assert_eq!(scorer.score(&l).unwrap(), (-1.0, 1.0));
    let missing = label("p2", "chair", [0.0, 0.0, 1.0, 1.0]);
    assert!(matches!(scorer.score(&missing), Err(RplgError::MissingScore { .. })));
    assert_ne!(template_hash("chair").unwrap(), template_hash("sofa").unwrap());
    assert_eq!(template_hash("chair").unwrap().len(), 64);
}

#[test]
fn http_scorer_round_trip() {
    let (url, server) = serve(vec![r#"{"pos_raw": 1.5, "neg_raw": -0.5}"#.into()]);
    let scorer = HttpScorer::new(url, Duration::from_secs(5), 0);
    let l = label("patch-7", "chair", [0.0, 0.0, 1.0, 1.0]);
    assert_eq!(scorer.score(&l).unwrap(), (1.5, -0.5));
    let seen = server.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
    assert_eq!(
        req,
        serde_json::json!({"patch_id": "patch-7", "positive": "This is a chair.", "negative": "This is not a chair."})
    );
}

#[test]
fn http_scorer_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let scorer = HttpScorer::new(url, Duration::from_millis(500), 1);
    let l = label("p", "chair", [0.0, 0.0, 1.0, 1.0]);
    assert!(matches!(scorer.score(&l), Err(RplgError::Transport(_))));
}

#[test]
fn scoring_is_deterministic() {
    let records: Vec<ScoreRecord> = (0..20)
        .map(|i| ScoreRecord {
            patch_id: format!("p{i}"),
            class_name: "table".into(),
            pos_raw: (i as f64).sin(),
            neg_raw: (i as f64).cos(),
        })
        .collect();
    let labels: Vec<Label2D> = (0..20).map(|i| label(&format!("p{i}"), "table", [0.0, 0.0, 1.0, 1.0])).collect();
    let scorer = FileScorer::new(&records).unwrap();
    let run = || {
        let s = score_labels(&scorer, &labels).unwrap();
        serde_json::to_string(&filter_labels(&labels, &s, 0.5).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let s = reflection_score(a, b).unwrap();
        prop_assert!((s.phi_pos + s.phi_neg - 1.0).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&s.phi_pos) && (0.0..=1.0).contains(&s.phi_neg));
    }

    #[test]
    fn order_preserved(a in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
                       b in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let s = reflection_score(a, b).unwrap();
        prop_assert_eq!(s.phi_pos > 0.5, a > b);
        prop_assert_eq!(s.phi_pos == 0.5, a == b);
    }

    #[test]
    fn order_preserved_near_ties(a in -1e3..1e3f64, ulps in -4i64..=4) {
        let mut b = a;
        for _ in 0..ulps.unsigned_abs() {
            b = if ulps > 0 { b.next_up() } else { b.next_down() };
        }
        let s = reflection_score(a, b).unwrap();
        prop_assert_eq!(s.phi_pos > 0.5, a > b);
        prop_assert_eq!(s.phi_pos < 0.5, a < b);
    }

    #[test]
    fn raising_threshold_shrinks_kept_set(
        raw in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..30),
        t1 in 0.0..1.0f64, t2 in 0.0..1.0f64,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let labels: Vec<Label2D> = (0..raw.len()).map(|i| label(&format!("p{i}"), "chair", [0.0, 0.0, 1.0, 1.0])).collect();
        let scores: Vec<ReflectionScore> = raw.iter().map(|&(a, b)| reflection_score(a, b).unwrap()).collect();
        let loose: Vec<String> = filter_labels(&labels, &scores, lo).unwrap().into_iter().map(|k| k.label.patch_id).collect();
        let strict: Vec<String> = filter_labels(&labels, &scores, hi).unwrap().into_iter().map(|k| k.label.patch_id).collect();
        prop_assert!(strict.iter().all(|id| loose.contains(id)));
    }
}
