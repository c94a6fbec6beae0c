mod common;

use cse_core::dataset::{FoldPlan, SegmentId};
use cse_core::ensemble::*;
use cse_core::evaluation::TableFormat;
use cse_core::models::{FeatureStore, ModelKind, ModelSpec, Recipe};
use cse_core::pipeline::{plan_folds, ExperimentConfig};
use cse_core::synth::SceneConfig;
use cse_core::CoreError;

fn short() -> Recipe {
    Recipe {
        epochs: 2,
        ..Recipe::default()
    }
}

fn small_scene() -> SceneConfig {
    SceneConfig {
        seed: 3,
        clips: 20,
        frames_min: 64,
        frames_max: 64,
        test_fraction: 0.2,
        val_fraction: 0.0,
        ..SceneConfig::default()
    }
}

fn specs() -> Vec<ModelSpec> {
    ModelKind::MEMBERS.iter().map(|k| ModelSpec::default_for(*k)).collect()
}

/// Hand-built OOF table: `scores[i]` holds one 2-unit output per member.
fn table(members: &[ModelKind], scores: &[Vec<[f64; 2]>], labels: &[u8]) -> OofFeatures {
    OofFeatures {
        members: members.to_vec(),
        member_hashes: members.iter().map(|m| format!("h-{m}")).collect(),
        rows: scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (s, &label))| OofRow {
                id: SegmentId::new("c", format!("p{i:02}"), 1),
                fold: i % 5,
                label,
                scores: s.clone(),
            })
            .collect(),
    }
}

fn head_params(c: &CseClassifier) -> (Vec<f64>, Vec<f64>) {
    let ck = c.checkpoint();
    let w = ck.records.iter().find(|(_, t)| t.rank() == 2).unwrap().1.data().to_vec();
    let b = ck.records.iter().find(|(_, t)| t.rank() == 1).unwrap().1.data().to_vec();
    (w, b)
}

#[test]
fn oof_covers_pool_once_without_leakage() {
    let (pool_segs, pool, _) = common::synth_features(&small_scene());
    let cfg = ExperimentConfig::default();
    let plan = plan_folds(&pool_segs, &cfg).unwrap();
    let data = FeatureStore::new(&pool);
    let (oof, runs) = collect_oof(&specs(), &plan, &data, 1, &short()).unwrap();
    assert_eq!(oof.rows.len(), pool.len());
    assert_eq!(oof.width(), 6);
    assert!(oof.rows.iter().all(|r| r.scores.len() == 3 && OofFeatures::features(r).len() == 6));
    assert!(oof.rows.iter().all(|r| plan.validation_fold(&r.id) == Some(r.fold)));
    assert_eq!(audit_leakage(&oof, &plan), 0);
    assert_eq!(runs.len(), 15);

    let mut leaky = oof.clone();
    leaky.rows[0].fold = (leaky.rows[0].fold + 1) % plan.k;
    assert_eq!(audit_leakage(&leaky, &plan), 1);

    let pair = oof.subset(&[ModelKind::M1, ModelKind::M3]).unwrap();
    assert_eq!(pair.width(), 4);
    for (a, b) in pair.rows.iter().zip(&oof.rows) {
        assert_eq!(a.scores, vec![b.scores[0], b.scores[2]]);
    }

    let mut missing = runs.clone();
    missing.retain(|r| !(r.member == ModelKind::M2 && r.fold == 3));
    match assemble_oof(&specs(), &plan, &missing, &data) {
        Err(CoreError::MissingFold { member, fold }) => assert_eq!((member.as_str(), fold), ("m2", 3)),
        other => panic!("expected MissingFold, got {other:?}"),
    }
}

#[test]
fn fold_order_does_not_change_scores() {
    let (pool_segs, pool, _) = common::synth_features(&small_scene());
    let plan = plan_folds(&pool_segs, &ExperimentConfig::default()).unwrap();
    let data = FeatureStore::new(&pool);
    let m3 = [ModelSpec::default_for(ModelKind::M3)];
    let fwd = train_members(&m3, &plan, &data, 7, &short(), None).unwrap();
    let rev = train_members(&m3, &plan, &data, 7, &short(), Some(&[4, 3, 2, 1, 0])).unwrap();
    let a = assemble_oof(&m3, &plan, &fwd, &data).unwrap();
    let b = assemble_oof(&m3, &plan, &rev, &data).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oof_table_round_trip() {
    let oof = table(
        &[ModelKind::M2, ModelKind::M1],
        &[vec![[0.25, -1.5], [1e-9, 3.0]], vec![[-0.125, 2.0], [4.5, -6.0]]],
        &[0, 1],
    );
    let dir = tempfile::tempdir().unwrap();
    for fmt in [TableFormat::Csv, TableFormat::Tsv] {
        let p = dir.path().join("oof.txt");
        oof.save_table(&p, fmt).unwrap();
        assert_eq!(OofFeatures::load_table(&p, fmt).unwrap(), oof);
    }
}

#[test]
fn head_is_a_dense_layer_over_concatenated_scores() {
    let members = ModelKind::MEMBERS;
    let scores: Vec<Vec<[f64; 2]>> = (0..10)
        .map(|i| {
            let v = i as f64 / 10.0;
            vec![[-v, v], [v * 0.5, 1.0 - v], [0.3, v * v]]
        })
        .collect();
    let labels: Vec<u8> = (0..10).map(|i| (i >= 5) as u8).collect();
    let oof = table(&members, &scores, &labels);
    let head = train_cse(&oof, 1, &head_recipe()).unwrap();
    let (w, b) = head_params(&head);
    assert_eq!((w.len(), b.len()), (12, 2));
    for s in &scores {
        let x = OofFeatures::features(&OofRow {
            id: SegmentId::new("c", "p", 1),
            fold: 0,
            label: 0,
            scores: s.clone(),
        });
        let mut want = b.clone();
        for (i, xi) in x.iter().enumerate() {
            for (o, wo) in want.iter_mut().enumerate() {
                *wo += xi * w[i * 2 + o];
            }
        }
        let got = head.predict_scores(s).unwrap();
        assert!((got.logits[0] - want[0]).abs() < 1e-12 && (got.logits[1] - want[1]).abs() < 1e-12);
        assert_eq!(got.class, (want[1] > want[0]) as u8);
        assert!((got.confidence - 1.0 / (1.0 + (-want[1]).exp())).abs() < 1e-12);
    }
    assert!(head.predict_scores(&scores[0][..2]).is_err());
}

#[test]
fn zero_head_ties_to_negative_class() {
    let oof = table(&[ModelKind::M1], &[vec![[0.0, 1.0]], vec![[1.0, 0.0]]], &[1, 0]);
    let mut head = train_cse(&oof, 1, &head_recipe()).unwrap();
    head.head.zero_params();
    let p = head.predict_scores(&[[3.0, -2.0]]).unwrap();
    assert_eq!((p.class, p.confidence, p.logits), (0, 0.5, [0.0, 0.0]));
}

#[test]
fn saturated_member_scores_stay_finite() {
    let scores: Vec<Vec<[f64; 2]>> = (0..8)
        .map(|i| {
            let s = if i % 2 == 1 { 1e6 } else { -1e6 };
            vec![[-s, s], [0.0, 0.0]]
        })
        .collect();
    let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
    let head = train_cse(&table(&[ModelKind::M1, ModelKind::M2], &scores, &labels), 1, &head_recipe()).unwrap();
    assert!(head.log.history.iter().all(|e| e.train_loss.is_finite()));
    for s in &scores {
        let p = head.predict_scores(s).unwrap();
        assert!(p.logits.iter().all(|v| v.is_finite()));
        assert!((0.0..=1.0).contains(&p.confidence));
    }
}

#[test]
fn head_learns_separable_oof_and_is_deterministic() {
    let scores: Vec<Vec<[f64; 2]>> = (0..40)
        .map(|i| {
            let y = (i % 2) as f64;
            let m = 2.0 * y - 1.0 + 0.1 * ((i * 7 % 5) as f64 - 2.0);
            vec![[-m, m], [((i * 3) % 7) as f64 / 7.0, 0.0]]
        })
        .collect();
    let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let oof = table(&[ModelKind::M1, ModelKind::M2], &scores, &labels);
    let a = train_cse(&oof, 4, &head_recipe()).unwrap();
    let b = train_cse(&oof, 4, &head_recipe()).unwrap();
    assert_eq!(a.checkpoint(), b.checkpoint());
    let correct = scores
        .iter()
        .zip(&labels)
        .filter(|(s, &y)| a.predict_scores(s).unwrap().class == y)
        .count();
    assert_eq!(correct, 40);
}

#[test]
fn single_class_oof_is_rejected() {
    let oof = table(&[ModelKind::M1], &[vec![[0.0, 1.0]], vec![[1.0, 0.0]]], &[1, 1]);
    assert!(train_cse(&oof, 1, &head_recipe()).is_err());
}

#[test]
fn refit_length_is_the_median_best_epoch() {
    let (pool_segs, pool, _) = common::synth_features(&small_scene());
    let plan: FoldPlan = plan_folds(&pool_segs, &ExperimentConfig::default()).unwrap();
    let data = FeatureStore::new(&pool);
    let m3 = [ModelSpec::default_for(ModelKind::M3)];
    let mut runs = train_members(&m3, &plan, &data, 1, &short(), None).unwrap();
    for (r, e) in runs.iter_mut().zip([5, 1, 9, 3, 7]) {
        r.log.best_epoch = e;
    }
    assert_eq!(refit_epochs(&runs, ModelKind::M3), 5);
    assert_eq!(refit_epochs(&runs[..4], ModelKind::M3), 3);
    assert_eq!(refit_epochs(&runs, ModelKind::M1), 1);
}

#[test]
fn soft_vote_reference() {
    assert_eq!(soft_vote(&[0.9, 0.2, 0.6]), (1, (0.9 + 0.2 + 0.6) / 3.0));
    assert_eq!(soft_vote(&[0.5, 0.5]).0, 0);
}
