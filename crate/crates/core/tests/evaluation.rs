use cse_core::evaluation::*;
use cse_core::models::{M1Config, ModelKind, ModelSpec};
use cse_tensor::{LayerKind, LayerSpec};
use proptest::prelude::*;

/// O(n^2) pairwise AUC with half credit for ties.
fn pairwise_auc(scores: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn confusion_fixtures() {
    let c = confusion(&[1, 0], &[1, 0]).unwrap();
    assert_eq!((c.tp, c.tn, c.fp, c.fn_), (1, 1, 0, 0));
    let y = [1, 1, 1, 0, 0, 0, 1, 0];
    let p = [1, 0, 1, 1, 0, 0, 0, 0];
    let c = confusion(&y, &p).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 3, 2));
    let flipped: Vec<u8> = p.iter().map(|v| 1 - v).collect();
    let f = confusion(&y, &flipped).unwrap();
    assert_eq!((f.tp, f.fn_, f.tn, f.fp), (c.fn_, c.tp, c.fp, c.tn));
    assert!(confusion(&[1], &[1, 0]).is_err());
    assert!(confusion(&[2], &[1]).is_err());
}

#[test]
fn hand_tallied_metrics() {
    let c = Confusion {
        tp: 3,
        fp: 1,
        tn: 2,
        fn_: 2,
    };
    let m = metrics(&c, &[], &[]);
    assert_eq!(m.accuracy, 5.0 / 8.0);
    assert_eq!(m.precision, 0.75);
    assert_eq!(m.recall, 0.6);
    assert_eq!(m.f1, 6.0 / 9.0);
    assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
    assert_eq!(m.auc, None);
    let none = metrics(&Confusion { tn: 4, ..Default::default() }, &[], &[]);
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
}

#[test]
fn auc_edge_cases() {
    let y = [0, 0, 1, 1];
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &y), Some(1.0));
    assert_eq!(auc(&[0.5; 4], &y), Some(0.5));
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &y), Some(0.0));
    assert_eq!(auc(&[0.1, 0.2], &[1, 1]), None);
    let m = metrics(&confusion(&y, &y).unwrap(), &[0.1, 0.2, 0.8, 0.9], &y);
    assert_eq!((m.f1, m.auc), (1.0, Some(1.0)));
}

#[test]
fn tie_rule() {
    assert_eq!(predict_class(&[0.0, 0.0]), 0);
    assert_eq!(predict_class(&[0.2, 0.2000001]), 1);
    assert_eq!(predict_class(&[1.0, -1.0]), 0);
}

#[test]
fn roc_runs_from_origin_to_corner() {
    let pts = roc_points(&[0.9, 0.4, 0.4, 0.1], &[1, 0, 1, 0]);
    assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
    let last = pts.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    assert_eq!(pts.len(), 4);
    assert!(pts.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle(
        data in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let y: Vec<u8> = data.iter().map(|(_, l)| *l as u8).collect();
        let got = auc(&scores, &y);
        if y.iter().all(|&v| v == y[0]) {
            prop_assert!(got.is_none());
        } else {
            prop_assert!((got.unwrap() - pairwise_auc(&scores, &y)).abs() < 1e-9);
        }
    }
}

#[test]
fn layer_counting_rules() {
    let dense = LayerSpec::new("fc", LayerKind::Dense { inputs: 16, outputs: 2 }, &[16]);
    assert_eq!(layer_params(&dense), 34);
    assert_eq!(layer_flops(&dense).unwrap(), 66);
    let gru = LayerSpec::new(
        "g",
        LayerKind::Gru {
            inputs: 5,
            hidden: 3,
            return_all: false,
        },
        &[32, 5],
    );
    assert_eq!(layer_params(&gru), 90);
    let wide = LayerSpec::new(
        "g",
        LayerKind::Gru {
            inputs: 5,
            hidden: 6,
            return_all: false,
        },
        &[32, 5],
    );
    assert!(layer_flops(&wide).unwrap() >= 2 * layer_flops(&gru).unwrap());
    let bad = LayerSpec::new("fc", LayerKind::Dense { inputs: 16, outputs: 2 }, &[15]);
    assert!(layer_flops(&bad).is_err());
}

#[test]
fn shipped_specs_order_and_targets() {
    let specs: Vec<ModelSpec> = ModelKind::MEMBERS.iter().map(|k| ModelSpec::default_for(*k)).collect();
    let f: Vec<u64> = specs.iter().map(|s| profile_flops(s).unwrap()).collect();
    assert!(f[1] < f[2] && f[2] < f[0], "{f:?}");
    let report = complexity_report(&specs).unwrap();
    for (name, tol) in [("m1", 0.10), ("m2", 0.15), ("m3", 0.10)] {
        let r = report.row(name).unwrap();
        assert!((r.params_ratio.unwrap() - 1.0).abs() <= tol, "{name}: {:?}", r.params_ratio);
    }
    let head = report.row("cse_head").unwrap().params;
    let members: usize = specs.iter().map(profile_params).sum();
    assert_eq!(report.row("cse(m1+m2+m3)").unwrap().params, members + head);
    assert_eq!(head, 14);
    let pair = complexity_report(&[specs[0].clone(), specs[2].clone()]).unwrap();
    assert_eq!(pair.row("cse(m1+m3)").unwrap().params, 11_810 + 702 + 10);
}

#[test]
fn wider_hidden_state_costs_more() {
    let a = profile_flops(&ModelSpec::m1(M1Config::default())).unwrap();
    let b = profile_flops(&ModelSpec::m1(M1Config {
        hidden: 32,
        ..Default::default()
    }))
    .unwrap();
    assert!(b > a);
}

#[test]
fn complexity_table_rows() {
    let specs: Vec<ModelSpec> = ModelKind::MEMBERS.iter().map(|k| ModelSpec::default_for(*k)).collect();
    let rows = complexity_rows(&complexity_report(&specs).unwrap());
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.len() == COMPLEXITY_HEADER.len()));
    let mut buf = Vec::new();
    write_table(&mut buf, TableFormat::Tsv, &COMPLEXITY_HEADER, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("model\tparams\tflops"));
}

#[test]
fn sensitivity_worked_example() {
    let a = [1, 0, 1, 0];
    let b = [1, 1, 1, 0];
    let y = [1, 0, 0, 0];
    let conf = [0.5; 4];
    let r = sensitivity(&a, &conf, &b, &conf, &y, &y).unwrap();
    assert_eq!(r.common_predictions, 0.75);
    assert_eq!(r.baseline_false, 0.25);
    assert_eq!(r.additional_false, 0.5);
    assert_eq!(r.common_false, 0.25);
    assert_eq!(r.union_false, 0.5);
    assert_eq!(r.merged_false, 0.0);
    assert_eq!(r.correlation, None);
}

#[test]
fn sensitivity_self_comparison_and_anticorrelation() {
    let p = [1, 0, 0, 1, 1];
    let y = [1, 1, 0, 0, 1];
    let c = [0.9, 0.2, 0.4, 0.7, 0.6];
    let r = sensitivity(&p, &c, &p, &c, &p, &y).unwrap();
    assert_eq!(r.common_predictions, 1.0);
    assert_eq!(r.common_false, r.union_false);
    assert_eq!(r.common_false, r.baseline_false);
    assert!((r.correlation.unwrap() - 1.0).abs() < 1e-12);
    let anti: Vec<f64> = c.iter().map(|v| 1.0 - v).collect();
    assert!((pearson(&c, &anti).unwrap() + 1.0).abs() < 1e-12);
    assert!(sensitivity(&p, &[1.5; 5], &p, &c, &p, &y).is_err());
    assert!(sensitivity(&p[..4], &c, &p, &c, &p, &y).is_err());
}

proptest! {
    #[test]
    fn sensitivity_set_algebra(
        rows in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), 0.0f64..=1.0, 0.0f64..=1.0), 1..60)
    ) {
        let bp: Vec<u8> = rows.iter().map(|r| r.0 as u8).collect();
        let ap: Vec<u8> = rows.iter().map(|r| r.1 as u8).collect();
        let mp: Vec<u8> = rows.iter().map(|r| r.2 as u8).collect();
        let y: Vec<u8> = rows.iter().map(|r| r.3 as u8).collect();
        let bc: Vec<f64> = rows.iter().map(|r| r.4).collect();
        let ac: Vec<f64> = rows.iter().map(|r| r.5).collect();
        let r = sensitivity(&bp, &bc, &ap, &ac, &mp, &y).unwrap();
        let eps = 1e-12;
        prop_assert!(r.common_false <= r.baseline_false.min(r.additional_false) + eps);
        prop_assert!(r.union_false + eps >= r.baseline_false.max(r.additional_false));
        prop_assert!(r.union_false <= (r.baseline_false + r.additional_false).min(1.0) + eps);
        prop_assert!((r.union_false - (r.baseline_false + r.additional_false - r.common_false)).abs() < eps);
        prop_assert!((r.common_predictions - (r.common_false + 1.0 - r.union_false)).abs() < eps);
        for v in [r.baseline_false, r.additional_false, r.common_predictions, r.common_false, r.union_false, r.merged_false] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(c) = r.correlation {
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
