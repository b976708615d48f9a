use proptest::prelude::*;
use protofeedback::data::{load_scenes, Scene};
use protofeedback::eval::{
    confusion_rate, confusion_resolution, confusion_table, count_ops, density_binned, evaluate, f_at_k,
    frequent_confusions, grid_csv, mean_recall_at_k, parse_grid_csv, per_predicate_recall, recall_at_k,
    subset_accuracy, ConfusionPair, Heatmap, MetricsReport, ScenePredictions,
};
use protofeedback::model::{Model, ModelConfig, UpdaterKind};
use protofeedback::{Error, Matrix};

fn sp(labels: &[usize], preds: &[usize], scores: &[f64]) -> ScenePredictions {
    ScenePredictions::new(labels.to_vec(), preds.to_vec(), scores.to_vec()).unwrap()
}

/// Scene 1: three triplets, ranked 2, 0, 1; candidates 0 and 1 correct.
/// Scene 2: one triplet, wrong.
fn fixture() -> Vec<ScenePredictions> {
    vec![
        sp(&[0, 1, 1], &[0, 1, 2], &[0.8, 0.5, 0.9]),
        sp(&[2], &[1], &[0.7]),
        sp(&[], &[], &[]),
    ]
}

#[test]
fn recall_by_hand() {
    let s = fixture();
    // K=1: scene 1 top is candidate 2 (wrong) -> 0; scene 2 -> 0.
    assert_eq!(recall_at_k(&s, 1), Some(0.0));
    // K=2: candidates 2, 0 -> 1/3.
    assert!((recall_at_k(&s, 2).unwrap() - 100.0 / 6.0).abs() < 1e-12);
    // K=3: 2/3 and 0.
    assert!((recall_at_k(&s, 3).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    assert_eq!(recall_at_k(&s[2..], 5), None);
}

#[test]
fn mean_recall_by_hand() {
    let s = fixture();
    let per = per_predicate_recall(&s, 3, 4);
    assert_eq!(per, vec![Some(100.0), Some(50.0), Some(0.0), None]);
    assert!((mean_recall_at_k(&s, 3, 4).unwrap() - 50.0).abs() < 1e-12);
}

#[test]
fn ranking_ties_keep_index_order() {
    let s = sp(&[0, 0, 0], &[0, 0, 0], &[0.5, 0.5, 0.9]);
    assert_eq!(s.ranking(), vec![2, 0, 1]);
    assert_eq!(s.hits(2), vec![true, false, true]);
}

#[test]
fn mismatched_lengths_rejected() {
    assert!(matches!(
        ScenePredictions::new(vec![0], vec![], vec![]),
        Err(Error::Data(_))
    ));
}

#[test]
fn f_values() {
    assert!((f_at_k(65.06, 37.36) - 47.47).abs() <= 0.01);
    assert!((f_at_k(61.3, 42.6) - 50.3).abs() <= 0.05);
    assert_eq!(f_at_k(0.0, 0.0), 0.0);
    assert_eq!(f_at_k(40.0, 40.0), 40.0);
}

#[test]
fn confusion_rate_examples() {
    assert!((confusion_rate(23, 54).unwrap() - 42.6).abs() <= 0.05);
    assert_eq!(confusion_rate(0, 0), None);
    assert_eq!(confusion_rate(5, 5), Some(100.0));
}

#[test]
fn confusion_resolution_counts() {
    // Model A confuses 0 -> 1 on 54 candidates; model B fixes 23 of them.
    let labels = vec![0; 60];
    let a_preds: Vec<usize> = (0..60).map(|j| if j < 54 { 1 } else { 0 }).collect();
    let b_preds: Vec<usize> = (0..60).map(|j| if !(23..54).contains(&j) { 0 } else { 2 }).collect();
    let scores = vec![1.0; 60];
    let a = vec![sp(&labels, &a_preds, &scores)];
    let b = vec![sp(&labels, &b_preds, &scores)];
    let pairs = frequent_confusions(&a, 3);
    assert_eq!(pairs, vec![ConfusionPair { gt: 0, confused: 1 }]);
    let rows = confusion_resolution(&a, &b, &pairs).unwrap();
    assert_eq!((rows[0].resolved, rows[0].total), (23, 54));
    let table = confusion_table(&rows, &["on".into(), "has".into()]);
    assert!(table.contains("23 (54)") && table.contains("42.59"), "{table}");
    let empty = confusion_resolution(&a, &b, &[ConfusionPair { gt: 1, confused: 0 }]).unwrap();
    assert_eq!(empty[0].rate, None);
}

#[test]
fn confusion_runs_must_align() {
    let a = vec![sp(&[0], &[1], &[1.0])];
    let b = vec![sp(&[1], &[1], &[1.0])];
    assert!(confusion_resolution(&a, &b, &[]).is_err());
}

#[test]
fn density_bins_partition_scenes() {
    let mk = |g: usize| sp(&vec![0; g], &vec![0; g], &vec![1.0; g]);
    let scenes: Vec<_> = [3, 4, 10, 11, 30, 31].into_iter().map(mk).collect();
    let bins = density_binned(&scenes, &[50], 1);
    let counts: Vec<(String, usize)> = bins.iter().map(|b| (b.bin.clone(), b.scenes)).collect();
    assert_eq!(
        counts,
        vec![
            ("very_sparse".into(), 1),
            ("sparse".into(), 2),
            ("medium".into(), 2),
            ("dense".into(), 1)
        ]
    );
    assert_eq!(bins[3].metrics[0].recall, Some(100.0 * 31f64.min(50.0) / 31.0));
}

#[test]
fn subset_accuracy_uses_mask() {
    let s = fixture();
    let mask = vec![vec![false, true, true], vec![true], vec![]];
    assert!((subset_accuracy(&s, &mask).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    assert_eq!(subset_accuracy(&s, &[vec![], vec![], vec![]]), None);
}

#[test]
fn heatmap_csv_round_trip() {
    let names: Vec<String> = ["on", "has", "near"].iter().map(|s| s.to_string()).collect();
    let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], 2).unwrap();
    let a = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.3, 1.0], vec![-1.0, 1.0]], 2).unwrap();
    let h = Heatmap::new(names.clone(), &p, &a).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (delta, sim) = h.write(&dir.path().join("heat")).unwrap();
    let (n, d) = parse_grid_csv(&std::fs::read_to_string(delta).unwrap()).unwrap();
    assert_eq!((n, d), (names.clone(), h.delta.clone()));
    let (_, s) = parse_grid_csv(&std::fs::read_to_string(sim).unwrap()).unwrap();
    assert_eq!(s, h.similarity);
    assert!(grid_csv(&names, &h.delta).starts_with("predicate,on,has,near\non,0,"));
    assert!(Heatmap::new(names[..2].to_vec(), &p, &a).is_err());
    assert!(matches!(
        parse_grid_csv("predicate,a\na,1,2\n"),
        Err(Error::Parse { line: 2, .. })
    ));
}

fn fixture_model(updater: UpdaterKind, edge: bool) -> Model {
    let config = ModelConfig {
        predicate_names: vec!["on".into(), "has".into(), "near".into()],
        category_names: vec!["person".into(), "cup".into()],
        d_vis: 2,
        d_word: 3,
        d_model: 4,
        updater,
        edge_enabled: edge,
        temperature: 0.1,
    };
    Model::init(config, 0).unwrap()
}

fn fixture_scenes() -> Vec<Scene> {
    load_scenes(
        format!("{}/tests/fixtures/two_scenes.jsonl", env!("CARGO_MANIFEST_DIR")),
        3,
    )
    .unwrap()
}

#[test]
fn evaluate_fixture() {
    let model = fixture_model(UpdaterKind::Gru, true);
    let (report, preds) = evaluate(&model, &fixture_scenes(), &[1, 50]).unwrap();
    assert_eq!((report.scenes, report.candidates), (2, 2));
    assert_eq!(preds.len(), 2);
    assert_eq!(report.skipped_predicates, vec!["has".to_string()]);
    assert_eq!(report.per_predicate_recall[1], None);
    assert!(report.ambiguous_accuracy.is_some());
    let back = MetricsReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert!(report.table().contains("absent from mean recall: has"));
}

#[test]
fn evaluation_is_deterministic() {
    let model = fixture_model(UpdaterKind::Ema, true);
    let a = evaluate(&model, &fixture_scenes(), &[50]).unwrap().0.to_json().unwrap();
    let b = evaluate(&model, &fixture_scenes(), &[50]).unwrap().0.to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn feedback_cost_is_linear_in_candidates() {
    for (u, edge) in [
        (UpdaterKind::Gru, true),
        (UpdaterKind::Concat, true),
        (UpdaterKind::Gru, false),
    ] {
        let report = count_ops(&fixture_model(u, edge), &[8, 16, 32, 64], 1).unwrap();
        for (n, r) in report.doubling_ratios() {
            assert!((r - 2.0).abs() < 1e-12, "{u} N={n}: {r}");
        }
    }
    let id = count_ops(&fixture_model(UpdaterKind::Identity, false), &[8, 16], 1).unwrap();
    assert!(id.counts.iter().all(|c| c.multiply_adds == 0));
}

fn preds_strategy() -> impl Strategy<Value = Vec<ScenePredictions>> {
    prop::collection::vec(
        (0usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..4, n),
                prop::collection::vec(0usize..4, n),
                prop::collection::vec(0.0f64..1.0, n),
            )
        }),
        1..6,
    )
    .prop_map(|v| v.into_iter().map(|(l, p, s)| sp(&l, &p, &s)).collect())
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k(s in preds_strategy(), k in 1usize..12) {
        if let (Some(a), Some(b)) = (recall_at_k(&s, k), recall_at_k(&s, k + 1)) {
            prop_assert!(a <= b + 1e-12);
            prop_assert!((0.0..=100.0).contains(&a));
        }
        if let (Some(a), Some(b)) = (mean_recall_at_k(&s, k, 4), mean_recall_at_k(&s, k + 1, 4)) {
            prop_assert!(a <= b + 1e-12);
        }
    }

    #[test]
    fn f_lies_between_its_inputs(r in 0.0f64..100.0, mr in 0.0f64..100.0) {
        let f = f_at_k(r, mr);
        prop_assert!(f >= r.min(mr) - 1e-12 && f <= r.max(mr) + 1e-12);
        prop_assert!((f - f_at_k(mr, r)).abs() < 1e-12);
    }

    #[test]
    fn bins_cover_every_scene(s in preds_strategy()) {
        let bins = density_binned(&s, &[5], 4);
        prop_assert_eq!(bins.iter().map(|b| b.scenes).sum::<usize>(), s.len());
    }
}
