use std::collections::HashSet;

use proptest::prelude::*;
use protofeedback::data::{
    fallback_vector, generate_dataset, load_scenes, parse_scenes, save_scenes, scenes_to_string, DensityBin,
    GeneratorSpec, Scene, WordVectors,
};
use protofeedback::Error;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn fixture_scenes_parse() {
    let scenes = load_scenes(fixture("two_scenes.jsonl"), 3).unwrap();
    assert_eq!(scenes.len(), 2);
    assert_eq!(scenes[0].labels(), vec![0, 2]);
    assert!(scenes[0].candidates[1].ambiguous);
    assert!(scenes[1].is_empty());
    assert_eq!(scenes[0].subject_features(2).row(0), &[0.5, -0.25]);
}

#[test]
fn out_of_range_label_is_a_data_error() {
    let err = load_scenes(fixture("two_scenes.jsonl"), 2).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err:?}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_line_reports_its_number() {
    let text = std::fs::read_to_string(fixture("two_scenes.jsonl")).unwrap() + "{not json\n";
    match parse_scenes(&text, 3) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn gt_count_must_match_candidates() {
    let line = r#"{"scene_id":"x","context_tag":"","candidates":[],"gt_count":1}"#;
    assert!(matches!(parse_scenes(line, 3), Err(Error::Data(_))));
}

#[test]
fn missing_file_is_io_error() {
    let err = load_scenes("/nonexistent/scenes.jsonl", 3).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn save_and_load_round_trip_exactly() {
    let spec = GeneratorSpec::polysemy(6, 2, 0.3, 17);
    let scenes = generate_dataset(&spec, 25).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    save_scenes(&path, &scenes).unwrap();
    assert_eq!(load_scenes(&path, 6).unwrap(), scenes);
}

#[test]
fn generator_is_deterministic() {
    let spec = GeneratorSpec::polysemy(8, 2, 0.1, 3);
    let a = scenes_to_string(&generate_dataset(&spec, 50).unwrap());
    let b = scenes_to_string(&generate_dataset(&spec, 50).unwrap());
    assert_eq!(a, b);
    let other = GeneratorSpec::polysemy(8, 2, 0.1, 4);
    assert_ne!(a, scenes_to_string(&generate_dataset(&other, 50).unwrap()));
}

#[test]
fn zero_noise_makes_ambiguous_features_identical_across_labels() {
    let spec = GeneratorSpec::polysemy(4, 1, 0.0, 8);
    let scenes = generate_dataset(&spec, 40).unwrap();
    let amb: Vec<_> = scenes
        .iter()
        .flat_map(|s| &s.candidates)
        .filter(|c| c.ambiguous)
        .collect();
    let labels: HashSet<usize> = amb.iter().map(|c| c.label).collect();
    assert_eq!(labels, HashSet::from([0, 1]));
    for c in &amb {
        assert_eq!(c.subj_feat, amb[0].subj_feat);
        assert_eq!(c.obj_feat, amb[0].obj_feat);
        assert_eq!((c.subj_cat, c.obj_cat), (amb[0].subj_cat, amb[0].obj_cat));
    }
}

#[test]
fn ambiguous_label_follows_context_parity() {
    let spec = GeneratorSpec::polysemy(8, 2, 0.1, 5);
    for s in generate_dataset(&spec, 100).unwrap() {
        let ctx: usize = s.context_tag.trim_start_matches("ctx").parse().unwrap();
        for c in s.candidates.iter().filter(|c| c.ambiguous) {
            assert_eq!(c.label % 2, ctx % 2);
        }
    }
}

#[test]
fn filler_labels_follow_zipf() {
    let mut spec = GeneratorSpec::polysemy(5, 0, 0.1, 12);
    spec.ambiguous_per_scene = 0;
    spec.fillers_per_scene = 10;
    let scenes = generate_dataset(&spec, 2000).unwrap();
    let mut counts = [0usize; 5];
    for c in scenes.iter().flat_map(|s| &s.candidates) {
        counts[c.label] += 1;
    }
    let n: usize = counts.iter().sum();
    let chi2: f64 = spec
        .label_distribution()
        .iter()
        .zip(counts)
        .map(|(p, o)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 4 degrees of freedom, p = 0.001
    assert!(chi2 < 18.47, "chi2 = {chi2}");
}

#[test]
fn label_distribution_is_harmonic_at_unit_skew() {
    let spec = GeneratorSpec::polysemy(3, 1, 0.1, 0);
    let h = 1.0 + 0.5 + 1.0 / 3.0;
    let expected = [1.0 / h, 0.5 / h, 1.0 / 3.0 / h];
    for (p, e) in spec.label_distribution().iter().zip(expected) {
        assert!((p - e).abs() < 1e-15);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = GeneratorSpec::polysemy(4, 1, 0.1, 0);
    spec.noise_sigma = -1.0;
    assert!(matches!(generate_dataset(&spec, 1), Err(Error::Config(_))));
    let mut spec = GeneratorSpec::polysemy(4, 1, 0.1, 0);
    spec.confusable_pairs[0].b = 9;
    assert!(matches!(generate_dataset(&spec, 1), Err(Error::Config(_))));
    let mut spec = GeneratorSpec::polysemy(4, 0, 0.1, 0);
    spec.ambiguous_per_scene = 1;
    assert!(matches!(generate_dataset(&spec, 1), Err(Error::Config(_))));
}

#[test]
fn density_bin_edges() {
    let cases = [
        (0, DensityBin::VerySparse),
        (3, DensityBin::VerySparse),
        (4, DensityBin::Sparse),
        (10, DensityBin::Sparse),
        (11, DensityBin::Medium),
        (30, DensityBin::Medium),
        (31, DensityBin::Dense),
    ];
    for (g, bin) in cases {
        assert_eq!(DensityBin::of(g), bin, "G = {g}");
    }
}

#[test]
fn word_vector_fixture() {
    let wv = WordVectors::load(fixture("words.txt"), 3).unwrap();
    assert_eq!(wv.len(), 3);
    assert_eq!(wv.get("under").unwrap(), &[-0.5, 0.0, 0.25]);
    let m = wv.matrix_for(&["person".into(), "missing".into()], 7);
    assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
    assert_eq!(m.row(1), fallback_vector("missing", 3, 7).as_slice());
}

#[test]
fn word_vector_dimension_mismatch() {
    match WordVectors::load(fixture("words.txt"), 4) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        WordVectors::parse("on 1 x 3\n", 3),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn fallback_depends_on_token_and_seed() {
    assert_eq!(fallback_vector("a", 5, 1), fallback_vector("a", 5, 1));
    assert_ne!(fallback_vector("a", 5, 1), fallback_vector("b", 5, 1));
    assert_ne!(fallback_vector("a", 5, 1), fallback_vector("a", 5, 2));
}

proptest! {
    #[test]
    fn generated_scenes_validate(seed in 0u64..1000, preds in 2usize..9, sigma in 0.0f64..1.0) {
        let spec = GeneratorSpec::polysemy(preds, preds / 2, sigma, seed);
        let scenes = generate_dataset(&spec, 5).unwrap();
        for s in &scenes {
            s.validate(preds, Some(spec.num_categories), Some(spec.d_vis)).unwrap();
            prop_assert_eq!(s.len(), spec.fillers_per_scene + spec.ambiguous_per_scene);
        }
        let text = scenes_to_string(&scenes);
        prop_assert_eq!(parse_scenes(&text, preds).unwrap(), scenes);
    }

    #[test]
    fn random_scenes_respect_ranges(seed in 0u64..1000, n in 0usize..20) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let s = Scene::random(&mut rng, n, 4, 3, 2);
        s.validate(4, Some(3), Some(2)).unwrap();
        prop_assert!(s.candidates.iter().flat_map(|c| c.subj_feat.iter().chain(&c.obj_feat)).all(|v| (-1.0..1.0).contains(v)));
    }
}
