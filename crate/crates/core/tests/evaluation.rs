mod common;

use fingerdiff::dataset::{generate_synthetic_dataset, Manifest, Split, SynthConfig};
use fingerdiff::evaluation::{
    auc, build_pairs, cross_generator_matrix, emit_report, evaluate_embeddings, load_report,
    run_ablation, AblationAxis, EvalConfig, Recipe, ReportArtifacts, REPORT_FILE,
};
use fingerdiff::model::{Condition, Embedding};
use fingerdiff::objective::SupConConfig;
use proptest::prelude::*;

use common::*;

/// Quadratic reference: fraction of (pos, neg) pairs ordered correctly, ties half.
fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn unit(v: &[f32]) -> Embedding {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    Embedding(v.iter().map(|x| x / n).collect())
}

/// Target A: three self-reenactments and two videos driven by B; plus B's own.
fn small_manifest(generator_of: impl Fn(usize) -> &'static str) -> Manifest {
    let rows = [("A", "A"), ("A", "A"), ("A", "A"), ("A", "B"), ("A", "B"), ("B", "B"), ("B", "B"), ("B", "A")];
    Manifest::from_records(
        rows.iter()
            .enumerate()
            .map(|(i, (t, d))| record(&format!("v{i}"), t, d, generator_of(i), Split::Test))
            .collect(),
    )
    .unwrap()
}

#[test]
fn pairs_for_three_self_and_two_cross_videos() {
    let m = small_manifest(|_| "g");
    let emb: Vec<_> = (0..m.len()).map(|i| unit(&[1.0, i as f32])).collect();
    let pairs = build_pairs(&m, "A", &emb).unwrap();
    let pos: Vec<_> = pairs.iter().filter(|p| p.is_positive).collect();
    let neg: Vec<_> = pairs.iter().filter(|p| !p.is_positive).collect();
    assert_eq!(pos.len(), 3);
    assert_eq!(neg.len(), 6);
    for p in &pairs {
        assert_ne!(p.videos[0], p.videos[1]);
        assert!(m.records()[p.videos[0]].is_self_reenactment());
        assert_eq!(p.target_id, "A");
    }
    assert!(neg.iter().all(|p| !m.records()[p.videos[1]].is_self_reenactment()));
}

#[test]
fn hand_computed_auc_matches() {
    // Scores in the plane: self videos at angles 0, 0.1, 0.2 rad; cross at 0.15 and 1.0.
    let m = small_manifest(|_| "g");
    let angles = [0.0f32, 0.1, 0.2, 0.15, 1.0, 0.0, 0.5, 2.0];
    let emb: Vec<_> = angles.iter().map(|a| Embedding(vec![a.cos(), a.sin()])).collect();
    let cfg = EvalConfig { split: Split::Test, per_generator: false };
    let report = evaluate_embeddings(&m, &emb, &cfg, &tiny_model(Condition::FeatDiff, 4)).unwrap();
    // Positive angle gaps: 0.1, 0.2, 0.1. Negative gaps: 0.15, 1.0, 0.05, 0.9, 0.05, 0.8.
    // Correctly ordered (pos gap < neg gap): 0.1 beats 4 of 6, 0.2 beats 3, 0.1 beats 4.
    let expected_a = 11.0 / 18.0;
    assert!((report.per_target_auc["A"] - expected_a).abs() < 1e-12);
    // Target B has two self videos (5, 6) and one cross (7): gap 0.5 vs gaps 2.0 and 1.5.
    assert_eq!(report.per_target_auc["B"], 1.0);
    assert!((report.mean_auc - (expected_a + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn perfect_and_constant_embeddings() {
    let m = small_manifest(|_| "g");
    let cfg = EvalConfig { split: Split::Test, per_generator: false };
    let model = tiny_model(Condition::FeatDiff, 4);
    let perfect: Vec<_> = m.records().iter().map(|r| if r.driver_id == "A" { unit(&[1.0, 0.0]) } else { unit(&[0.0, 1.0]) }).collect();
    let r = evaluate_embeddings(&m, &perfect, &cfg, &model).unwrap();
    assert_eq!(r.mean_auc, 1.0);
    let constant = vec![unit(&[1.0, 1.0]); m.len()];
    let r = evaluate_embeddings(&m, &constant, &cfg, &model).unwrap();
    assert_eq!(r.mean_auc, 0.5);
}

#[test]
fn targets_without_enough_videos_are_skipped_with_a_reason() {
    let records = vec![
        record("a", "A", "A", "g", Split::Test),
        record("b", "A", "A", "g", Split::Test),
        record("c", "A", "B", "g", Split::Test),
        record("d", "B", "B", "g", Split::Test),
        record("e", "B", "A", "g", Split::Test),
    ];
    let m = Manifest::from_records(records).unwrap();
    let emb: Vec<_> = (0..5).map(|i| unit(&[1.0, i as f32])).collect();
    let r = evaluate_embeddings(&m, &emb, &EvalConfig::default(), &tiny_model(Condition::FeatDiff, 4)).unwrap();
    assert_eq!(r.per_target_auc.len(), 1);
    assert_eq!(r.skipped_targets.len(), 1);
    assert_eq!(r.skipped_targets[0].target_id, "B");
    assert!(r.skipped_targets[0].reason.contains("self-reenactment"));
}

#[test]
fn auc_rejects_bad_input() {
    assert!(auc(&[], &[0.1]).is_err());
    assert!(auc(&[0.1], &[]).is_err());
    assert!(auc(&[f64::NAN], &[0.1]).is_err());
    assert_eq!(auc(&[0.3, 0.3], &[0.3]).unwrap(), 0.5);
}

#[test]
fn report_round_trips_and_notes_missing_heatmap() {
    let m = small_manifest(|i| if i % 2 == 0 { "g1" } else { "g2" });
    let emb: Vec<_> = (0..m.len()).map(|i| unit(&[1.0, (i * i) as f32 * 0.1])).collect();
    let model = tiny_model(Condition::PixelDiff, 4);

    let no_gen = evaluate_embeddings(&m, &emb, &EvalConfig { split: Split::Test, per_generator: false }, &model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&no_gen, &ReportArtifacts::default(), dir.path()).unwrap();
    let loaded = load_report(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(loaded.report, no_gen);
    assert!(loaded.notes.iter().any(|n| n.contains("heatmap skipped")));
    assert!(!dir.path().join("crossgen_heatmap.svg").exists());
    assert!(dir.path().join("condition_bars.svg").exists());

    let mut tampered = no_gen.clone();
    tampered.mean_auc += 0.1;
    assert!(emit_report(&tampered, &ReportArtifacts::default(), dir.path()).is_err());
}

#[test]
fn cross_generator_matrix_and_condition_ablation_on_tiny_data() {
    let data = tempfile::tempdir().unwrap();
    let synth = SynthConfig { style_tags: vec!["style_a".into(), "style_b".into()], ..tiny_synth(4, 2) };
    let m = generate_synthetic_dataset(&synth, data.path()).unwrap();
    let recipe = Recipe {
        model: tiny_model(Condition::FeatDiff, 4),
        train: tiny_train(2, 2, 1, 1, 0),
        objective: SupConConfig::default(),
    };
    let out = tempfile::tempdir().unwrap();
    let matrix = cross_generator_matrix(&m, &recipe, out.path()).unwrap();
    assert_eq!(matrix.train_generators, vec!["style_a", "style_b"]);
    assert_eq!(matrix.auc.len(), 2);
    assert!(matrix.auc.iter().flatten().all(|a| (0.0..=1.0).contains(a)));

    let table = run_ablation(&m, &recipe, AblationAxis::Condition, out.path()).unwrap();
    let settings: Vec<_> = table.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(settings, ["feat_diff", "pixel_diff", "raw_feat", "static"]);
    assert_eq!(table.to_tsv().lines().count(), 5);

    let artifacts = ReportArtifacts { cross_generator: Some(matrix), ablation: Some(table.clone()) };
    emit_report(&table.rows[0].report, &artifacts, out.path()).unwrap();
    let loaded = load_report(&out.path().join(REPORT_FILE)).unwrap();
    assert_eq!(loaded.artifacts, artifacts);
    assert!(out.path().join("crossgen_heatmap.svg").exists());
}

proptest! {
    #[test]
    fn auc_matches_brute_force(
        pos in prop::collection::vec(-3i32..3, 1..25),
        neg in prop::collection::vec(-3i32..3, 1..25),
    ) {
        // Small integer grid so ties are common.
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        prop_assert!((auc(&pos, &neg).unwrap() - brute_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(
        pos in prop::collection::vec(-1.0f64..1.0, 1..20),
        neg in prop::collection::vec(-1.0f64..1.0, 1..20),
    ) {
        let f = |x: &f64| (3.0 * x).exp() + x;
        let a = auc(&pos, &neg).unwrap();
        let b = auc(&pos.iter().map(f).collect::<Vec<_>>(), &neg.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
    }
}
