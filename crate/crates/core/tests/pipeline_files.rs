//! File-level pipeline scenarios: multi-model ensembles from directories,
//! transform modes, and the baseline relationship.

use tempfile::tempdir;

use landmark_rerank::metrics::gap;
use landmark_rerank::pipeline::{run_pipeline, EnsembleMode, PipelineConfig};
use landmark_rerank::rerank::read_predictions;
use landmark_rerank::store::{load_labels, save_embeddings};
use landmark_rerank::synth::{self, generate, write_dataset, SynthConfig};
use landmark_rerank::TransformMode;

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        dim: 16,
        n_classes: 10,
        train_per_class: 4,
        n_test_landmark: 24,
        n_test_distractor: 56,
        n_nonlandmark_pool: 40,
        ..SynthConfig::default()
    }
}

#[test]
fn two_model_ensemble_runs_in_both_modes() {
    let dir = tempdir().unwrap();
    let data_a = generate(&small_config(1)).unwrap();
    let data_b = generate(&small_config(1)).unwrap(); // same ids, same content
    let m0 = dir.path().join("m0");
    let m1 = dir.path().join("m1");
    write_dataset(&data_a, &m0).unwrap();
    write_dataset(&data_b, &m1).unwrap();

    for (mode, out_name) in [
        (EnsembleMode::Concat, "concat.csv"),
        (EnsembleMode::TopkSum, "topk.csv"),
    ] {
        let out = dir.path().join(out_name);
        let mut config = PipelineConfig::new(vec![m0.clone(), m1.clone()], out.clone());
        config.ground_truth = Some(m0.join(synth::TEST_GT_FILE));
        config.ensemble_mode = mode;
        let outcome = run_pipeline(&config).unwrap();
        assert_eq!(outcome.predictions.len(), data_a.test.len());
        assert!(outcome.report.unwrap().gap > 0.0);
    }

    // duplicated models: both schemes agree with the single model on labels
    let single_out = dir.path().join("single.csv");
    let mut single = PipelineConfig::new(vec![m0.clone()], single_out.clone());
    single.ground_truth = Some(m0.join(synth::TEST_GT_FILE));
    run_pipeline(&single).unwrap();
    let single_preds = read_predictions(&single_out).unwrap();
    for name in ["concat.csv", "topk.csv"] {
        let preds = read_predictions(&dir.path().join(name)).unwrap();
        for (a, b) in preds.iter().zip(&single_preds) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.landmark_id, b.landmark_id);
        }
    }
}

#[test]
fn transform_mode_changes_test_space_but_keeps_cardinality() {
    let dir = tempdir().unwrap();
    let m0 = dir.path().join("m0");
    write_dataset(&generate(&small_config(2)).unwrap(), &m0).unwrap();

    let out_all = dir.path().join("all.csv");
    let mut c_all = PipelineConfig::new(vec![m0.clone()], out_all.clone());
    c_all.transform_mode = TransformMode::AllRoles;
    run_pipeline(&c_all).unwrap();

    let out_partial = dir.path().join("partial.csv");
    let mut c_partial = PipelineConfig::new(vec![m0.clone()], out_partial.clone());
    c_partial.transform_mode = TransformMode::TrainAndNonlandmarkOnly;
    run_pipeline(&c_partial).unwrap();

    let all = read_predictions(&out_all).unwrap();
    let partial = read_predictions(&out_partial).unwrap();
    assert_eq!(all.len(), partial.len());
    // different test-side spaces produce different confidences
    assert!(all
        .iter()
        .zip(&partial)
        .any(|(a, b)| a.confidence.to_bits() != b.confidence.to_bits()));
}

#[test]
fn baseline_never_uses_the_pool() {
    let dir = tempdir().unwrap();
    let m0 = dir.path().join("m0");
    let data = generate(&small_config(3)).unwrap();
    write_dataset(&data, &m0).unwrap();

    let out1 = dir.path().join("rank1.csv");
    let mut c1 = PipelineConfig::new(vec![m0.clone()], out1.clone());
    c1.penalize = false;
    run_pipeline(&c1).unwrap();

    // corrupt the pool file: baseline must not notice
    save_embeddings(
        &landmark_rerank::EmbeddingSet::empty(16, landmark_rerank::Role::Nonlandmark),
        &m0.join(synth::NONLANDMARK_FILE),
    )
    .unwrap();
    let out2 = dir.path().join("rank2.csv");
    let mut c2 = PipelineConfig::new(vec![m0], out2.clone());
    c2.penalize = false;
    run_pipeline(&c2).unwrap();

    assert_eq!(std::fs::read(out1).unwrap(), std::fs::read(out2).unwrap());
}

#[test]
fn scoring_matches_external_gap_on_written_file() {
    let dir = tempdir().unwrap();
    let m0 = dir.path().join("m0");
    write_dataset(&generate(&small_config(4)).unwrap(), &m0).unwrap();

    let out = dir.path().join("preds.csv");
    let mut config = PipelineConfig::new(vec![m0.clone()], out.clone());
    config.ground_truth = Some(m0.join(synth::TEST_GT_FILE));
    let outcome = run_pipeline(&config).unwrap();
    let in_memory = outcome.report.unwrap();

    // re-score from the file the pipeline wrote
    let preds = read_predictions(&out).unwrap();
    let gt = load_labels(&m0.join(synth::TEST_GT_FILE)).unwrap();
    let from_file = gap(&preds, &gt).unwrap();
    assert_eq!(in_memory.gap, from_file.gap);
    assert_eq!(in_memory.m_landmarks, from_file.m_landmarks);
    assert_eq!(in_memory.n_predictions, from_file.n_predictions);
}
