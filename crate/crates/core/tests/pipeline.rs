use qclusformer::clusterset::{knn_clusters, FusionMode};
use qclusformer::datagen::{synth_blobs, SynthSpec};
use qclusformer::io;
use qclusformer::qtransformer::SharingMode;
use qclusformer::trainer::{evaluate, evaluate_predictions, train, TrainConfig, TrainOptions};
use qclusformer::Error;

fn data() -> qclusformer::clusterset::FeatureSet {
    synth_blobs(&SynthSpec {
        n_classes: 3,
        samples_per_class: 8,
        dim: 4,
        sigma: 0.3,
        min_separation: 1.2,
        seed: 5,
    })
    .unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        k: 4,
        input_dim: 4,
        n_qubits: 2,
        depth: 1,
        epochs: 3,
        batch_size: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn perfect_detector_recovers_ground_truth() {
    let f = data();
    let cl = knn_clusters(&f, 4).unwrap();
    let preds = cl
        .iter()
        .map(|c| {
            c.mask
                .as_ref()
                .unwrap()
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let r = evaluate_predictions(&f, &cl, preds, 0.5)
        .unwrap()
        .report
        .unwrap();
    // every kept link is correct, so precision is perfect
    assert_eq!(r.pairwise.precision, 1.0);
    assert_eq!(r.bcubed.precision, 1.0);
}

#[test]
fn training_writes_a_loadable_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let f = data();
    let cl = knn_clusters(&f, 4).unwrap();
    let mut log = Vec::new();
    let out = train(
        &config(),
        &f,
        &cl,
        TrainOptions {
            checkpoint_path: Some(path.clone()),
            log: Some(&mut log),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 3 * 4);
    assert!(text
        .lines()
        .all(|l| l.starts_with("epoch=") && l.contains(" lr=")));

    let ckpt = io::read_checkpoint(&path).unwrap();
    assert_eq!(ckpt, out.checkpoint);
    assert_eq!(ckpt.epoch, 3);
    let eval = evaluate(&ckpt, &f, &cl, 0.5).unwrap();
    assert_eq!(eval.labels.len(), f.len());
}

#[test]
fn every_mode_combination_trains() {
    let f = data();
    let cl = knn_clusters(&f, 4).unwrap();
    for sharing in SharingMode::ALL {
        for fusion in [FusionMode::Shared, FusionMode::PerPosition] {
            let cfg = TrainConfig {
                sharing,
                fusion,
                blocks: 2,
                epochs: 1,
                ..config()
            };
            let out = train(&cfg, &f, &cl, TrainOptions::default()).unwrap();
            assert!(out.epoch_losses[0].is_finite());
        }
    }
}

#[test]
fn checkpoint_for_other_dimension_is_refused() {
    let f = data();
    let cl = knn_clusters(&f, 4).unwrap();
    let cfg = TrainConfig {
        input_dim: 8,
        n_qubits: 3,
        ..config()
    };
    let ckpt = qclusformer::trainer::initial_checkpoint(&cfg).unwrap();
    assert!(matches!(
        evaluate(&ckpt, &f, &cl, 0.5),
        Err(Error::Contract(_))
    ));
}
