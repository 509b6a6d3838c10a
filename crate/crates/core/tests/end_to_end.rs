use zsl_core::dataset::{synth_generate, SynthConfig};
use zsl_core::eval::{emit_report, harmonic_mean, EvalReport, ReportJson};
use zsl_core::model::{ModelShape, ZslModel};
use zsl_core::pipeline::{gzsl_predict, train, zsl_predict, ClassifierConfig, TrainConfig};

fn shape(dx: usize, d: usize) -> ModelShape {
    ModelShape {
        feature_dim: dx,
        attr_dim: d,
        encoder_hidden: vec![32],
        decoder_hidden: vec![32],
        regressor_hidden: vec![32],
    }
}

#[test]
fn train_predict_and_report() {
    let ds = synth_generate(&SynthConfig {
        attr_dim: 6,
        feature_dim: 16,
        seen_classes: 8,
        unseen_classes: 3,
        samples_per_class: 20,
        ..SynthConfig::default()
    })
    .unwrap();
    let init = ZslModel::init(&shape(16, 6), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        classes_per_batch: 4,
        ..TrainConfig::default()
    };
    let (model, log) = train(&init, &ds, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 3);
    assert!(log.epochs.iter().all(|e| e.terms.total.0.is_finite()));
    assert_ne!(model.params_flat(), init.params_flat());

    let ccfg = ClassifierConfig::default();
    let zsl = zsl_predict(&model, &ds, &ccfg).unwrap();
    assert_eq!(zsl.truth.len(), ds.split.test_unseen_idx.len());
    assert!(zsl.predicted.iter().all(|p| ds.split.unseen_classes.contains(p)));

    let gzsl = gzsl_predict(&model, &ds, &ccfg).unwrap();
    let report = EvalReport::gzsl(&gzsl, &ds.split.seen_classes, &ds.split.unseen_classes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: ReportJson = serde_json::from_str(&text).unwrap();
    let g = parsed.gzsl.unwrap();
    assert_eq!(g.h.0, harmonic_mean(g.acc_seen.0, g.acc_unseen.0));
    assert_eq!(parsed.classes.len(), 11);
}

#[test]
fn training_is_reproducible() {
    let ds = synth_generate(&SynthConfig {
        samples_per_class: 12,
        seen_classes: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let init = ZslModel::init(&shape(64, 16), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        classes_per_batch: 3,
        ..TrainConfig::default()
    };
    let (a, log_a) = train(&init, &ds, &cfg).unwrap();
    let (b, log_b) = train(&init, &ds, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(
        serde_json::to_string(&log_a).unwrap(),
        serde_json::to_string(&log_b).unwrap()
    );
}
