use std::cell::Cell;

use candle_core::Tensor;
use scd_core::backbone::{
    predict_initial_mask, text_encoder_fingerprint, ModelConfig, ScdModel, TrainConfig, Trainer, LAST_CHECKPOINT,
    TRACE_FILE,
};
use scd_core::caption::CaptionReport;
use scd_core::enhancer::HashingTextEncoder;
use scd_core::evaluation::{evaluate, Averaging};
use scd_core::synthetic::{no_change_samples, rect_change_samples};
use scd_core::{ImagePair, ScdError};

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        lr: 3e-3,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_model_overfits_four_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let text = HashingTextEncoder::default();
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let samples = rect_change_samples(4, 64, 16, 11).unwrap();
    let frozen_before = model.frozen_fingerprint().unwrap();
    let text_before = text_encoder_fingerprint(&text).unwrap();
    let trainable_before = model.store().fingerprint_prefix("head.").unwrap();

    let mut trainer = Trainer::new(&model, &text, overfit_config(), dir.path());
    let out = trainer.train(&samples, &samples, false).unwrap();

    assert!(out.steps <= 200);
    assert!(out.best_val_f1 >= 0.95, "best train F1 {}", out.best_val_f1);
    assert_eq!(model.frozen_fingerprint().unwrap(), frozen_before);
    assert_eq!(text_encoder_fingerprint(&text).unwrap(), text_before);
    assert_ne!(model.store().fingerprint_prefix("head.").unwrap(), trainable_before);

    // The best checkpoint reproduces the reported score.
    let best = ScdModel::load(&out.best_checkpoint).unwrap();
    let mut pairs = Vec::new();
    for s in &samples {
        let pair = ImagePair::new(
            &s.id,
            s.image_t0.clone(),
            s.image_t1.clone(),
            chrono::Utc::now(),
            chrono::Utc::now(),
        )
        .unwrap();
        let report = CaptionReport {
            objects_only_in_b: s.phrases.clone(),
            ..CaptionReport::default()
        };
        pairs.push((
            predict_initial_mask(&best, &pair, &report, &text).unwrap(),
            s.target.clone(),
        ));
    }
    let report = evaluate(&pairs, Averaging::Pooled).unwrap();
    assert!((report.binary.f1 - out.best_val_f1).abs() < 1e-9);

    let csv = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,lr,loss,val_f1,val_iou"));
    assert_eq!(lines.count(), out.trace.len());
}

#[test]
fn warmup_reaches_base_rate() {
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let text = HashingTextEncoder::default();
    let trainer = Trainer::new(&model, &text, TrainConfig::default(), "unused");
    let s = trainer.schedule(400);
    assert!(s.at(0) < s.at(s.warmup_steps));
    assert_eq!(s.at(s.warmup_steps), 1e-4);
}

#[test]
fn no_change_training_predicts_empty_mask() {
    let dir = tempfile::tempdir().unwrap();
    let text = HashingTextEncoder::default();
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let samples = no_change_samples(4, 64, 2, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    Trainer::new(&model, &text, cfg, dir.path())
        .train(&samples, &samples, false)
        .unwrap();
    let probe = no_change_samples(1, 64, 2, 99).unwrap().remove(0);
    let pair = ImagePair::new(
        "probe",
        probe.image_t0,
        probe.image_t1,
        chrono::Utc::now(),
        chrono::Utc::now(),
    )
    .unwrap();
    let mask = predict_initial_mask(&model, &pair, &CaptionReport::default(), &text).unwrap();
    assert!(mask.labels().iter().all(|&l| l == 0));
}

#[test]
fn nan_loss_aborts_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = HashingTextEncoder::default();
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let samples = rect_change_samples(4, 64, 16, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let poisoned = Cell::new(false);
    let err = Trainer::new(&model, &text, cfg, dir.path())
        .with_step_hook(|step, _| {
            if step == 2 && !poisoned.get() {
                let bias = model.store().get("head.classifier.bias").unwrap();
                let nan = Tensor::full(f32::NAN, bias.dims(), bias.device()).unwrap();
                model.store().assign("head.classifier.bias", &nan).unwrap();
                poisoned.set(true);
            }
        })
        .train(&samples, &samples, false)
        .unwrap_err();
    match err {
        ScdError::Numerical(msg) => assert!(msg.contains(LAST_CHECKPOINT), "{msg}"),
        other => panic!("expected a numerical error, got {other}"),
    }
    // The checkpoint on disk predates the poisoning and is finite.
    let good = ScdModel::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    let bias: Vec<f32> = good
        .store()
        .get("head.classifier.bias")
        .unwrap()
        .as_tensor()
        .to_vec1()
        .unwrap();
    assert!(bias.iter().all(|v| v.is_finite()));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let text = HashingTextEncoder::default();
    let samples = rect_change_samples(4, 64, 16, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };

    let full_dir = tempfile::tempdir().unwrap();
    let full = ScdModel::new(ModelConfig::toy()).unwrap();
    let full_out = Trainer::new(&full, &text, cfg.clone(), full_dir.path())
        .train(&samples, &samples, false)
        .unwrap();

    let split_dir = tempfile::tempdir().unwrap();
    let first = ScdModel::new(ModelConfig::toy()).unwrap();
    let stop_after = Trainer::new(&first, &text, cfg.clone(), split_dir.path())
        .schedule(samples.len())
        .total_steps
        / 2;
    // Crash inside the epoch after the midpoint, before its checkpoint lands.
    let crashed = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        Trainer::new(&first, &text, cfg.clone(), split_dir.path())
            .with_step_hook(|s, _| {
                if s == stop_after + 1 {
                    panic!("simulated crash");
                }
            })
            .train(&samples, &samples, false)
    }));
    assert!(crashed.is_err());

    let second = ScdModel::new(ModelConfig::toy()).unwrap();
    let resumed = Trainer::new(&second, &text, cfg, split_dir.path())
        .train(&samples, &samples, true)
        .unwrap();
    assert_eq!(resumed.steps, full_out.steps);
    assert_eq!(resumed.trace.len(), full_out.trace.len());
    assert_eq!(
        second.store().fingerprint().unwrap(),
        full.store().fingerprint().unwrap()
    );
}
