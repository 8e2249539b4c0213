use candle_core::{DType, Device, Tensor};

use super::*;
use crate::caption::CaptionReport;
use crate::enhancer::HashingTextEncoder;
use crate::nn::Precision;
use crate::synthetic::textured_background;

fn toy_images(n: usize, seed: u64) -> Tensor {
    let imgs: Vec<RgbImage> = (0..n).map(|i| textured_background(64, seed + i as u64)).collect();
    let refs: Vec<&RgbImage> = imgs.iter().collect();
    images_to_tensor(&refs, DType::F32).unwrap()
}

fn pair_of(img0: RgbImage, img1: RgbImage) -> ImagePair {
    let t = chrono::Utc::now();
    ImagePair::new("p", img0, img1, t, t).unwrap()
}

#[test]
fn toy_encoder_shape_and_determinism() {
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let x = toy_images(1, 3);
    let f = model.encode(&x).unwrap();
    assert_eq!(f.shape(), (1, 32, 4, 4));
    let again = model.encode(&x).unwrap();
    let a: Vec<f32> = f.tensor().flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f32> = again.tensor().flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(a, b);
}

#[test]
fn patch_stub_geometry() {
    let mut store = ParamStore::new(Precision::F32, 0);
    let enc = PatchEncoder::new(&mut store, "encoder", 384).unwrap();
    let img = textured_background(504, 1);
    let x = images_to_tensor(&[&img], DType::F32).unwrap();
    assert_eq!(enc.encode(&x).unwrap().shape(), (1, 384, 36, 36));

    let merge = DifferenceMerge::new(&mut store, "merge", 384).unwrap();
    let f = FeatureGrid::new(Tensor::ones((1, 384, 36, 36), DType::F32, &Device::Cpu).unwrap()).unwrap();
    assert_eq!(merge.merge(&f, &f).unwrap().shape(), (1, 384, 36, 36));
}

#[test]
fn merge_shapes_and_zero_difference() {
    let mut store = ParamStore::new(Precision::F32, 0);
    let merge = DifferenceMerge::new(&mut store, "merge", 32).unwrap();
    let f = FeatureGrid::new(Tensor::randn(0f32, 1.0, (1, 32, 4, 4), &Device::Cpu).unwrap()).unwrap();
    assert_eq!(merge.merge(&f, &f).unwrap().shape(), (1, 32, 4, 4));
    let stacked = merge.stacked(&f, &f).unwrap();
    let diff: Vec<f32> = stacked
        .narrow(1, 64, 32)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    assert!(diff.iter().all(|v| *v == 0.0));

    let g = FeatureGrid::new(Tensor::zeros((1, 32, 4, 5), DType::F32, &Device::Cpu).unwrap()).unwrap();
    assert!(matches!(merge.merge(&f, &g), Err(ScdError::Shape(_))));
}

#[test]
fn head_channels_and_upsampling() {
    for k in [2u8, 4] {
        let model = ScdModel::new(ModelConfig {
            backbone: BackboneSpec::toy().with_classes(k),
            ..ModelConfig::toy()
        })
        .unwrap();
        let merged = FeatureGrid::new(Tensor::randn(0f32, 1.0, (1, 32, 4, 4), &Device::Cpu).unwrap()).unwrap();
        let logits = model.segment(&merged).unwrap();
        assert_eq!(logits.dims(), &[1, k as usize, 64, 64]);
    }
}

#[test]
fn nearest_upsampling_matches_index_oracle() {
    let x = Tensor::arange(0f32, 12.0, &Device::Cpu)
        .unwrap()
        .reshape((1, 2, 2, 3))
        .unwrap();
    let up = upsample_nearest(&x, 3).unwrap();
    assert_eq!(up.dims(), &[1, 2, 6, 9]);
    let src: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
    let got: Vec<f32> = up.flatten_all().unwrap().to_vec1().unwrap();
    for c in 0..2 {
        for y in 0..6 {
            for xx in 0..9 {
                assert_eq!(got[c * 54 + y * 9 + xx], src[c * 6 + (y / 3) * 3 + xx / 3]);
            }
        }
    }
}

#[test]
fn argmax_masks_pick_largest_logit() {
    let v = vec![0.0f32, 5.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0];
    let logits = Tensor::from_vec(v, (1, 2, 2, 2), &Device::Cpu).unwrap();
    let m = argmax_masks(&logits).unwrap();
    assert_eq!(m[0].labels(), &[1, 0, 0, 0]);
}

#[test]
fn predict_dims_and_label_set() {
    let encoder = HashingTextEncoder::default();
    let model = ScdModel::new(ModelConfig {
        backbone: BackboneSpec::toy().with_classes(4),
        ..ModelConfig::toy()
    })
    .unwrap();
    // Input at another resolution is resampled to the model's.
    let pair = pair_of(textured_background(96, 1), textured_background(96, 2));
    let report = CaptionReport {
        pair_id: "p".into(),
        objects_only_in_b: vec!["bench".into()],
        ..CaptionReport::default()
    };
    let mask = predict_initial_mask(&model, &pair, &report, &encoder).unwrap();
    assert_eq!(mask.dims(), (64, 64));
    assert_eq!(mask.num_classes(), 4);
    assert!(mask.labels().iter().all(|&l| l < 4));
}

#[test]
fn hflip_consistency_in_shape() {
    let encoder = HashingTextEncoder::default();
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let a = textured_background(64, 1);
    let b = textured_background(64, 2);
    let report = CaptionReport::default();
    let direct = model
        .predict_initial_mask(&pair_of(a.clone(), b.clone()), &report, &encoder)
        .unwrap();
    let flipped = model
        .predict_initial_mask(
            &pair_of(
                image::imageops::flip_horizontal(&a),
                image::imageops::flip_horizontal(&b),
            ),
            &report,
            &encoder,
        )
        .unwrap();
    assert_eq!(direct.flip_horizontal().dims(), flipped.dims());
}

#[test]
fn unknown_encoder_is_unavailable() {
    let cfg = ModelConfig {
        backbone: BackboneSpec {
            encoder_id: "dinov2".into(),
            ..BackboneSpec::toy()
        },
        ..ModelConfig::toy()
    };
    assert!(matches!(ScdModel::new(cfg), Err(ScdError::EncoderUnavailable(_))));
}

struct BrokenEncoder;

impl ImageEncoder for BrokenEncoder {
    fn id(&self) -> &str {
        "broken"
    }

    fn encode(&self, _images: &Tensor) -> Result<FeatureGrid> {
        Err(ScdError::Io {
            context: "adapter socket".into(),
            source: std::io::Error::other("connection refused"),
        })
    }
}

#[test]
fn external_encoder_failure_maps_to_unavailable() {
    let model = ScdModel::with_encoder(ModelConfig::toy(), Box::new(BrokenEncoder)).unwrap();
    assert!(matches!(
        model.encode(&toy_images(1, 0)),
        Err(ScdError::EncoderUnavailable(_))
    ));
}

#[test]
fn spec_validation() {
    assert!(BackboneSpec::toy().with_classes(3).validate().is_err());
    assert!(BackboneSpec::patch14().validate().is_ok());
    let mismatch = ModelConfig {
        backbone: BackboneSpec::patch14(),
        ..ModelConfig::toy()
    };
    assert!(matches!(mismatch.validate(), Err(ScdError::InvalidConfig(_))));
}

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    let model = ScdModel::new(ModelConfig {
        seed: 5,
        ..ModelConfig::toy()
    })
    .unwrap();
    model.save(&path).unwrap();
    let loaded = ScdModel::load(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(
        loaded.store().fingerprint().unwrap(),
        model.store().fingerprint().unwrap()
    );
    assert_eq!(
        loaded.frozen_fingerprint().unwrap(),
        model.frozen_fingerprint().unwrap()
    );
}

#[test]
fn encoder_is_frozen_and_rest_trainable() {
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let trainable: Vec<String> = model.store().trainable().into_iter().map(|(n, _)| n).collect();
    assert!(trainable.iter().all(|n| !n.starts_with("encoder.")));
    assert!(trainable.iter().any(|n| n.starts_with("enhancer.")));
    assert!(trainable.iter().any(|n| n.starts_with("merge.")));
    assert!(trainable.iter().any(|n| n.starts_with("head.")));
    assert!(model.store().names().any(|n| n.starts_with("encoder.")));
}
