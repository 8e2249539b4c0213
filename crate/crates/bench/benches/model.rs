use criterion::{criterion_group, criterion_main, Criterion};
use scd_core::backbone::{ModelConfig, ScdModel};
use scd_core::caption::CaptionReport;
use scd_core::enhancer::HashingTextEncoder;
use scd_core::synthetic::annotation_scenes;
use std::hint::black_box;

fn toy_forward(c: &mut Criterion) {
    let model = ScdModel::new(ModelConfig::toy()).unwrap();
    let text = HashingTextEncoder::new(model.config().enhancer.text_input_dim);
    let pair = annotation_scenes(1, 64, 2).unwrap().remove(0).pair;
    let caption = CaptionReport {
        objects_only_in_b: vec!["bench".into(), "car".into()],
        ..Default::default()
    };
    c.bench_function("toy_predict_initial_mask", |b| {
        b.iter(|| model.predict_initial_mask(black_box(&pair), &caption, &text).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = toy_forward
}
criterion_main!(benches);
