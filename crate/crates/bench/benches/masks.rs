use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scd_bench::{default_match, matching_inputs};
use scd_core::evaluation::{evaluate, Averaging};
use scd_core::matching::match_and_refine;
use scd_core::{overlap_ratio, union_masks, Bitmap, ChangeMask, MaskInstance, MaskSource};
use std::hint::black_box;

fn mask_algebra(c: &mut Criterion) {
    let mut g = c.benchmark_group("mask_algebra");
    for size in [64usize, 504] {
        let a = MaskInstance::new(
            "a",
            Bitmap::from_fn(size, size, |x, y| (x * 7 + y * 3) % 5 < 2),
            MaskSource::Tracker,
        );
        let b = Bitmap::from_fn(size, size, |x, y| (x + y) % 3 == 0);
        g.bench_with_input(BenchmarkId::new("overlap_ratio", size), &size, |bch, _| {
            bch.iter(|| overlap_ratio(black_box(&a), black_box(&b)))
        });
        let insts: Vec<_> = (0..16)
            .map(|k| {
                MaskInstance::new(
                    format!("i{k}"),
                    Bitmap::rect(size, size, k, k, size / 4, size / 4),
                    MaskSource::Tracker,
                )
            })
            .collect();
        g.bench_with_input(BenchmarkId::new("union_16", size), &size, |bch, &s| {
            bch.iter(|| union_masks(black_box(&insts), s, s))
        });
    }
    g.finish();
}

fn matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("match_and_refine");
    for size in [64u32, 504] {
        let (initial, tracker, semantic) = matching_inputs(size, 1);
        let cfg = default_match();
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| match_and_refine(black_box(&initial), &tracker, &semantic, &cfg).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let size = 504;
    let labels = |seed: usize| {
        (0..size * size)
            .map(|i| ((i * 31 + seed) % 7 % 4) as u8)
            .collect::<Vec<_>>()
    };
    let pairs: Vec<(ChangeMask, ChangeMask)> = (0..4)
        .map(|k| {
            (
                ChangeMask::from_labels(size, size, 4, labels(k)).unwrap(),
                ChangeMask::from_labels(size, size, 4, labels(k + 1)).unwrap(),
            )
        })
        .collect();
    c.bench_function("evaluate_4x504", |b| {
        b.iter(|| evaluate(black_box(&pairs), Averaging::Pooled).unwrap())
    });
}

criterion_group!(benches, mask_algebra, matching, metrics);
criterion_main!(benches);
