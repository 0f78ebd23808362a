use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use parallax_bench::nms_corpus;
use parallax_core::nms::{circle_nms, rotated_iou_nms, size_aware_circle_nms, NmsConfig};

fn suppression(c: &mut Criterion) {
    let cfg = NmsConfig::default();
    let mut group = c.benchmark_group("nms");
    for n in [100usize, 1_000, 10_000] {
        let boxes = nms_corpus(n);
        group.bench_with_input(BenchmarkId::new("rotated_iou", n), &boxes, |b, boxes| {
            b.iter(|| rotated_iou_nms(black_box(boxes), 0.5, false));
        });
        group.bench_with_input(BenchmarkId::new("circle", n), &boxes, |b, boxes| {
            b.iter(|| circle_nms(black_box(boxes), &cfg));
        });
        group.bench_with_input(BenchmarkId::new("size_aware", n), &boxes, |b, boxes| {
            b.iter(|| size_aware_circle_nms(black_box(boxes), &cfg));
        });
    }
    group.finish();
}

criterion_group!(benches, suppression);
criterion_main!(benches);
