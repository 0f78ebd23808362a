//! Shared helpers for the criterion benchmarks.

use parallax_core::bev_pool::{BenchSize, BevGridSpec, PoolInputs};
use parallax_core::nms::RotatedBox;
use parallax_core::synth::make_nms_corpus;

pub fn pool_instance(p: usize, b: usize, c: usize, grid: usize) -> (PoolInputs, BevGridSpec) {
    let spec = BevGridSpec { nx: grid, ny: grid, cell_size: 0.5, origin_x: 0.0, origin_y: 0.0 };
    let size = BenchSize { p, b, c, nx: grid, ny: grid };
    (parallax_core::bev_pool::random_inputs(&size, &spec, 42), spec)
}

pub fn nms_corpus(n: usize) -> Vec<RotatedBox> {
    make_nms_corpus(42, n, "random").expect("random layout exists")
}
