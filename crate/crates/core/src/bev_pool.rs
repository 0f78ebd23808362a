//! Voxel pooling: scatter-accumulating pseudo-LiDAR point features into a
//! bird's-eye-view grid.
//!
//! Two variants share one mathematical contract. `pool_v1` first materializes
//! every point feature `depth_prob[p, b] * context[p, :]` into a staging
//! buffer and then scatters it; `pool_v2` gathers the two factors, multiplies,
//! and accumulates straight into the target cell without ever writing the
//! P x B x C product to memory. The benchmark surface exists to show what that
//! difference in memory traffic costs.
//!
//! Accumulators are f64 over f32 inputs so the equivalence bounds stay honest
//! at large point counts.

use std::time::Instant;

use rayon::prelude::*;

use crate::geometry::{CameraModel, RigidTransform};
use crate::{Error, Result};

/// Cell marker for points that land outside the grid.
pub const OUT_OF_GRID: u32 = u32::MAX;

/// Cap on the v1 staging buffer; larger products are materialized in slabs
/// that reuse it.
const V1_SCRATCH_BYTES: usize = 512 << 20;

/// Geometry of the accumulation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cell edge length, meters.
    pub cell_size: f64,
    /// Minimum-corner x coordinate, meters.
    pub origin_x: f64,
    /// Minimum-corner y coordinate, meters.
    pub origin_y: f64,
}

impl BevGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 {
            return Err(Error::InvalidConfig("grid needs at least one cell per axis".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidConfig("cell_size must be positive".into()));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidConfig("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat cell index of a point, or [`OUT_OF_GRID`]. Cells are floor-binned
    /// from the origin; the flat index is `iy * nx + ix`.
    #[inline]
    pub fn cell_index(&self, x: f64, y: f64) -> u32 {
        let ix = ((x - self.origin_x) / self.cell_size).floor();
        let iy = ((y - self.origin_y) / self.cell_size).floor();
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < self.nx && (iy as usize) < self.ny {
            (iy as usize * self.nx + ix as usize) as u32
        } else {
            OUT_OF_GRID
        }
    }
}

/// Accumulated BEV feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: BevGridSpec,
    pub channels: usize,
    /// `(iy * nx + ix) * channels + c`, f64 accumulators.
    pub values: Vec<f64>,
}

impl BevGrid {
    pub fn zeros(spec: BevGridSpec, channels: usize) -> Self {
        let n = spec.n_cells() * channels;
        Self { spec, channels, values: vec![0.0; n] }
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> &[f64] {
        let base = (iy * self.spec.nx + ix) * self.channels;
        &self.values[base..base + self.channels]
    }

    /// Total accumulated mass over all cells and channels.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Inputs of one pooling call: per-pixel depth mass, per-pixel context
/// features, and the precomputed cell of every (pixel, bin) pair.
#[derive(Debug, Clone)]
pub struct PoolInputs {
    pub n_points: usize,
    pub n_bins: usize,
    pub channels: usize,
    /// P x B depth probabilities.
    pub depth_probs: Vec<f32>,
    /// P x C context features.
    pub context: Vec<f32>,
    /// P x B flat cell indices or [`OUT_OF_GRID`].
    pub point_cells: Vec<u32>,
}

impl PoolInputs {
    pub fn validate(&self, spec: &BevGridSpec) -> Result<()> {
        spec.validate()?;
        if self.depth_probs.len() != self.n_points * self.n_bins {
            return Err(Error::ShapeMismatch(format!(
                "depth_probs: expected {}x{} values, got {}",
                self.n_points,
                self.n_bins,
                self.depth_probs.len()
            )));
        }
        if self.context.len() != self.n_points * self.channels {
            return Err(Error::ShapeMismatch(format!(
                "context: expected {}x{} values, got {}",
                self.n_points,
                self.channels,
                self.context.len()
            )));
        }
        if self.point_cells.len() != self.n_points * self.n_bins {
            return Err(Error::ShapeMismatch("point_cells length differs from depth_probs".into()));
        }
        let n_cells = spec.n_cells() as u32;
        if self.point_cells.iter().any(|&c| c != OUT_OF_GRID && c >= n_cells) {
            return Err(Error::InvalidInput("cell index beyond grid extent".into()));
        }
        Ok(())
    }
}

/// How concurrent accumulation is ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumMode {
    /// Entries are sorted into a canonical content-derived order and summed
    /// serially; output is bit-stable under input permutation.
    Deterministic,
    /// Entries are split into per-worker chunks accumulated privately and
    /// reduced in fixed chunk order; matches deterministic mode within
    /// floating-point reassociation (1e-5 relative).
    Parallel,
}

/// Drop/keep counters for one pooling call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    /// (pixel, bin) entries skipped because they fell outside the grid.
    pub dropped: usize,
    /// Entries accumulated into some cell.
    pub accumulated: usize,
}

/// Back-projects every (pixel, bin) of the camera through the bin depths,
/// expresses the point in the frame of `target_pose` (a frame-to-global
/// pose), and bins its (x, y) into grid cells. Returns P x B flat cell
/// indices in pixel-major order.
pub fn compute_point_cells(
    cam: &CameraModel,
    bins: &[f64],
    spec: &BevGridSpec,
    target_pose: &RigidTransform,
) -> Vec<u32> {
    let k = &cam.intrinsics;
    let cam_to_target = crate::geometry::compose(&target_pose.inverse(), &cam.pose);
    let mut cells = Vec::with_capacity(k.width * k.height * bins.len());
    for y in 0..k.height {
        for x in 0..k.width {
            for &d in bins {
                let p = cam_to_target.apply(&k.back_project(x as f64, y as f64, d));
                cells.push(spec.cell_index(p.x, p.y));
            }
        }
    }
    cells
}

/// Canonical accumulation order: by cell, then by the product weight's bits,
/// then by the context row contents. Derived purely from entry content, so a
/// permutation of the input points reproduces the same order bit-for-bit.
fn canonical_order(inputs: &PoolInputs, entries: &mut [(u32, u32)]) {
    let c = inputs.channels;
    entries.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| {
                let wa = inputs.depth_probs[a.1 as usize].to_bits();
                let wb = inputs.depth_probs[b.1 as usize].to_bits();
                wa.cmp(&wb)
            })
            .then_with(|| {
                let pa = (a.1 as usize / inputs.n_bins) * c;
                let pb = (b.1 as usize / inputs.n_bins) * c;
                let ra = &inputs.context[pa..pa + c];
                let rb = &inputs.context[pb..pb + c];
                ra.iter().map(|v| v.to_bits()).cmp(rb.iter().map(|v| v.to_bits()))
            })
    });
}

/// Live (cell, entry-index) pairs: entries with zero mass or out-of-grid
/// cells never touch the accumulators.
fn live_entries(inputs: &PoolInputs) -> (Vec<(u32, u32)>, PoolStats) {
    let mut entries = Vec::new();
    let mut stats = PoolStats::default();
    for (i, (&cell, &w)) in inputs.point_cells.iter().zip(&inputs.depth_probs).enumerate() {
        if cell == OUT_OF_GRID {
            stats.dropped += 1;
            continue;
        }
        if w == 0.0 {
            continue;
        }
        stats.accumulated += 1;
        entries.push((cell, i as u32));
    }
    (entries, stats)
}

fn scatter_materialized(
    grid: &mut [f64],
    staged: &[f32],
    entries: &[(u32, u32)],
    channels: usize,
) {
    for (j, &(cell, _)) in entries.iter().enumerate() {
        let src = &staged[j * channels..(j + 1) * channels];
        let dst = &mut grid[cell as usize * channels..(cell as usize + 1) * channels];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += *s as f64;
        }
    }
}

fn materialize_slab(inputs: &PoolInputs, entries: &[(u32, u32)], staged: &mut Vec<f32>) {
    let c = inputs.channels;
    staged.clear();
    for &(_, idx) in entries {
        let idx = idx as usize;
        let w = inputs.depth_probs[idx];
        let row = (idx / inputs.n_bins) * c;
        staged.extend(inputs.context[row..row + c].iter().map(|&v| w * v));
    }
}

fn pool_v1_serial(inputs: &PoolInputs, entries: &[(u32, u32)], grid: &mut [f64]) {
    let c = inputs.channels;
    let slab_entries = (V1_SCRATCH_BYTES / (4 * c)).max(1);
    let mut staged = Vec::with_capacity(slab_entries.min(entries.len()) * c);
    for slab in entries.chunks(slab_entries) {
        materialize_slab(inputs, slab, &mut staged);
        scatter_materialized(grid, &staged, slab, c);
    }
}

fn pool_v2_serial(inputs: &PoolInputs, entries: &[(u32, u32)], grid: &mut [f64]) {
    let c = inputs.channels;
    for &(cell, idx) in entries {
        let idx = idx as usize;
        let w = inputs.depth_probs[idx] as f64;
        let row = (idx / inputs.n_bins) * c;
        let ctx = &inputs.context[row..row + c];
        let dst = &mut grid[cell as usize * c..(cell as usize + 1) * c];
        for (d, s) in dst.iter_mut().zip(ctx) {
            *d += w * *s as f64;
        }
    }
}

type PoolKernel = fn(&PoolInputs, &[(u32, u32)], &mut [f64]);

fn pool_common(
    inputs: &PoolInputs,
    spec: &BevGridSpec,
    mode: AccumMode,
    kernel: PoolKernel,
) -> Result<(BevGrid, PoolStats)> {
    inputs.validate(spec)?;
    let (mut entries, stats) = live_entries(inputs);
    let mut grid = BevGrid::zeros(*spec, inputs.channels);
    match mode {
        AccumMode::Deterministic => {
            canonical_order(inputs, &mut entries);
            kernel(inputs, &entries, &mut grid.values);
        }
        AccumMode::Parallel => {
            let workers = rayon::current_num_threads().max(1);
            let chunk = entries.len().div_ceil(workers).max(1);
            let partials: Vec<Vec<f64>> = entries
                .par_chunks(chunk)
                .map(|part| {
                    let mut local = vec![0.0f64; grid.values.len()];
                    kernel(inputs, part, &mut local);
                    local
                })
                .collect();
            // fixed chunk-order reduction
            for partial in partials {
                for (acc, v) in grid.values.iter_mut().zip(partial) {
                    *acc += v;
                }
            }
        }
    }
    Ok((grid, stats))
}

/// Materialize-then-scatter pooling: point features are written out as
/// `depth_prob * context` rows (f32, staged through a bounded scratch) and
/// then scatter-added into their cells.
pub fn pool_v1(
    inputs: &PoolInputs,
    spec: &BevGridSpec,
    mode: AccumMode,
) -> Result<(BevGrid, PoolStats)> {
    pool_common(inputs, spec, mode, pool_v1_serial)
}

/// Fused gather-multiply-accumulate pooling: no point-feature buffer ever
/// exists; each entry multiplies its two factors and accumulates directly.
pub fn pool_v2(
    inputs: &PoolInputs,
    spec: &BevGridSpec,
    mode: AccumMode,
) -> Result<(BevGrid, PoolStats)> {
    pool_common(inputs, spec, mode, pool_v2_serial)
}

/// Reference implementations kept deliberately naive for differential tests.
pub mod oracle {
    use super::*;

    /// Triple-loop serial scatter in input order, f64 throughout.
    pub fn pool_serial(inputs: &PoolInputs, spec: &BevGridSpec) -> BevGrid {
        let mut grid = BevGrid::zeros(*spec, inputs.channels);
        let c = inputs.channels;
        for p in 0..inputs.n_points {
            for b in 0..inputs.n_bins {
                let cell = inputs.point_cells[p * inputs.n_bins + b];
                if cell == OUT_OF_GRID {
                    continue;
                }
                let w = inputs.depth_probs[p * inputs.n_bins + b] as f64;
                for ch in 0..c {
                    grid.values[cell as usize * c + ch] +=
                        w * inputs.context[p * c + ch] as f64;
                }
            }
        }
        grid
    }
}

/// One benchmark problem size.
#[derive(Debug, Clone, Copy)]
pub struct BenchSize {
    pub p: usize,
    pub b: usize,
    pub c: usize,
    pub nx: usize,
    pub ny: usize,
}

/// One row of the benchmark CSV.
#[derive(Debug, Clone)]
pub struct PoolBenchRow {
    pub variant: &'static str,
    pub p: usize,
    pub b: usize,
    pub c: usize,
    pub nx: usize,
    pub ny: usize,
    pub median_ns: u128,
    pub p90_ns: u128,
}

impl PoolBenchRow {
    pub const CSV_HEADER: &'static str = "variant,P,B,C,nx,ny,median_ns,p90_ns";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.variant, self.p, self.b, self.c, self.nx, self.ny, self.median_ns, self.p90_ns
        )
    }
}

/// Median and 90th percentile of raw sample times.
pub fn median_p90(samples: &mut [u128]) -> (u128, u128) {
    samples.sort_unstable();
    let n = samples.len();
    let median = samples[n / 2];
    let p90 = samples[((n as f64 * 0.9) as usize).min(n - 1)];
    (median, p90)
}

/// Deterministic random pooling instance for tests and benchmarks.
pub fn random_inputs(size: &BenchSize, spec: &BevGridSpec, seed: u64) -> PoolInputs {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut depth_probs = Vec::with_capacity(size.p * size.b);
    for _ in 0..size.p {
        // random nonnegative masses normalized to sum <= 1
        let mut row: Vec<f32> = (0..size.b).map(|_| rng.random::<f32>()).collect();
        let sum: f32 = row.iter().sum();
        if sum > 0.0 {
            let scale = rng.random::<f32>() / sum;
            for v in &mut row {
                *v *= scale;
            }
        }
        depth_probs.extend(row);
    }
    let context: Vec<f32> =
        (0..size.p * size.c).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    let n_cells = spec.n_cells() as u32;
    let point_cells: Vec<u32> = (0..size.p * size.b)
        .map(|_| {
            // ~3% of entries deliberately out of grid
            if rng.random::<f32>() < 0.03 {
                OUT_OF_GRID
            } else {
                rng.random_range(0..n_cells)
            }
        })
        .collect();
    PoolInputs {
        n_points: size.p,
        n_bins: size.b,
        channels: size.c,
        depth_probs,
        context,
        point_cells,
    }
}

/// Times both pooling variants on each size: one warm-up run, then `reps`
/// timed repetitions, reported as median and p90 nanoseconds per variant.
pub fn bench_pool(sizes: &[BenchSize], reps: usize, seed: u64) -> Result<Vec<PoolBenchRow>> {
    if sizes.is_empty() {
        return Err(Error::InvalidInput("bench_pool needs at least one size".into()));
    }
    let reps = reps.max(1);
    let mut rows = Vec::new();
    for size in sizes {
        let spec = BevGridSpec {
            nx: size.nx,
            ny: size.ny,
            cell_size: 0.5,
            origin_x: 0.0,
            origin_y: 0.0,
        };
        let inputs = random_inputs(size, &spec, seed);
        for (variant, f) in [("v1", pool_v1 as PoolFn), ("v2", pool_v2 as PoolFn)] {
            f(&inputs, &spec, AccumMode::Parallel)?; // warm-up
            let mut samples = Vec::with_capacity(reps);
            for _ in 0..reps {
                let t0 = Instant::now();
                let out = f(&inputs, &spec, AccumMode::Parallel)?;
                std::hint::black_box(&out);
                samples.push(t0.elapsed().as_nanos());
            }
            let (median_ns, p90_ns) = median_p90(&mut samples);
            rows.push(PoolBenchRow {
                variant,
                p: size.p,
                b: size.b,
                c: size.c,
                nx: size.nx,
                ny: size.ny,
                median_ns,
                p90_ns,
            });
        }
    }
    Ok(rows)
}

type PoolFn = fn(&PoolInputs, &BevGridSpec, AccumMode) -> Result<(BevGrid, PoolStats)>;
