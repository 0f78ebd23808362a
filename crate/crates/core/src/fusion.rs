//! Sliding-window frame fusion: run the stereo pipeline inside each group of
//! adjacent frames, lift the fused depth into pseudo-LiDAR points, align the
//! older groups' points into the current frame, pool every group into a BEV
//! grid, and concatenate group grids along channels (newest group first).

use rayon::prelude::*;

use crate::bev_pool::{pool_v2, AccumMode, BevGrid, BevGridSpec, PoolInputs, OUT_OF_GRID};
use crate::geometry::{compose, CameraIntrinsics, CameraModel, RigidTransform};
use crate::grid::{FeatureMap, Grid2};
use crate::stereo::{
    stereo_pipeline, relative_geometry, OffsetField, SourceView, StereoConfig,
};
use crate::{Error, Result};

/// One frame of a sequence, newest-last ordering in storage.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    /// Camera-to-global model of the frame.
    pub camera: CameraModel,
    pub features: FeatureMap,
    pub mono_mu: Grid2<f64>,
    pub mono_sigma: Grid2<f64>,
}

/// One stereo group: the newest member is the reference, the rest are
/// sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionGroup {
    pub reference: usize,
    pub sources: Vec<usize>,
}

/// Group assignments over a frame sequence, newest group first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionPlan {
    pub groups: Vec<FusionGroup>,
    pub group_size: usize,
    pub interval: usize,
    /// Groups that could not be formed and will be padded with zero grids
    /// (only under [`ShortfallPolicy::Pad`]).
    pub padded_groups: usize,
}

impl FusionPlan {
    /// Total groups the fused output accounts for, including padded ones.
    pub fn total_groups(&self) -> usize {
        self.groups.len() + self.padded_groups
    }
}

/// What to do when the interval pushes older groups off the sequence start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortfallPolicy {
    /// Fail loudly (default).
    Error,
    /// Emit zero grids for the missing groups.
    Pad,
}

/// Builds the sliding-window plan: walking from the newest frame backward,
/// each group takes `group_size` adjacent frames (the newest as reference)
/// and skips `interval` frames before the next group. The expected group
/// count is `n_frames / group_size`; a shortfall is an error or zero-padding
/// per `policy`.
pub fn make_plan(
    n_frames: usize,
    group_size: usize,
    interval: usize,
    policy: ShortfallPolicy,
) -> Result<FusionPlan> {
    if group_size < 2 {
        return Err(Error::InvalidConfig("group_size must be >= 2".into()));
    }
    if n_frames < group_size {
        return Err(Error::InsufficientFrames { needed: group_size, have: n_frames });
    }
    let expected = n_frames / group_size;
    let mut groups = Vec::new();
    let mut end = n_frames; // exclusive; group = [end-group_size, end)
    while end >= group_size && groups.len() < expected {
        let start = end - group_size;
        groups.push(FusionGroup {
            reference: end - 1,
            sources: (start..end - 1).collect(),
        });
        let next_end = start as isize - interval as isize;
        if next_end < 0 {
            break;
        }
        end = next_end as usize;
    }
    let padded = expected - groups.len();
    if padded > 0 && policy == ShortfallPolicy::Error {
        return Err(Error::InsufficientFrames {
            needed: group_size * expected + interval * (expected - 1),
            have: n_frames,
        });
    }
    Ok(FusionPlan {
        groups,
        group_size,
        interval,
        padded_groups: if policy == ShortfallPolicy::Pad { padded } else { 0 },
    })
}

/// One pseudo-LiDAR point: a (pixel, depth-bin) pair lifted to 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub pixel_id: u32,
    pub bin_id: u32,
}

/// Lifts every (pixel, bin) of a camera into points in the camera frame,
/// pixel-major then bin-major, matching the depth-probability layout.
pub fn make_pseudo_points(k: &CameraIntrinsics, bins: &[f64]) -> Vec<PseudoPoint> {
    let mut points = Vec::with_capacity(k.width * k.height * bins.len());
    for y in 0..k.height {
        for x in 0..k.width {
            let pixel_id = (y * k.width + x) as u32;
            for (b, &d) in bins.iter().enumerate() {
                let p = k.back_project(x as f64, y as f64, d);
                points.push(PseudoPoint { x: p.x, y: p.y, z: p.z, pixel_id, bin_id: b as u32 });
            }
        }
    }
    points
}

/// Applies the composed transform `t_global2cur * t_prev2global` to every
/// point, preserving pixel and bin ids.
pub fn align_points(
    points: &[PseudoPoint],
    t_prev2global: &RigidTransform,
    t_global2cur: &RigidTransform,
) -> Vec<PseudoPoint> {
    let m = compose(t_global2cur, t_prev2global);
    points
        .iter()
        .map(|p| {
            let q = m.apply(&nalgebra::Vector3::new(p.x, p.y, p.z));
            PseudoPoint { x: q.x, y: q.y, z: q.z, pixel_id: p.pixel_id, bin_id: p.bin_id }
        })
        .collect()
}

/// Bins aligned points into grid cells, `P x B` flat indices.
pub fn points_to_cells(points: &[PseudoPoint], spec: &BevGridSpec) -> Vec<u32> {
    points.iter().map(|p| spec.cell_index(p.x, p.y)).collect()
}

/// Fuses a frame sequence into one BEV grid with `C * total_groups` channels,
/// newest group first. `anchor` is the frame-to-global pose of the BEV frame
/// (typically the newest frame's ego pose); its x/y plane is the grid plane.
pub fn fuse_sequence(
    frames: &[FrameRecord],
    plan: &FusionPlan,
    cfg: &StereoConfig,
    spec: &BevGridSpec,
    anchor: &RigidTransform,
    mode: AccumMode,
) -> Result<BevGrid> {
    cfg.validate()?;
    spec.validate()?;
    if plan
        .groups
        .iter()
        .any(|g| g.reference >= frames.len() || g.sources.iter().any(|&s| s >= frames.len()))
    {
        return Err(Error::InvalidInput("plan references frames beyond the sequence".into()));
    }
    let channels = frames
        .first()
        .map(|f| f.features.channels)
        .ok_or(Error::InsufficientFrames { needed: plan.group_size, have: 0 })?;

    let bins = cfg.bin_centers();
    let t_global2cur = anchor.inverse();

    let group_grids: Vec<BevGrid> = plan
        .groups
        .par_iter()
        .map(|group| fuse_group(frames, group, cfg, spec, &bins, &t_global2cur, mode))
        .collect::<Result<Vec<_>>>()?;

    let total_groups = plan.total_groups();
    let mut out = BevGrid::zeros(*spec, channels * total_groups);
    for (gi, grid) in group_grids.iter().enumerate() {
        for cell in 0..spec.n_cells() {
            let dst =
                &mut out.values[cell * out.channels + gi * channels..][..channels];
            dst.copy_from_slice(&grid.values[cell * channels..(cell + 1) * channels]);
        }
    }
    // padded groups stay zero-filled at the tail channel blocks
    Ok(out)
}

fn fuse_group(
    frames: &[FrameRecord],
    group: &FusionGroup,
    cfg: &StereoConfig,
    spec: &BevGridSpec,
    bins: &[f64],
    t_global2cur: &RigidTransform,
    mode: AccumMode,
) -> Result<BevGrid> {
    let reference = &frames[group.reference];
    let zero_offsets = OffsetField::zeros(reference.features.height, reference.features.width);
    let views: Vec<SourceView<'_>> = group
        .sources
        .iter()
        .map(|&s| {
            let src = &frames[s];
            SourceView {
                features: &src.features,
                geometry: relative_geometry(&reference.camera, &src.camera),
                offsets: &zero_offsets,
                mono_mu: &src.mono_mu,
            }
        })
        .collect();

    let out = stereo_pipeline(
        &reference.features,
        &reference.mono_mu,
        &reference.mono_sigma,
        &views,
        cfg,
    )?;

    // Lift to points in the reference camera frame, align into the anchor
    // frame, and pool.
    let points = make_pseudo_points(&reference.camera.intrinsics, bins);
    let aligned = align_points(&points, &reference.camera.pose, t_global2cur);
    let point_cells = points_to_cells(&aligned, spec);

    let h = reference.features.height;
    let w = reference.features.width;
    let c = reference.features.channels;
    let inputs = PoolInputs {
        n_points: h * w,
        n_bins: bins.len(),
        channels: c,
        depth_probs: out.fused.probs.as_slice().iter().map(|&v| v as f32).collect(),
        context: reference.features.values().to_vec(),
        point_cells,
    };
    let (grid, _stats) = pool_v2(&inputs, spec, mode)?;
    Ok(grid)
}

/// Drops points that fall outside the grid, mirroring the pooling stats.
pub fn count_in_grid(cells: &[u32]) -> usize {
    cells.iter().filter(|&&c| c != OUT_OF_GRID).count()
}
