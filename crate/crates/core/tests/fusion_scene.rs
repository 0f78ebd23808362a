//! Frame fusion against synthetic scenes with known geometry.

use parallax_core::bev_pool::{AccumMode, BevGridSpec};
use parallax_core::fusion::{
    align_points, fuse_sequence, make_plan, FrameRecord, PseudoPoint, ShortfallPolicy,
};
use parallax_core::geometry::{compose, relative_transform, RigidTransform};
use parallax_core::stereo::StereoConfig;
use parallax_core::synth::{
    camera_for_ego, ego_pose, generate_scene, render_trajectory, SynthConfig, TrajectoryConfig,
};

fn grid_spec() -> BevGridSpec {
    // 60 m x 40 m around the scene, half-meter cells
    BevGridSpec { nx: 120, ny: 80, cell_size: 0.5, origin_x: 0.0, origin_y: -16.0 }
}

fn records(frames: Vec<parallax_core::synth::RenderedFrame>) -> Vec<FrameRecord> {
    frames.into_iter().map(|f| f.record).collect()
}

/// With a static scene, the ego at rest, and deterministic inputs (no noise
/// draws), both groups see identical data and must pool identical grids.
#[test]
fn static_scene_groups_agree() {
    let synth_cfg = SynthConfig {
        width: 60,
        height: 28,
        noise: 0.0,
        mono_noise: 0.0,
        blunder_rate: 0.0,
        ..SynthConfig::default()
    };
    let scene = generate_scene(11, &synth_cfg);
    let traj = TrajectoryConfig {
        forward_speed: 0.0,
        lateral_speed: 0.0,
        ..TrajectoryConfig::default()
    };
    let frames = records(render_trajectory(&scene, &traj, &synth_cfg));
    let anchor = ego_pose(0.0, 0.0, 0.0);
    let plan = make_plan(4, 2, 0, ShortfallPolicy::Error).unwrap();
    let cfg = StereoConfig::default();
    let spec = grid_spec();

    let fused = fuse_sequence(&frames, &plan, &cfg, &spec, &anchor, AccumMode::Deterministic)
        .unwrap();
    let c = frames[0].features.channels;
    assert_eq!(fused.channels, 2 * c);

    for cell in 0..spec.n_cells() {
        for ch in 0..c {
            let a = fused.values[cell * fused.channels + ch];
            let b = fused.values[cell * fused.channels + c + ch];
            let tol = 1e-5 * a.abs().max(b.abs()).max(1e-12);
            assert!((a - b).abs() <= tol, "cell {cell} ch {ch}: {a} vs {b}");
        }
    }
}

/// Moving ego, static scene: after alignment into the anchor frame, a
/// landmark ends up in the same BEV cell whichever group's camera lifted it.
#[test]
fn moving_ego_landmark_cells_agree() {
    let synth_cfg = SynthConfig { n_landmarks: 64, ..SynthConfig::default() };
    let scene = generate_scene(42, &synth_cfg);
    let traj = TrajectoryConfig::default();
    let spec = grid_spec();
    let anchor = traj.ego_at(3);

    let mut checked = 0usize;
    for lm in &scene.landmarks {
        // Which cell does the landmark belong to, straight from world space?
        let p_anchor = anchor.inverse().apply(&lm.position);
        let want = spec.cell_index(p_anchor.x, p_anchor.y);
        if want == parallax_core::bev_pool::OUT_OF_GRID {
            continue;
        }
        // Keep clear of cell borders so lifting noise cannot flip the cell.
        let fx = ((p_anchor.x - spec.origin_x) / spec.cell_size).fract();
        let fy = ((p_anchor.y - spec.origin_y) / spec.cell_size).fract();
        if !(0.25..0.75).contains(&fx) || !(0.25..0.75).contains(&fy) {
            continue;
        }
        checked += 1;
        // Lift the landmark through each group reference camera and align.
        for frame_idx in [3usize, 1usize] {
            let cam = camera_for_ego(&traj.ego_at(frame_idx), &synth_cfg);
            let p_cam = cam.pose.inverse().apply(&lm.position);
            let pt = PseudoPoint { x: p_cam.x, y: p_cam.y, z: p_cam.z, pixel_id: 0, bin_id: 0 };
            let aligned = align_points(&[pt], &cam.pose, &anchor.inverse());
            let got = spec.cell_index(aligned[0].x, aligned[0].y);
            assert_eq!(got, want, "landmark cell flipped for group ref {frame_idx}");
        }
    }
    assert!(checked >= 5, "too few landmarks in grid interior: {checked}");
}

/// The two transform routes agree: composing global2cur with prev2global
/// equals the direct relative transform.
#[test]
fn two_path_transform_equality() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let axis = nalgebra::Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        );
        let axis = if axis.norm() < 1e-6 { nalgebra::Vector3::x() } else { axis };
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            RigidTransform::new(
                parallax_core::geometry::rotation_about(&axis, rng.random_range(-3.0..3.0)),
                nalgebra::Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-5.0..5.0),
                ),
            )
            .unwrap()
        };
        let prev = make(&mut rng);
        let cur = make(&mut rng);
        let via_eq = compose(&cur.inverse(), &prev);
        let k = parallax_core::geometry::CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0, 20, 20)
            .unwrap();
        let direct = relative_transform(
            &parallax_core::geometry::CameraModel { intrinsics: k, pose: prev },
            &parallax_core::geometry::CameraModel { intrinsics: k, pose: cur },
        );
        assert!((via_eq.rotation - direct.rotation).abs().max() < 1e-9);
        assert!((via_eq.translation - direct.translation).norm() < 1e-9);
    }
}

/// Channel layout: C channels per group, newest group first, padded groups
/// zero-filled at the tail.
#[test]
fn channel_layout_with_padding() {
    let synth_cfg = SynthConfig { width: 40, height: 20, ..SynthConfig::default() };
    let scene = generate_scene(5, &synth_cfg);
    let frames = records(render_trajectory(&scene, &TrajectoryConfig::default(), &synth_cfg));
    // interval 3 leaves only one formable group out of two expected
    let plan = make_plan(4, 2, 3, ShortfallPolicy::Pad).unwrap();
    assert_eq!(plan.total_groups(), 2);
    let spec = grid_spec();
    let anchor = TrajectoryConfig::default().ego_at(3);
    let fused = fuse_sequence(
        &frames,
        &plan,
        &StereoConfig::default(),
        &spec,
        &anchor,
        AccumMode::Deterministic,
    )
    .unwrap();
    let c = frames[0].features.channels;
    assert_eq!(fused.channels, 2 * c);
    // first block carries mass, padded block is all zero
    let first: f64 = (0..spec.n_cells())
        .map(|cell| fused.values[cell * fused.channels..cell * fused.channels + c]
            .iter()
            .map(|v| v.abs())
            .sum::<f64>())
        .sum();
    let padded: f64 = (0..spec.n_cells())
        .map(|cell| fused.values[cell * fused.channels + c..cell * fused.channels + 2 * c]
            .iter()
            .map(|v| v.abs())
            .sum::<f64>())
        .sum();
    assert!(first > 0.0);
    assert_eq!(padded, 0.0);
}
