//! Deterministic synthetic scenes: the desk-scale stand-in for drive data.
//!
//! Frames are rendered against exact analytic surfaces (ground plane, far
//! wall, object billboards), so ground-truth depth and cross-frame pixel
//! motion come from closed-form ray geometry. Features are multi-scale cosine
//! encodings of the observed surface point, which makes true correspondences
//! score maximal inner products: the stereo engine's matching problem is
//! solvable by construction, with Gaussian feature noise as the difficulty
//! dial. Every output is a pure function of (seed, camera, time, config).

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fusion::FrameRecord;
use crate::geometry::{compose, CameraIntrinsics, CameraModel, RigidTransform};
use crate::grid::{FeatureMap, Grid2};
use crate::nms::{normalize_angle, RotatedBox};
use crate::stereo::OffsetField;
use crate::{Error, Result};

/// Scene/rendering knobs. The defaults describe the standard 64x176 scene the
/// acceptance checks run on.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub channels: usize,
    /// Additive Gaussian feature noise amplitude.
    pub noise: f64,
    /// Feature amplitude; matched inner products peak near gain^2.
    pub feature_gain: f64,
    /// Encoding wavelength ladder, meters, cycled across channels.
    pub wavelengths: Vec<f64>,
    /// Camera height above ground, meters.
    pub cam_height: f64,
    /// Mono prior noise in the common case (std of depth error), meters.
    pub mono_noise: f64,
    /// Fraction of pixels whose mono prior is a gross blunder.
    pub blunder_rate: f64,
    /// Std of the blunder depth error, meters.
    pub blunder_noise: f64,
    /// Mono prior variance handed to the stereo engine, m^2.
    pub mono_sigma: f64,
    /// Distance of the backdrop wall from the world origin, meters.
    pub wall_x: f64,
    pub n_landmarks: usize,
    pub n_objects: usize,
    /// Largest per-pixel motion offset written into offset fields, pixels.
    pub offset_clamp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 176,
            height: 64,
            focal: 200.0,
            channels: 32,
            noise: 0.02,
            feature_gain: 8.0,
            wavelengths: vec![4.0, 2.0, 1.0, 0.5, 0.25],
            cam_height: 1.0,
            mono_noise: 0.2,
            blunder_rate: 0.35,
            blunder_noise: 1.3,
            mono_sigma: 4.0,
            wall_x: 45.0,
            n_landmarks: 24,
            n_objects: 14,
            offset_clamp: 8.0,
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Multi-scale directional cosine encoder: channel k is
/// `gain * sqrt(2/C) * cos(2*pi/lambda_k * <dir_k, p> + phase_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    directions: Vec<Vector3<f64>>,
    wavelengths: Vec<f64>,
    phases: Vec<f64>,
    amplitude: f64,
}

impl FeatureEncoder {
    fn generate(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let c = cfg.channels;
        let mut directions = Vec::with_capacity(c);
        let mut wavelengths = Vec::with_capacity(c);
        let mut phases = Vec::with_capacity(c);
        for k in 0..c {
            let v = Vector3::new(
                normal.sample(rng),
                normal.sample(rng),
                normal.sample(rng),
            );
            directions.push(if v.norm() > 1e-9 { v.normalize() } else { Vector3::x() });
            wavelengths.push(cfg.wavelengths[k % cfg.wavelengths.len()]);
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        Self {
            directions,
            wavelengths,
            phases,
            amplitude: cfg.feature_gain * (2.0 / c as f64).sqrt(),
        }
    }

    pub fn channels(&self) -> usize {
        self.directions.len()
    }

    pub fn encode_into(&self, p: &Vector3<f64>, out: &mut [f32]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let arg = std::f64::consts::TAU / self.wavelengths[k] * self.directions[k].dot(p)
                + self.phases[k];
            *slot = (self.amplitude * arg.cos()) as f32;
        }
    }

    pub fn encode(&self, p: &Vector3<f64>) -> Vec<f32> {
        let mut out = vec![0.0f32; self.channels()];
        self.encode_into(p, &mut out);
        out
    }
}

/// A vertical rectangle facing the cameras (-x normal), optionally moving at
/// constant velocity. Its texture rides along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Billboard {
    /// Center at t = 0, world coordinates.
    pub center: Vector3<f64>,
    /// Constant velocity, m/s.
    pub velocity: Vector3<f64>,
    /// Half extent along world y, meters.
    pub half_width: f64,
    /// Half extent along world z, meters.
    pub half_height: f64,
    /// Texture-space origin decorrelating this object from the static scene.
    pub material_origin: Vector3<f64>,
}

impl Billboard {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.center + self.velocity * t
    }
}

/// A known 3D point sitting on one of the scene surfaces, with its feature
/// descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub descriptor: Vec<f32>,
}

/// World model: ground plane z = 0, backdrop wall x = wall_x, billboards in
/// between. Fully determined by the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub landmarks: Vec<Landmark>,
    pub objects: Vec<Billboard>,
    pub wall_x: f64,
    pub encoder: FeatureEncoder,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(h: u64, v: u64) -> u64 {
    splitmix(h ^ splitmix(v))
}

fn pose_hash(cam: &CameraModel) -> u64 {
    let mut h = 0xA076_1D64_78BD_642Fu64;
    for v in cam.pose.rotation.iter() {
        h = mix(h, v.to_bits());
    }
    for v in cam.pose.translation.iter() {
        h = mix(h, v.to_bits());
    }
    h
}

/// Builds the scene for a seed.
pub fn generate_scene(seed: u64, cfg: &SynthConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let encoder = FeatureEncoder::generate(&mut rng, cfg);

    // Tall static facades spread over the mid range fill the rows above the
    // horizon with resolvable structure; the far wall only backstops the gaps.
    let mut objects = Vec::with_capacity(cfg.n_objects);
    for i in 0..cfg.n_objects {
        let x = rng.random_range(6.0..16.0);
        let y = rng.random_range(-11.0..15.0);
        let half_width = rng.random_range(2.5..4.5);
        let half_height = rng.random_range(2.2..3.5);
        objects.push(Billboard {
            center: Vector3::new(x, y, half_height),
            velocity: Vector3::zeros(),
            half_width,
            half_height,
            material_origin: Vector3::new(500.0 * (i + 1) as f64, 250.0 * (i + 1) as f64, 0.0),
        });
    }

    let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
    for i in 0..cfg.n_landmarks {
        let position = if i % 2 == 0 {
            Vector3::new(cfg.wall_x, rng.random_range(-8.0..8.0), rng.random_range(0.5..5.0))
        } else {
            Vector3::new(rng.random_range(18.0..40.0), rng.random_range(-6.0..6.0), 0.0)
        };
        landmarks.push(Landmark { descriptor: encoder.encode(&position), position });
    }

    Scene { seed, landmarks, objects, wall_x: cfg.wall_x, encoder }
}

/// Ego pose on the ground plane: z-up frame, +x forward, no roll/pitch.
pub fn ego_pose(x: f64, y: f64, yaw: f64) -> RigidTransform {
    let (s, c) = yaw.sin_cos();
    RigidTransform {
        rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(x, y, 0.0),
    }
}

/// Forward-looking camera mounted at `height` above the ego origin:
/// camera +z = ego +x, camera +x = ego -y, camera +y = ego -z.
pub fn camera_mount(height: f64) -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0),
        translation: Vector3::new(0.0, 0.0, height),
    }
}

/// Camera model for an ego pose under the standard mount.
pub fn camera_for_ego(ego: &RigidTransform, cfg: &SynthConfig) -> CameraModel {
    CameraModel { intrinsics: cfg.intrinsics(), pose: compose(ego, &camera_mount(cfg.cam_height)) }
}

struct Hit {
    /// Camera-frame depth of the hit (the ray is parameterized so this equals
    /// the ray parameter).
    depth: f64,
    world: Vector3<f64>,
    /// Index of the billboard hit, if any.
    object: Option<usize>,
}

/// Nearest surface along the pixel ray at scene time `t`.
fn trace(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>, t: f64) -> Option<Hit> {
    const T_NEAR: f64 = 0.05;
    let mut best: Option<Hit> = None;
    let mut consider = |depth: f64, world: Vector3<f64>, object: Option<usize>| {
        if depth > T_NEAR && best.as_ref().is_none_or(|h| depth < h.depth) {
            best = Some(Hit { depth, world, object });
        }
    };

    // ground plane z = 0
    if dir.z < -1e-12 {
        let s = -origin.z / dir.z;
        consider(s, origin + dir * s, None);
    }
    // backdrop wall x = wall_x
    if dir.x > 1e-12 {
        let s = (scene.wall_x - origin.x) / dir.x;
        consider(s, origin + dir * s, None);
    }
    // billboards
    for (i, b) in scene.objects.iter().enumerate() {
        if dir.x.abs() < 1e-12 {
            continue;
        }
        let c = b.center_at(t);
        let s = (c.x - origin.x) / dir.x;
        if s <= T_NEAR {
            continue;
        }
        let p = origin + dir * s;
        if (p.y - c.y).abs() <= b.half_width && (p.z - c.z).abs() <= b.half_height {
            consider(s, p, Some(i));
        }
    }
    best
}

/// The texture-space point a hit samples; moving objects carry their texture
/// with them so the encoding is invariant in their material frame.
fn material_point(scene: &Scene, hit: &Hit, t: f64) -> Vector3<f64> {
    match hit.object {
        None => hit.world,
        Some(i) => {
            let b = &scene.objects[i];
            hit.world - b.center_at(t) + b.material_origin
        }
    }
}

/// A rendered frame: the pipeline-facing record plus ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub record: FrameRecord,
    pub gt_depth: Grid2<f64>,
    /// Pixel motion of dynamic content toward this frame's group reference;
    /// zero until a sequence renderer fills it in.
    pub gt_offsets: OffsetField,
    pub valid: Grid2<bool>,
}

/// Renders the scene from a camera at scene time `t`: exact ray-geometry
/// depth, position-encoded features with seeded Gaussian noise, and a mono
/// depth prior (ground truth plus seeded noise).
pub fn render(scene: &Scene, camera: &CameraModel, t: f64, cfg: &SynthConfig) -> RenderedFrame {
    let k = &camera.intrinsics;
    let (h, w, c) = (k.height, k.width, scene.encoder.channels());
    let origin = camera.pose.translation;

    let mut values = vec![0.0f32; h * w * c];
    let mut gt_depth = Grid2::new(h, w, 0.0f64);
    let mut valid = Grid2::new(h, w, true);

    let frame_salt = mix(mix(scene.seed, t.to_bits()), pose_hash(camera));
    let mut feat_rng = ChaCha8Rng::seed_from_u64(mix(frame_salt, 1));
    let mut mono_rng = ChaCha8Rng::seed_from_u64(mix(frame_salt, 2));
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Mono blunders come in patches with a consistent offset, the way a mono
    // net misjudges a whole surface; per-pixel noise rides on top.
    const BLUNDER_BLOCK: usize = 14;
    let blunder_offset = |y: usize, x: usize| -> f64 {
        let block = ((y / BLUNDER_BLOCK) * 4096 + x / BLUNDER_BLOCK) as u64;
        let h1 = mix(mix(frame_salt, 3), block);
        if (h1 >> 11) as f64 / (1u64 << 53) as f64 >= cfg.blunder_rate {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(h1, 4));
        cfg.blunder_noise * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
    };

    let mut mono_mu = Grid2::new(h, w, 1.0f64);
    for y in 0..h {
        for x in 0..w {
            let dir_cam = Vector3::new(
                (x as f64 - k.cx) / k.fx,
                (y as f64 - k.cy) / k.fy,
                1.0,
            );
            let dir = camera.pose.rotation * dir_cam;
            let base = (y * w + x) * c;
            match trace(scene, &origin, &dir, t) {
                Some(hit) => {
                    gt_depth.set(y, x, hit.depth);
                    let m = material_point(scene, &hit, t);
                    scene.encoder.encode_into(&m, &mut values[base..base + c]);
                    let mono = hit.depth
                        + blunder_offset(y, x)
                        + cfg.mono_noise * normal.sample(&mut mono_rng);
                    mono_mu.set(y, x, mono.max(0.5));
                }
                None => {
                    valid.set(y, x, false);
                    gt_depth.set(y, x, 0.0);
                    mono_mu.set(y, x, 1.0);
                }
            }
            if cfg.noise > 0.0 {
                for v in &mut values[base..base + c] {
                    *v += (cfg.noise * normal.sample(&mut feat_rng)) as f32;
                }
            }
        }
    }

    let features = FeatureMap::with_mask(h, w, c, values, valid.clone())
        .expect("rendered features are finite");
    RenderedFrame {
        record: FrameRecord {
            timestamp: t,
            camera: camera.clone(),
            features,
            mono_mu,
            mono_sigma: Grid2::new(h, w, cfg.mono_sigma),
        },
        gt_depth,
        gt_offsets: OffsetField::zeros(h, w),
        valid,
    }
}

/// Exact reprojection offsets for dynamic content: for each reference pixel,
/// the source-image displacement between where the observed surface point
/// would sit if static and where it actually is at the source timestamp.
/// Static pixels get zero. Offsets are clamped to `cfg.offset_clamp`.
pub fn motion_offsets(
    scene: &Scene,
    ref_cam: &CameraModel,
    ref_t: f64,
    src_cam: &CameraModel,
    src_t: f64,
    cfg: &SynthConfig,
) -> OffsetField {
    let k = &ref_cam.intrinsics;
    let (h, w) = (k.height, k.width);
    let origin = ref_cam.pose.translation;
    let src_inv = src_cam.pose.inverse();
    let mut field = OffsetField::zeros(h, w);
    let clamp = cfg.offset_clamp;
    for y in 0..h {
        for x in 0..w {
            let dir_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = ref_cam.pose.rotation * dir_cam;
            let Some(hit) = trace(scene, &origin, &dir, ref_t) else {
                continue;
            };
            let Some(obj) = hit.object else {
                continue;
            };
            let moved = hit.world + scene.objects[obj].velocity * (src_t - ref_t);
            let p_static = src_inv.apply(&hit.world);
            let p_moved = src_inv.apply(&moved);
            let (Some(a), Some(b)) =
                (src_cam.intrinsics.project(&p_static), src_cam.intrinsics.project(&p_moved))
            else {
                continue;
            };
            field.du.set(y, x, (b.0 - a.0).clamp(-clamp, clamp));
            field.dv.set(y, x, (b.1 - a.1).clamp(-clamp, clamp));
        }
    }
    field
}

/// Straight-line ego trajectory. The camera looks along +x, so the lateral
/// (+y) component is what produces stereo parallax; pure forward motion puts
/// the epipole at the principal point and starves the matcher. The default is
/// dominated by the lateral component, the geometry of a side-mounted camera
/// on a forward-driving ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub n_frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    /// Speed along the optical axis (+x), m/s.
    pub forward_speed: f64,
    /// Speed across the optical axis (+y), m/s.
    pub lateral_speed: f64,
    pub start_x: f64,
    pub start_y: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_frames: 4,
            dt: 0.5,
            forward_speed: 0.4,
            lateral_speed: 1.4,
            start_x: 0.0,
            start_y: 0.0,
        }
    }
}

impl TrajectoryConfig {
    /// Ego pose of frame `i`.
    pub fn ego_at(&self, i: usize) -> RigidTransform {
        let t = i as f64 * self.dt;
        ego_pose(self.start_x + self.forward_speed * t, self.start_y + self.lateral_speed * t, 0.0)
    }
}

/// Renders the frames of a trajectory, oldest first.
pub fn render_trajectory(
    scene: &Scene,
    traj: &TrajectoryConfig,
    cfg: &SynthConfig,
) -> Vec<RenderedFrame> {
    (0..traj.n_frames)
        .map(|i| {
            let t = i as f64 * traj.dt;
            render(scene, &camera_for_ego(&traj.ego_at(i), cfg), t, cfg)
        })
        .collect()
}

/// Box corpora for the suppression differentials. The three `fig-*` layouts
/// pin the geometry the circle/size-aware comparison hinges on; `random`
/// produces clustered detections with duplicates plus isolated boxes.
pub fn make_nms_corpus(seed: u64, n: usize, layout: &str) -> Result<Vec<RotatedBox>> {
    let d = 8.0 / 9.0; // shared center distance of the two left-panel pairs
    match layout {
        // Two long boxes offset along their length: IoU 0.8.
        "fig-left-overlap" => Ok(vec![
            RotatedBox { cx: 0.0, cy: 0.0, dx: 8.0, dy: 2.0, theta: 0.0, score: 0.9, class_id: 0 },
            RotatedBox { cx: d, cy: 0.0, dx: 8.0, dy: 2.0, theta: 0.0, score: 0.8, class_id: 0 },
        ]),
        // Two long parallel boxes separated laterally at the same center
        // distance: IoU 0.2.
        "fig-left-parallel" => Ok(vec![
            RotatedBox {
                cx: 0.0,
                cy: 0.0,
                dx: 8.0,
                dy: 4.0 / 3.0,
                theta: 0.0,
                score: 0.9,
                class_id: 0,
            },
            RotatedBox {
                cx: 0.0,
                cy: d,
                dx: 8.0,
                dy: 4.0 / 3.0,
                theta: 0.0,
                score: 0.8,
                class_id: 0,
            },
        ]),
        // Two small non-overlapping boxes within the baseline radius.
        "fig-right-adjacent-small" => Ok(vec![
            RotatedBox { cx: 0.0, cy: 0.0, dx: 0.6, dy: 0.6, theta: 0.0, score: 0.9, class_id: 1 },
            RotatedBox { cx: 1.0, cy: 0.0, dx: 0.6, dy: 0.6, theta: 0.0, score: 0.85, class_id: 1 },
        ]),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
            let mut boxes = Vec::with_capacity(n);
            while boxes.len() < n {
                let big = rng.random::<f64>() < 0.5;
                let base = RotatedBox {
                    cx: rng.random_range(-40.0..40.0),
                    cy: rng.random_range(-40.0..40.0),
                    dx: if big { rng.random_range(4.0..9.0) } else { rng.random_range(0.8..2.0) },
                    dy: if big { rng.random_range(1.8..3.0) } else { rng.random_range(0.6..1.6) },
                    theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    score: rng.random_range(0.3..1.0),
                    class_id: rng.random_range(0..3),
                };
                boxes.push(base);
                // Duplicate detections scatter along the object's length, so
                // big boxes produce duplicates a small fixed radius misses
                // while still overlapping heavily.
                let dups = rng.random_range(0..=2usize);
                for _ in 0..dups {
                    if boxes.len() >= n {
                        break;
                    }
                    let (s, c) = base.theta.sin_cos();
                    let dlong = rng.random_range(-0.2..0.2) * base.dx;
                    let dshort = rng.random_range(-0.05..0.05) * base.dy;
                    boxes.push(RotatedBox {
                        cx: base.cx + c * dlong - s * dshort,
                        cy: base.cy + s * dlong + c * dshort,
                        dx: (base.dx * rng.random_range(0.95..1.05)).max(0.3),
                        dy: (base.dy * rng.random_range(0.95..1.05)).max(0.3),
                        theta: normalize_angle(base.theta + rng.random_range(-0.03..0.03)),
                        score: (base.score * rng.random_range(0.6..1.0)).max(0.05),
                        class_id: base.class_id,
                    });
                }
                // Adjacent distinct small objects: non-overlapping neighbors
                // inside the radius a fixed-radius rule would need for the
                // big-box duplicates above.
                if !big && boxes.len() < n && rng.random::<f64>() < 0.5 {
                    let ndx: f64 = rng.random_range(0.8..1.4);
                    let ndy: f64 = rng.random_range(0.6..1.2);
                    let clearance = 0.5 * (base.dx.hypot(base.dy) + ndx.hypot(ndy));
                    let dist = clearance + rng.random_range(0.1..0.6);
                    let dir = rng.random_range(0.0..std::f64::consts::TAU);
                    boxes.push(RotatedBox {
                        cx: base.cx + dist * dir.cos(),
                        cy: base.cy + dist * dir.sin(),
                        dx: ndx,
                        dy: ndy,
                        theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                        score: rng.random_range(0.3..1.0),
                        class_id: base.class_id,
                    });
                }
            }
            Ok(boxes)
        }
        other => Err(Error::UnknownLayout(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> SynthConfig {
        SynthConfig { width: 40, height: 24, channels: 8, noise: 0.0, ..SynthConfig::default() }
    }

    #[test]
    fn identical_poses_render_identically() {
        let cfg = small_cfg();
        let scene = generate_scene(7, &cfg);
        let cam = camera_for_ego(&ego_pose(0.0, 0.0, 0.0), &cfg);
        let a = render(&scene, &cam, 0.25, &cfg);
        let b = render(&scene, &cam, 0.25, &cfg);
        assert_eq!(a.record.features.values(), b.record.features.values());
        assert_eq!(a.gt_depth.as_slice(), b.gt_depth.as_slice());
        assert_eq!(a.record.mono_mu.as_slice(), b.record.mono_mu.as_slice());
    }

    #[test]
    fn landmark_on_axis_has_exact_depth() {
        let cfg = small_cfg();
        let mut scene = generate_scene(7, &cfg);
        scene.objects.clear();
        let cam = camera_for_ego(&ego_pose(0.0, 0.0, 0.0), &cfg);
        // The principal ray is the ego +x axis at cam_height; the wall is the
        // first surface it meets, at depth wall_x.
        let frame = render(&scene, &cam, 0.0, &cfg);
        let (cy, cx) = (cfg.height / 2, cfg.width / 2);
        assert_abs_diff_eq!(frame.gt_depth.get(cy, cx), cfg.wall_x, epsilon = 1e-9);
    }

    #[test]
    fn billboard_occludes_wall() {
        let cfg = small_cfg();
        let mut scene = generate_scene(7, &cfg);
        scene.objects = vec![Billboard {
            center: Vector3::new(10.0, 0.0, cfg.cam_height),
            velocity: Vector3::zeros(),
            half_width: 3.0,
            half_height: 2.0,
            material_origin: Vector3::new(500.0, 0.0, 0.0),
        }];
        let cam = camera_for_ego(&ego_pose(0.0, 0.0, 0.0), &cfg);
        let frame = render(&scene, &cam, 0.0, &cfg);
        assert_abs_diff_eq!(
            frame.gt_depth.get(cfg.height / 2, cfg.width / 2),
            10.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn ground_depth_matches_closed_form() {
        let cfg = small_cfg();
        let mut scene = generate_scene(3, &cfg);
        scene.objects.clear();
        let cam = camera_for_ego(&ego_pose(0.0, 0.0, 0.0), &cfg);
        let frame = render(&scene, &cam, 0.0, &cfg);
        let k = cfg.intrinsics();
        let y = cfg.height - 1; // bottom row looks down
        let slope = (y as f64 - k.cy) / k.fy;
        let want = cfg.cam_height / slope;
        if want < cfg.wall_x {
            assert_abs_diff_eq!(frame.gt_depth.get(y, cfg.width / 2), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn moving_object_offset_magnitude() {
        // Pinhole displacement: an object moving 1 m laterally at depth 10
        // with f = 200 px shifts by about 20 px in the image.
        let cfg = SynthConfig { width: 176, height: 64, channels: 4, noise: 0.0, offset_clamp: 64.0, ..SynthConfig::default() };
        let mut scene = generate_scene(11, &cfg);
        scene.objects = vec![Billboard {
            center: Vector3::new(10.0, 0.0, cfg.cam_height),
            velocity: Vector3::new(0.0, 1.0, 0.0),
            half_width: 2.5,
            half_height: 1.5,
            material_origin: Vector3::new(500.0, 0.0, 0.0),
        }];
        let cam = camera_for_ego(&ego_pose(0.0, 0.0, 0.0), &cfg);
        let offsets = motion_offsets(&scene, &cam, 0.0, &cam, 1.0, &cfg);
        let (cy, cx) = (cfg.height / 2, cfg.width / 2);
        // lateral +y world motion maps to -u in this camera (x_cam = -y_ego)
        assert_abs_diff_eq!(offsets.du.get(cy, cx).abs(), 20.0, epsilon = 1e-6);
        assert_abs_diff_eq!(offsets.dv.get(cy, cx), 0.0, epsilon = 1e-9);
        // static background keeps zero offsets
        assert_eq!(offsets.du.get(1, 1), 0.0);
    }

    #[test]
    fn encoder_peaks_at_true_point() {
        let cfg = SynthConfig { channels: 32, ..small_cfg() };
        let scene = generate_scene(5, &cfg);
        let p = Vector3::new(20.0, 1.0, 0.5);
        let e0 = scene.encoder.encode(&p);
        let self_score: f64 = e0.iter().map(|&v| v as f64 * v as f64).sum();
        for delta in [0.5, 1.0, 3.0] {
            let e1 = scene.encoder.encode(&Vector3::new(20.0 + delta, 1.0, 0.5));
            let cross: f64 = e0.iter().zip(&e1).map(|(&a, &b)| a as f64 * b as f64).sum();
            assert!(
                cross < self_score,
                "encoding at displacement {delta} should score below the match"
            );
        }
    }

    #[test]
    fn corpus_layouts() {
        assert_eq!(make_nms_corpus(1, 0, "fig-left-overlap").unwrap().len(), 2);
        assert_eq!(make_nms_corpus(1, 0, "fig-right-adjacent-small").unwrap().len(), 2);
        assert!(make_nms_corpus(1, 0, "no-such-layout").is_err());
        assert!(make_nms_corpus(1, 0, "random").unwrap().is_empty());
        let a = make_nms_corpus(9, 50, "random").unwrap();
        let b = make_nms_corpus(9, 50, "random").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        for bx in &a {
            bx.validate().unwrap();
        }
    }

    #[test]
    fn scene_is_seed_deterministic() {
        let cfg = small_cfg();
        assert_eq!(generate_scene(42, &cfg), generate_scene(42, &cfg));
    }

    #[test]
    fn landmark_depths_within_range_from_trajectory() {
        let cfg = SynthConfig::default();
        let scene = generate_scene(42, &cfg);
        let traj = TrajectoryConfig::default();
        for i in 0..traj.n_frames {
            let cam = camera_for_ego(&traj.ego_at(i), &cfg);
            let inv = cam.pose.inverse();
            for lm in &scene.landmarks {
                let depth = inv.apply(&lm.position).z;
                assert!(depth > 2.0 && depth < 58.0, "landmark depth {depth} out of range");
            }
        }
    }
}
