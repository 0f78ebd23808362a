//! Pinhole camera models, rigid transforms, and the depth-hypothesis warp
//! that projects reference-frame pixels into a source frame.
//!
//! Conventions: right-handed frames, the optical axis is +z pointing forward,
//! pixel (0, 0) is the top-left corner, and continuous pixel coordinates
//! coincide with the integer sample lattice.

use nalgebra::{Matrix3, Vector3};

use crate::grid::{FeatureMap, Grid2};
use crate::{Error, Result};

/// Points at or behind this source-frame depth are masked rather than warped.
pub const Z_EPS: f64 = 1e-6;

/// Orthonormality tolerance for rotation matrices.
pub const ROT_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidCamera("image size must be at least 1x1".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Back-projects a pixel to a camera-frame point at the given depth.
    #[inline]
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Projects a camera-frame point; `None` when it lies at or behind the
    /// image plane.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= Z_EPS {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }
}

/// Rigid motion stored as rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ROT_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation not orthonormal, max |R^T R - I| = {err:.3e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROT_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant {det} != +1")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("translation not finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Returns the transform applying `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// One camera at one timestamp: intrinsics plus camera-to-global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidTransform,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, pose: RigidTransform) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        Ok(Self { intrinsics, pose })
    }
}

/// Transform mapping points from `reference` camera coordinates into `source`
/// camera coordinates.
pub fn relative_transform(reference: &CameraModel, source: &CameraModel) -> RigidTransform {
    compose(&source.pose.inverse(), &reference.pose)
}

/// One pixel with a hypothesized depth in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepthHypothesis {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Warps a reference-frame pixel at a hypothesized depth into the source
/// frame: back-project through `k_ref`, transform by `m`, project through
/// `k_src`. Returns continuous source pixel coordinates plus the source-frame
/// depth, or `None` when the point falls at or behind the source image plane.
pub fn warp_to_source(
    hyp: &PixelDepthHypothesis,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    m: &RigidTransform,
) -> Option<(f64, f64, f64)> {
    debug_assert!(hyp.depth > 0.0);
    if m.translation == Vector3::zeros() {
        // Pure rotation: the image position is scale-invariant, so project
        // the unit-depth direction. This keeps the epipolar degeneracy exact:
        // the same pixel maps to the same place for every depth.
        let w = m.rotation * k_ref.back_project(hyp.u, hyp.v, 1.0);
        let z = w.z * hyp.depth;
        if z <= Z_EPS {
            return None;
        }
        return Some((k_src.fx * w.x / w.z + k_src.cx, k_src.fy * w.y / w.z + k_src.cy, z));
    }
    let p = m.apply(&k_ref.back_project(hyp.u, hyp.v, hyp.depth));
    k_src.project(&p)
}

#[derive(Clone, Copy)]
struct BilinearTaps {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

/// Warped coordinates carry rounding noise; positions within this margin of
/// the valid square are snapped onto it rather than rejected.
const BOUNDS_EPS: f64 = 1e-9;

/// Tap positions and weights for a bilinear sample, or `None` when (u, v)
/// falls outside [0, W-1] x [0, H-1]. Zero-weight taps are folded onto their
/// neighbor so exact lattice and edge positions never touch out-of-bounds
/// pixels.
#[inline]
fn bilinear_taps(h: usize, w: usize, u: f64, v: f64) -> Option<BilinearTaps> {
    let u_max = (w - 1) as f64;
    let v_max = (h - 1) as f64;
    if !(u >= -BOUNDS_EPS && u <= u_max + BOUNDS_EPS && v >= -BOUNDS_EPS && v <= v_max + BOUNDS_EPS)
    {
        return None;
    }
    let u = u.clamp(0.0, u_max);
    let v = v.clamp(0.0, v_max);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    Some(BilinearTaps { x0, x1, y0, y1, fx, fy })
}

/// Bilinear interpolation of the four neighbors of (u, v). Returns `false`
/// (leaving `out` unspecified) when the sample is out of bounds or any
/// contributing neighbor is masked invalid; never extrapolates.
pub fn bilinear_sample_into(feat: &FeatureMap, u: f64, v: f64, out: &mut [f32]) -> bool {
    debug_assert_eq!(out.len(), feat.channels);
    let Some(t) = bilinear_taps(feat.height, feat.width, u, v) else {
        return false;
    };
    if !(feat.is_valid(t.y0, t.x0)
        && feat.is_valid(t.y0, t.x1)
        && feat.is_valid(t.y1, t.x0)
        && feat.is_valid(t.y1, t.x1))
    {
        return false;
    }
    let w00 = ((1.0 - t.fx) * (1.0 - t.fy)) as f32;
    let w10 = (t.fx * (1.0 - t.fy)) as f32;
    let w01 = ((1.0 - t.fx) * t.fy) as f32;
    let w11 = (t.fx * t.fy) as f32;
    let p00 = feat.pixel(t.y0, t.x0);
    let p10 = feat.pixel(t.y0, t.x1);
    let p01 = feat.pixel(t.y1, t.x0);
    let p11 = feat.pixel(t.y1, t.x1);
    for c in 0..feat.channels {
        out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
    }
    true
}

/// Allocating wrapper over [`bilinear_sample_into`].
pub fn bilinear_sample(feat: &FeatureMap, u: f64, v: f64) -> Option<Vec<f32>> {
    let mut out = vec![0.0f32; feat.channels];
    bilinear_sample_into(feat, u, v, &mut out).then_some(out)
}

/// Bilinear sample of a scalar grid (all pixels treated as valid).
pub fn bilinear_sample_scalar(grid: &Grid2<f64>, u: f64, v: f64) -> Option<f64> {
    let t = bilinear_taps(grid.h(), grid.w(), u, v)?;
    let g00 = grid.get(t.y0, t.x0);
    let g10 = grid.get(t.y0, t.x1);
    let g01 = grid.get(t.y1, t.x0);
    let g11 = grid.get(t.y1, t.x1);
    Some(
        (1.0 - t.fx) * (1.0 - t.fy) * g00
            + t.fx * (1.0 - t.fy) * g10
            + (1.0 - t.fx) * t.fy * g01
            + t.fx * t.fy * g11,
    )
}

/// Rotation about an arbitrary axis, handy for building test poses.
pub fn rotation_about(axis: &Vector3<f64>, angle_rad: f64) -> Matrix3<f64> {
    let n = axis.normalize();
    let (s, c) = angle_rad.sin_cos();
    let k = Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
    Matrix3::identity() + s * k + (1.0 - c) * (k * k)
}
