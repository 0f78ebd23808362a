//! File formats: flat binary grids, human-readable TOML documents for
//! cameras, configs, and sequence manifests, and CSV for box corpora and
//! reports.
//!
//! The binary grid layout is a 16-byte header (magic, H, W, B as
//! little-endian u32) followed by H*W*B row-major little-endian f32 values.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, CameraModel, RigidTransform};
use crate::grid::{Grid2, Grid3};
use crate::nms::RotatedBox;
use crate::stereo::DepthDistribution;
use crate::{Error, Result};

/// Magic bytes "GRD1" opening every binary grid file.
pub const GRID_MAGIC: u32 = u32::from_le_bytes(*b"GRD1");

/// Writes a binary grid file; `data` must hold `h * w * b` values.
pub fn write_grid_bin(path: &Path, h: usize, w: usize, b: usize, data: &[f32]) -> Result<()> {
    if data.len() != h * w * b {
        return Err(Error::ShapeMismatch(format!(
            "grid file expects {}x{}x{}={} values, got {}",
            h,
            w,
            b,
            h * w * b,
            data.len()
        )));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in [GRID_MAGIC, h as u32, w as u32, b as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a binary grid file, returning (h, w, b, values).
pub fn read_grid_bin(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 16 {
        return Err(Error::Format(format!("{}: truncated grid header", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != GRID_MAGIC {
        return Err(Error::Format(format!("{}: bad grid magic", path.display())));
    }
    let (h, w, b) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expect = 16 + h * w * b * 4;
    if raw.len() != expect {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {}x{}x{} grid, found {}",
            path.display(),
            expect,
            h,
            w,
            b,
            raw.len()
        )));
    }
    let data = raw[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, b, data))
}

pub fn write_grid2(path: &Path, grid: &Grid2<f64>) -> Result<()> {
    let data: Vec<f32> = grid.as_slice().iter().map(|&v| v as f32).collect();
    write_grid_bin(path, grid.h(), grid.w(), 1, &data)
}

pub fn read_grid2(path: &Path) -> Result<Grid2<f64>> {
    let (h, w, b, data) = read_grid_bin(path)?;
    if b != 1 {
        return Err(Error::Format(format!("{}: expected single-plane grid, got b={b}", path.display())));
    }
    Grid2::from_vec(h, w, data.into_iter().map(|v| v as f64).collect())
}

pub fn write_grid3(path: &Path, grid: &Grid3<f64>) -> Result<()> {
    let data: Vec<f32> = grid.as_slice().iter().map(|&v| v as f32).collect();
    write_grid_bin(path, grid.h(), grid.w(), grid.n(), &data)
}

pub fn read_grid3(path: &Path) -> Result<Grid3<f64>> {
    let (h, w, b, data) = read_grid_bin(path)?;
    Grid3::from_vec(h, w, b, data.into_iter().map(|v| v as f64).collect())
}

/// CSV export for small grids: one `y,x,bin,value` row per entry.
pub fn write_grid_csv(path: &Path, h: usize, w: usize, b: usize, data: &[f32]) -> Result<()> {
    if data.len() != h * w * b {
        return Err(Error::ShapeMismatch("csv grid shape mismatch".into()));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "y,x,bin,value")?;
    for y in 0..h {
        for x in 0..w {
            for i in 0..b {
                writeln!(out, "{},{},{},{}", y, x, i, data[(y * w + x) * b + i])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Human-readable camera document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation matrix, 9 row-major values.
    pub rotation: Vec<f64>,
    /// Translation, 3 values.
    pub translation: Vec<f64>,
}

impl CameraDoc {
    pub fn from_model(cam: &CameraModel) -> Self {
        let r = &cam.pose.rotation;
        Self {
            fx: cam.intrinsics.fx,
            fy: cam.intrinsics.fy,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            width: cam.intrinsics.width,
            height: cam.intrinsics.height,
            rotation: (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect(),
            translation: cam.pose.translation.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> Result<CameraModel> {
        if self.rotation.len() != 9 || self.translation.len() != 3 {
            return Err(Error::Format("camera doc needs 9 rotation and 3 translation values".into()));
        }
        let rotation = Matrix3::from_iterator(self.rotation.iter().copied()).transpose();
        let translation = Vector3::new(self.translation[0], self.translation[1], self.translation[2]);
        CameraModel::new(
            CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?,
            RigidTransform::new(rotation, translation)?,
        )
    }
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    let text = toml::to_string(&CameraDoc::from_model(cam))
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let text = fs::read_to_string(path)?;
    let doc: CameraDoc = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    doc.to_model()
}

/// A bare rigid transform as a human-readable document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformDoc {
    /// Rotation matrix, 9 row-major values.
    pub rotation: Vec<f64>,
    /// Translation, 3 values.
    pub translation: Vec<f64>,
}

impl TransformDoc {
    pub fn from_transform(t: &RigidTransform) -> Self {
        Self {
            rotation: (0..3).flat_map(|i| (0..3).map(move |j| t.rotation[(i, j)])).collect(),
            translation: t.translation.iter().copied().collect(),
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform> {
        if self.rotation.len() != 9 || self.translation.len() != 3 {
            return Err(Error::Format("transform doc needs 9 rotation and 3 translation values".into()));
        }
        RigidTransform::new(
            Matrix3::from_iterator(self.rotation.iter().copied()).transpose(),
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }
}

pub fn write_transform(path: &Path, t: &RigidTransform) -> Result<()> {
    let text = toml::to_string(&TransformDoc::from_transform(t))
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_transform(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path)?;
    let doc: TransformDoc = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    doc.to_transform()
}

/// One frame entry of a sequence manifest; paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub timestamp: f64,
    pub camera: String,
    pub features: String,
    pub mono_mu: String,
    pub mono_sigma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_offsets_du: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_offsets_dv: Option<String>,
}

/// Ordered list of frame records referencing feature/camera files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SequenceManifest {
    /// Optional path to the BEV anchor pose (frame-to-global) fusion bins in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub frames: Vec<FrameEntry>,
}

pub fn write_manifest(path: &Path, manifest: &SequenceManifest) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = fs::read_to_string(path)?;
    let m = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(m)
}

/// Resolves a manifest-relative path.
pub fn manifest_relative(manifest_path: &Path, entry: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(entry)
}

/// Writes a box corpus as `cx,cy,dx,dy,theta,score,class_id` CSV.
pub fn write_boxes_csv(path: &Path, boxes: &[RotatedBox]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "cx,cy,dx,dy,theta,score,class_id")?;
    for b in boxes {
        writeln!(out, "{},{},{},{},{},{},{}", b.cx, b.cy, b.dx, b.dy, b.theta, b.score, b.class_id)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_boxes_csv(path: &Path) -> Result<Vec<RotatedBox>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut boxes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        if record.len() != 7 {
            return Err(Error::Format(format!(
                "box row needs 7 fields, got {}",
                record.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}`", &record[i])))
        };
        let b = RotatedBox {
            cx: f(0)?,
            cy: f(1)?,
            dx: f(2)?,
            dy: f(3)?,
            theta: f(4)?,
            score: f(5)?,
            class_id: record[6]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad class id `{}`", &record[6])))?,
        };
        b.validate()?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Writes pooling inputs as three binary grids: depth probabilities (P x B),
/// context features (P x C), and cell indices (P x B, f32-encoded with -1 for
/// out-of-grid entries).
pub fn write_pool_inputs(
    dir: &Path,
    stem: &str,
    inputs: &crate::bev_pool::PoolInputs,
) -> Result<()> {
    write_grid_bin(
        &dir.join(format!("{stem}.depth_probs.bin")),
        inputs.n_points,
        inputs.n_bins,
        1,
        &inputs.depth_probs,
    )?;
    write_grid_bin(
        &dir.join(format!("{stem}.context.bin")),
        inputs.n_points,
        inputs.channels,
        1,
        &inputs.context,
    )?;
    let cells: Vec<f32> = inputs
        .point_cells
        .iter()
        .map(|&c| if c == crate::bev_pool::OUT_OF_GRID { -1.0 } else { c as f32 })
        .collect();
    write_grid_bin(&dir.join(format!("{stem}.cells.bin")), inputs.n_points, inputs.n_bins, 1, &cells)
}

/// Loads pooling inputs written by [`write_pool_inputs`].
pub fn read_pool_inputs(dir: &Path, stem: &str) -> Result<crate::bev_pool::PoolInputs> {
    let (p, b, _, depth_probs) = read_grid_bin(&dir.join(format!("{stem}.depth_probs.bin")))?;
    let (pc, c, _, context) = read_grid_bin(&dir.join(format!("{stem}.context.bin")))?;
    let (p2, b2, _, cells_raw) = read_grid_bin(&dir.join(format!("{stem}.cells.bin")))?;
    if pc != p || p2 != p || b2 != b {
        return Err(Error::ShapeMismatch("pool input files disagree on P/B".into()));
    }
    let point_cells = cells_raw
        .into_iter()
        .map(|v| {
            if v < 0.0 {
                Ok(crate::bev_pool::OUT_OF_GRID)
            } else if v.fract() == 0.0 && v <= u32::MAX as f32 {
                Ok(v as u32)
            } else {
                Err(Error::Format(format!("bad cell index {v}")))
            }
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(crate::bev_pool::PoolInputs {
        n_points: p,
        n_bins: b,
        channels: c,
        depth_probs,
        context,
        point_cells,
    })
}

/// Writes a `key = value` report document.
pub fn write_key_values(path: &Path, pairs: &[(&str, f64)]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Exports a depth distribution in the binary grid layout (B = bin count).
pub fn write_distribution(path: &Path, dist: &DepthDistribution) -> Result<()> {
    write_grid3(path, &dist.probs)
}
