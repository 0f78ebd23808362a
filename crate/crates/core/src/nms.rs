//! Non-maximum suppression for rotated BEV boxes.
//!
//! Three variants share one greedy sweep (score-descending, index tiebreak):
//! plain circle NMS suppresses on Euclidean center distance, size-aware
//! circle NMS on per-axis center distances against thresholds built from the
//! two boxes' projected extents, and rotated-IoU NMS computes exact polygon
//! overlap. The IoU variant is the slow reference the circle variants are
//! differentially tested against.

use std::time::Instant;

use crate::{Error, Result};

/// BEV box: center, length d_x, width d_y, yaw, detection score, class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub dx: f64,
    pub dy: f64,
    /// Yaw in radians, normalized to [-pi, pi).
    pub theta: f64,
    pub score: f64,
    pub class_id: u32,
}

impl RotatedBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box dimensions must be positive, got {}x{}",
                self.dx, self.dy
            )));
        }
        if !self.score.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidInput("box score/theta must be finite".into()));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidInput("box center must be finite".into()));
        }
        Ok(())
    }

    /// Corner coordinates in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let hx = 0.5 * self.dx;
        let hy = 0.5 * self.dy;
        let rot = |x: f64, y: f64| [self.cx + c * x - s * y, self.cy + s * x + c * y];
        [rot(hx, hy), rot(-hx, hy), rot(-hx, -hy), rot(hx, -hy)]
    }

    pub fn area(&self) -> f64 {
        self.dx * self.dy
    }
}

/// Wraps an angle into [-pi, pi).
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI).rem_euclid(two_pi);
    if t < 0.0 {
        t += two_pi;
    }
    t - std::f64::consts::PI
}

/// Suppression settings shared by the NMS variants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    /// Scale factor w of the size-aware thresholds.
    pub scale_factor: f64,
    /// Suppression radius of plain circle NMS, meters.
    pub radius: f64,
    /// Ignore class ids when true.
    pub class_agnostic: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        // The default scale factor keeps the bundled corpus layouts on the
        // intended side of their thresholds; w is a free hyperparameter.
        Self { scale_factor: 0.25, radius: 2.0, class_agnostic: false }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0) {
            return Err(Error::InvalidConfig("scale_factor must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig("radius must be positive".into()));
        }
        Ok(())
    }
}

/// Signed-vs-absolute trig treatment of the threshold terms. The printed
/// formula uses signed cos/sin, which goes negative past a quarter turn;
/// `Absolute` keeps thresholds positive extents and is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigMode {
    Absolute,
    Signed,
}

fn threshold_terms(b: &RotatedBox, mode: TrigMode) -> (f64, f64) {
    let (mut s, mut c) = b.theta.sin_cos();
    if mode == TrigMode::Absolute {
        s = s.abs();
        c = c.abs();
    }
    (c * b.dx + s * b.dy, c * b.dy + s * b.dx)
}

/// Per-axis suppression thresholds for a pair of boxes, with configurable
/// trig treatment.
pub fn size_aware_thresholds_with(
    a: &RotatedBox,
    b: &RotatedBox,
    w: f64,
    mode: TrigMode,
) -> (f64, f64) {
    let (ax, ay) = threshold_terms(a, mode);
    let (bx, by) = threshold_terms(b, mode);
    (w * (ax + bx), w * (ay + by))
}

/// Per-axis suppression thresholds: each box contributes its footprint
/// projected on the axes, |cos|/|sin| weighted, scaled by w.
pub fn size_aware_thresholds(a: &RotatedBox, b: &RotatedBox, w: f64) -> (f64, f64) {
    size_aware_thresholds_with(a, b, w, TrigMode::Absolute)
}

/// Indices sorted by descending score, ties broken by lower input index.
fn score_order(boxes: &[RotatedBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    order
}

fn greedy_sweep(
    boxes: &[RotatedBox],
    class_agnostic: bool,
    mut suppresses: impl FnMut(&RotatedBox, &RotatedBox) -> bool,
) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &i in &score_order(boxes) {
        let candidate = &boxes[i];
        let dead = kept.iter().any(|&k| {
            let keeper = &boxes[k];
            (class_agnostic || keeper.class_id == candidate.class_id)
                && suppresses(keeper, candidate)
        });
        if !dead {
            kept.push(i);
        }
    }
    kept
}

/// Size-aware circle NMS: a lower-scored box is suppressed when both its
/// per-axis center distances to a kept box fall strictly inside the
/// size-derived thresholds. Returns kept indices in descending-score order.
pub fn size_aware_circle_nms(boxes: &[RotatedBox], cfg: &NmsConfig) -> Vec<usize> {
    let w = cfg.scale_factor;
    greedy_sweep(boxes, cfg.class_agnostic, |keeper, cand| {
        let (x_thre, y_thre) = size_aware_thresholds(keeper, cand, w);
        (keeper.cx - cand.cx).abs() < x_thre && (keeper.cy - cand.cy).abs() < y_thre
    })
}

/// Variant of [`size_aware_circle_nms`] with selectable trig mode, used by the
/// differential harness to compare the signed and absolute interpretations.
pub fn size_aware_circle_nms_with(
    boxes: &[RotatedBox],
    cfg: &NmsConfig,
    mode: TrigMode,
) -> Vec<usize> {
    let w = cfg.scale_factor;
    greedy_sweep(boxes, cfg.class_agnostic, |keeper, cand| {
        let (x_thre, y_thre) = size_aware_thresholds_with(keeper, cand, w, mode);
        (keeper.cx - cand.cx).abs() < x_thre && (keeper.cy - cand.cy).abs() < y_thre
    })
}

/// Plain circle NMS: suppression on strict Euclidean center distance.
pub fn circle_nms(boxes: &[RotatedBox], cfg: &NmsConfig) -> Vec<usize> {
    let r2 = cfg.radius * cfg.radius;
    greedy_sweep(boxes, cfg.class_agnostic, |keeper, cand| {
        let dx = keeper.cx - cand.cx;
        let dy = keeper.cy - cand.cy;
        dx * dx + dy * dy < r2
    })
}

/// Greedy NMS on exact rotated IoU; the reference the circle variants
/// approximate.
pub fn rotated_iou_nms(boxes: &[RotatedBox], iou_threshold: f64, class_agnostic: bool) -> Vec<usize> {
    greedy_sweep(boxes, class_agnostic, |keeper, cand| rotated_iou(keeper, cand) > iou_threshold)
}

/// Clips `subject` against one directed edge (a -> b) of a convex clipper;
/// points on the left side (counter-clockwise interior) are kept.
fn clip_edge(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let inside =
        |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0;
    let intersect = |p: [f64; 2], q: [f64; 2]| {
        let r = [q[0] - p[0], q[1] - p[1]];
        let e = [b[0] - a[0], b[1] - a[1]];
        let denom = e[0] * r[1] - e[1] * r[0];
        if denom.abs() < 1e-300 {
            return p;
        }
        let t = (e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])) / -denom;
        [p[0] + t * r[0], p[1] + t * r[1]]
    };
    let mut out = Vec::with_capacity(subject.len() + 1);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        match (inside(cur), inside(prev)) {
            (true, true) => out.push(cur),
            (true, false) => {
                out.push(intersect(prev, cur));
                out.push(cur);
            }
            (false, true) => out.push(intersect(prev, cur)),
            (false, false) => {}
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc.abs()
}

/// Exact intersection-over-union of two rotated boxes via Sutherland-Hodgman
/// clipping of the two convex quads.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let clipper = b.corners();
    let mut poly: Vec<[f64; 2]> = a.corners().to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        poly = clip_edge(&poly, clipper[i], clipper[(i + 1) % 4]);
    }
    let inter = polygon_area(&poly);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// One row of the NMS benchmark CSV.
#[derive(Debug, Clone)]
pub struct NmsBenchRow {
    pub variant: &'static str,
    pub n_boxes: usize,
    pub median_ns: u128,
    pub p90_ns: u128,
    pub kept: usize,
    pub suppressed: usize,
}

impl NmsBenchRow {
    pub const CSV_HEADER: &'static str = "variant,n_boxes,median_ns,p90_ns,kept,suppressed";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.variant, self.n_boxes, self.median_ns, self.p90_ns, self.kept, self.suppressed
        )
    }
}

/// Times the three NMS variants on a corpus: warm-up, then `reps` timed
/// repetitions each, with kept/suppressed counts for cross-checking.
pub fn bench_nms(
    boxes: &[RotatedBox],
    cfg: &NmsConfig,
    iou_threshold: f64,
    reps: usize,
) -> Vec<NmsBenchRow> {
    type Runner<'a> = Box<dyn Fn() -> Vec<usize> + 'a>;
    let reps = reps.max(1);
    let runners: Vec<(&'static str, Runner<'_>)> = vec![
        ("rotated_iou", Box::new(move || rotated_iou_nms(boxes, iou_threshold, cfg.class_agnostic))),
        ("circle", Box::new(move || circle_nms(boxes, cfg))),
        ("size_aware", Box::new(move || size_aware_circle_nms(boxes, cfg))),
    ];
    let mut rows = Vec::new();
    for (variant, run) in runners {
        let kept = run(); // warm-up + result
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            std::hint::black_box(run());
            samples.push(t0.elapsed().as_nanos());
        }
        let (median_ns, p90_ns) = crate::bev_pool::median_p90(&mut samples);
        rows.push(NmsBenchRow {
            variant,
            n_boxes: boxes.len(),
            median_ns,
            p90_ns,
            kept: kept.len(),
            suppressed: boxes.len() - kept.len(),
        });
    }
    rows
}
