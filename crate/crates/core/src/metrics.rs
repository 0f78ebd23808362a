//! Depth-estimation error metrics and center-distance recall.

use crate::grid::Grid2;
use crate::nms::RotatedBox;
use crate::{Error, Result};

/// Standard depth benchmark errors over the masked pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEvalReport {
    /// Scale-invariant log error, scaled by 100 (benchmark convention).
    pub silog: f64,
    /// Mean |pred - gt| / gt.
    pub abs_rel: f64,
    /// Mean (pred - gt)^2 / gt.
    pub sq_rel: f64,
    /// Mean |log10 pred - log10 gt|.
    pub log10: f64,
    /// Root mean squared error, meters.
    pub rmse: f64,
    pub n_pixels: usize,
}

impl DepthEvalReport {
    pub const CSV_HEADER: &'static str = "silog,abs_rel,sq_rel,log10,rmse,n_pixels";

    pub fn to_csv(&self) -> String {
        format!(
            "{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            self.silog, self.abs_rel, self.sq_rel, self.log10, self.rmse, self.n_pixels
        )
    }

    pub fn key_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("silog", self.silog),
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("log10", self.log10),
            ("rmse", self.rmse),
            ("n_pixels", self.n_pixels as f64),
        ]
    }
}

/// Computes the depth error report over pixels where `mask` is true. Both
/// depths must be strictly positive there.
pub fn depth_metrics(
    pred: &Grid2<f64>,
    gt: &Grid2<f64>,
    mask: &Grid2<bool>,
) -> Result<DepthEvalReport> {
    if !pred.same_shape(gt) || !pred.same_shape(mask) {
        return Err(Error::ShapeMismatch("pred/gt/mask shapes differ".into()));
    }
    let mut n = 0usize;
    let mut sum_e = 0.0;
    let mut sum_e2 = 0.0;
    let mut sum_abs_rel = 0.0;
    let mut sum_sq_rel = 0.0;
    let mut sum_log10 = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..pred.len() {
        if !mask.as_slice()[i] {
            continue;
        }
        let p = pred.as_slice()[i];
        let g = gt.as_slice()[i];
        if !(p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "depth metrics need positive finite values on the mask, got pred={p} gt={g}"
            )));
        }
        let e = p.ln() - g.ln();
        sum_e += e;
        sum_e2 += e * e;
        sum_abs_rel += (p - g).abs() / g;
        sum_sq_rel += (p - g) * (p - g) / g;
        sum_log10 += (p.log10() - g.log10()).abs();
        sum_sq += (p - g) * (p - g);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty evaluation mask".into()));
    }
    let inv = 1.0 / n as f64;
    let var = (sum_e2 * inv - (sum_e * inv) * (sum_e * inv)).max(0.0);
    Ok(DepthEvalReport {
        silog: var.sqrt() * 100.0,
        abs_rel: sum_abs_rel * inv,
        sq_rel: sum_sq_rel * inv,
        log10: sum_log10 * inv,
        rmse: (sum_sq * inv).sqrt(),
        n_pixels: n,
    })
}

/// Recall at a ladder of center-distance thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    pub n_gt: usize,
    pub n_pred: usize,
    /// Recall defaulted to 1 because there was nothing to recall.
    pub empty_gt: bool,
}

impl RecallReport {
    pub fn to_csv(&self) -> String {
        let mut head = String::from("threshold,recall\n");
        for (t, r) in self.thresholds.iter().zip(&self.recall) {
            head.push_str(&format!("{t},{r:.9}\n"));
        }
        head
    }
}

/// Greedy one-to-one matching by ascending center distance; a ground-truth
/// box counts as recalled at threshold t when its matched prediction lies
/// strictly closer than t. Thresholds must be sorted ascending. Empty ground
/// truth yields recall 1 by convention, flagged in the report.
pub fn center_recall(
    pred: &[RotatedBox],
    gt: &[RotatedBox],
    thresholds: &[f64],
) -> Result<RecallReport> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("thresholds must be non-empty and ascending".into()));
    }
    if gt.is_empty() {
        return Ok(RecallReport {
            thresholds: thresholds.to_vec(),
            recall: vec![1.0; thresholds.len()],
            n_gt: 0,
            n_pred: pred.len(),
            empty_gt: true,
        });
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(pred.len() * gt.len());
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let d = ((p.cx - g.cx).powi(2) + (p.cy - g.cy).powi(2)).sqrt();
            pairs.push((d, pi, gi));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_dist = vec![f64::INFINITY; gt.len()];
    let mut gt_matched = vec![false; gt.len()];
    for (d, pi, gi) in pairs {
        if pred_used[pi] || gt_matched[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_matched[gi] = true;
        gt_dist[gi] = d;
    }
    let recall = thresholds
        .iter()
        .map(|&t| gt_dist.iter().filter(|&&d| d < t).count() as f64 / gt.len() as f64)
        .collect();
    Ok(RecallReport {
        thresholds: thresholds.to_vec(),
        recall,
        n_gt: gt.len(),
        n_pred: pred.len(),
        empty_gt: false,
    })
}

/// Keeps the boxes whose paired velocity magnitude is at least `min_speed`
/// (or below, when `keep_slower`), supporting velocity-sliced recall tables.
pub fn filter_by_velocity(
    boxes: &[RotatedBox],
    speeds: &[f64],
    min_speed: f64,
    keep_slower: bool,
) -> Result<Vec<RotatedBox>> {
    if boxes.len() != speeds.len() {
        return Err(Error::ShapeMismatch("boxes and speeds lengths differ".into()));
    }
    Ok(boxes
        .iter()
        .zip(speeds)
        .filter(|(_, &s)| if keep_slower { s < min_speed } else { s >= min_speed })
        .map(|(b, _)| *b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(vals: &[f64]) -> Grid2<f64> {
        Grid2::from_vec(1, vals.len(), vals.to_vec()).unwrap()
    }

    fn all_mask(n: usize) -> Grid2<bool> {
        Grid2::new(1, n, true)
    }

    #[test]
    fn perfect_prediction_is_all_zero() {
        let g = grid(&[1.0, 4.0, 9.5, 30.0]);
        let r = depth_metrics(&g, &g, &all_mask(4)).unwrap();
        assert_eq!(r.silog, 0.0);
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!(r.sq_rel, 0.0);
        assert_eq!(r.log10, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.n_pixels, 4);
    }

    #[test]
    fn uniform_scaling_example() {
        let gt = grid(&[2.0, 5.0, 11.0]);
        let pred = gt.map(|v| 2.0 * v);
        let r = depth_metrics(&pred, &gt, &all_mask(3)).unwrap();
        assert_abs_diff_eq!(r.silog, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.abs_rel, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.log10, 2.0f64.log10(), epsilon = 1e-12);
    }

    #[test]
    fn constant_offset_example() {
        let gt = grid(&[4.0, 4.0, 4.0]);
        let pred = grid(&[5.0, 5.0, 5.0]);
        let r = depth_metrics(&pred, &gt, &all_mask(3)).unwrap();
        assert_abs_diff_eq!(r.rmse, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.abs_rel, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.sq_rel, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn silog_scale_invariance() {
        let gt = grid(&[3.0, 7.0, 19.0, 42.0]);
        let pred = grid(&[3.3, 6.2, 23.0, 40.0]);
        let base = depth_metrics(&pred, &gt, &all_mask(4)).unwrap().silog;
        for c in [0.1, 2.0, 37.5] {
            let scaled = pred.map(|v| c * v);
            let s = depth_metrics(&scaled, &gt, &all_mask(4)).unwrap().silog;
            assert_abs_diff_eq!(s, base, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_mask_and_nonpositive_rejected() {
        let g = grid(&[1.0, 2.0]);
        assert!(depth_metrics(&g, &g, &Grid2::new(1, 2, false)).is_err());
        let bad = grid(&[0.0, 2.0]);
        assert!(depth_metrics(&bad, &g, &all_mask(2)).is_err());
    }

    fn point(cx: f64, cy: f64) -> RotatedBox {
        RotatedBox { cx, cy, dx: 1.0, dy: 1.0, theta: 0.0, score: 0.5, class_id: 0 }
    }

    #[test]
    fn recall_examples() {
        let ths = [0.5, 1.0, 2.0, 4.0];
        let gt = vec![point(0.0, 0.0), point(10.0, 0.0)];

        let perfect = center_recall(&gt, &gt, &ths).unwrap();
        assert_eq!(perfect.recall, vec![1.0; 4]);

        let none = center_recall(&[], &gt, &ths).unwrap();
        assert_eq!(none.recall, vec![0.0; 4]);

        let offset = center_recall(&[point(1.5, 0.0)], &[point(0.0, 0.0)], &ths).unwrap();
        assert_eq!(offset.recall, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn recall_is_monotone_and_one_to_one() {
        let gt = vec![point(0.0, 0.0), point(1.0, 0.0)];
        // One prediction near both ground truths: it can only match one.
        let pred = vec![point(0.1, 0.0)];
        let r = center_recall(&pred, &gt, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert!(r.recall.windows(2).all(|w| w[0] <= w[1]));
        assert_abs_diff_eq!(r.recall[3], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_gt_convention() {
        let r = center_recall(&[point(0.0, 0.0)], &[], &[1.0, 2.0]).unwrap();
        assert!(r.empty_gt);
        assert_eq!(r.recall, vec![1.0, 1.0]);
    }

    #[test]
    fn velocity_filter_partitions() {
        let boxes = vec![point(0.0, 0.0), point(1.0, 0.0), point(2.0, 0.0)];
        let speeds = [0.2, 1.5, 3.0];
        let fast = filter_by_velocity(&boxes, &speeds, 1.0, false).unwrap();
        let slow = filter_by_velocity(&boxes, &speeds, 1.0, true).unwrap();
        assert_eq!(fast.len(), 2);
        assert_eq!(slow.len(), 1);
    }
}
