//! Per-pixel temporal-stereo depth refinement.
//!
//! The engine keeps a Gaussian search window (mu, sigma) per pixel and range
//! split, samples depth candidates inside it, scores them by warping into the
//! source frame and comparing features, and re-estimates (mu, sigma) from the
//! candidate probabilities. Repeating this walks mu toward the true depth
//! wherever the stereo signal exists while leaving it untouched where it does
//! not (static ego, occlusions, featureless regions).
//!
//! sigma is a variance in m^2: candidates span `mu +/- k*sqrt(sigma)` and the
//! emitted per-bin mass is `exp(-0.5*((d-mu)/sqrt(sigma))^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    bilinear_sample_into, bilinear_sample_scalar, warp_to_source, CameraIntrinsics,
    PixelDepthHypothesis, RigidTransform,
};
use crate::grid::{FeatureMap, Grid2, Grid3};
use crate::{Error, Result};

/// Probability spread below which a pixel's candidate scores are treated as
/// uninformative. Sits above the f32 rounding noise that bilinear sampling of
/// a constant feature map produces, and far below any usable stereo signal.
const UNIFORM_SPREAD_EPS: f64 = 1e-6;

/// A split carries usable stereo evidence only when its best candidate's
/// similarity reaches this fraction of the reference pixel's self-similarity.
/// A true correspondence scores close to the self-similarity; peaks far below
/// it are chance correlations, and updating or selecting on them would let
/// unmatched pixels random-walk away from the mono prior.
const MATCH_FLOOR: f64 = 0.6;

/// Hyperparameters of the stereo engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    /// Number of depth range splits R.
    pub num_splits: usize,
    /// Candidates per pixel N.
    pub candidates_per_pixel: usize,
    /// Candidate span factor k: candidates cover mu +/- k*sqrt(sigma).
    pub span_factor: f64,
    /// Refinement iterations.
    pub iterations: usize,
    /// Similarity temperature tau_s.
    pub tau_similarity: f64,
    /// Mono/stereo fusion weight temperature tau_w, meters.
    pub tau_weight: f64,
    /// Depth range lower bound, meters.
    pub d_min: f64,
    /// Depth range upper bound, meters.
    pub d_max: f64,
    /// Global depth bin count B.
    pub num_bins: usize,
    /// Variance floor, m^2.
    pub sigma_min: f64,
    /// Variance ceiling, m^2.
    pub sigma_max: f64,
    /// Largest allowed per-pixel sampling offset magnitude, pixels.
    pub offset_max: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            num_splits: 2,
            candidates_per_pixel: 8,
            span_factor: 2.0,
            iterations: 3,
            tau_similarity: 1.0,
            tau_weight: 1.0,
            d_min: 2.0,
            d_max: 58.0,
            num_bins: 224,
            sigma_min: 0.01,
            sigma_max: 100.0,
            offset_max: 8.0,
        }
    }
}

impl StereoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_splits < 1 {
            return Err(Error::InvalidConfig("num_splits must be >= 1".into()));
        }
        if self.candidates_per_pixel < 2 {
            return Err(Error::InvalidConfig("candidates_per_pixel must be >= 2".into()));
        }
        if !(self.tau_similarity > 0.0) || !(self.tau_weight > 0.0) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if !(self.d_min > 0.0) || !(self.d_max > self.d_min) {
            return Err(Error::InvalidConfig(format!(
                "depth range [{}, {}] must satisfy 0 < d_min < d_max",
                self.d_min, self.d_max
            )));
        }
        if self.num_bins < 2 {
            return Err(Error::InvalidConfig("num_bins must be >= 2".into()));
        }
        if !(self.sigma_min > 0.0) || !(self.sigma_max > self.sigma_min) {
            return Err(Error::InvalidConfig("need 0 < sigma_min < sigma_max".into()));
        }
        if !(self.span_factor > 0.0) {
            return Err(Error::InvalidConfig("span_factor must be positive".into()));
        }
        if !(self.offset_max >= 0.0) {
            return Err(Error::InvalidConfig("offset_max must be >= 0".into()));
        }
        Ok(())
    }

    /// Bounds of range split `r`; splits partition [d_min, d_max] equally.
    pub fn split_range(&self, r: usize) -> (f64, f64) {
        debug_assert!(r < self.num_splits);
        let w = (self.d_max - self.d_min) / self.num_splits as f64;
        (self.d_min + r as f64 * w, self.d_min + (r + 1) as f64 * w)
    }

    /// Index of the split containing depth `d` (clamped at range ends).
    pub fn split_of(&self, d: f64) -> usize {
        let w = (self.d_max - self.d_min) / self.num_splits as f64;
        let r = ((d - self.d_min) / w).floor();
        (r.max(0.0) as usize).min(self.num_splits - 1)
    }

    /// Centers of the B global depth bins.
    pub fn bin_centers(&self) -> Vec<f64> {
        let w = (self.d_max - self.d_min) / self.num_bins as f64;
        (0..self.num_bins).map(|i| self.d_min + (i as f64 + 0.5) * w).collect()
    }

    /// Width of one global depth bin, meters.
    pub fn bin_width(&self) -> f64 {
        (self.d_max - self.d_min) / self.num_bins as f64
    }
}

/// Per-pixel (mu, sigma) state of one range split.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthState {
    pub mu: Grid2<f64>,
    pub sigma: Grid2<f64>,
    pub split_index: usize,
}

impl DepthState {
    pub fn validate(&self, cfg: &StereoConfig) -> Result<()> {
        let (lo, hi) = cfg.split_range(self.split_index);
        for (m, s) in self.mu.as_slice().iter().zip(self.sigma.as_slice()) {
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::InvalidInput("non-finite depth state".into()));
            }
            if *m < lo - 1e-12 || *m > hi + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "mu {m} outside split [{lo}, {hi}]"
                )));
            }
            if *s < cfg.sigma_min - 1e-12 || *s > cfg.sigma_max + 1e-12 {
                return Err(Error::InvalidInput(format!("sigma {s} outside clamp range")));
            }
        }
        Ok(())
    }
}

/// Depth candidates with their scored probabilities and warp validity.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    /// H x W x N candidate depths, meters.
    pub depths: Grid3<f64>,
    /// H x W x N probabilities; zero on invalid candidates, uniform 1/N when
    /// the whole pixel is invalid.
    pub probs: Grid3<f64>,
    /// H x W x N warp/sample validity.
    pub valid: Grid3<bool>,
    /// Best raw similarity score per pixel (before normalization), minus
    /// infinity where no candidate is valid. Softmax discards the absolute
    /// scale, but the scale is what separates a true match from a lucky
    /// correlation, so range-split selection keys on it.
    pub peak_score: Grid2<f64>,
}

impl CandidateSet {
    /// True when at least one candidate of the pixel scored validly.
    pub fn pixel_valid(&self, y: usize, x: usize) -> bool {
        self.valid.pixel(y, x).iter().any(|&v| v)
    }
}

/// Candidate depths straight out of generation, before scoring.
#[derive(Debug, Clone)]
pub struct CandidateDepths {
    pub depths: Grid3<f64>,
    /// Pixels whose span collapsed to a single clamp point.
    pub degenerate: Grid2<bool>,
}

/// Per-pixel depth distribution over the shared global bins.
#[derive(Debug, Clone)]
pub struct DepthDistribution {
    pub bins: Vec<f64>,
    /// H x W x B probabilities, normalized per pixel.
    pub probs: Grid3<f64>,
}

/// Dense per-pixel sampling offsets applied to warped source coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub du: Grid2<f64>,
    pub dv: Grid2<f64>,
}

impl OffsetField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { du: Grid2::new(h, w, 0.0), dv: Grid2::new(h, w, 0.0) }
    }

    pub fn validate(&self, offset_max: f64) -> Result<()> {
        if !self.du.same_shape(&self.dv) {
            return Err(Error::ShapeMismatch("du/dv shapes differ".into()));
        }
        for (du, dv) in self.du.as_slice().iter().zip(self.dv.as_slice()) {
            if !du.is_finite() || !dv.is_finite() {
                return Err(Error::InvalidInput("non-finite offset".into()));
            }
            if du.abs() > offset_max || dv.abs() > offset_max {
                return Err(Error::InvalidInput(format!(
                    "offset ({du}, {dv}) exceeds offset_max {offset_max}"
                )));
            }
        }
        Ok(())
    }
}

/// Warp geometry between a reference camera and one source camera.
#[derive(Debug, Clone, Copy)]
pub struct StereoGeometry {
    pub k_ref: CameraIntrinsics,
    pub k_src: CameraIntrinsics,
    pub m_ref2src: RigidTransform,
}

impl StereoGeometry {
    /// Identity warp between two co-located cameras with equal intrinsics.
    pub fn identity(k: CameraIntrinsics) -> Self {
        Self { k_ref: k, k_src: k, m_ref2src: RigidTransform::identity() }
    }
}

/// Warp geometry from a reference camera model to a source camera model.
pub fn relative_geometry(
    reference: &crate::geometry::CameraModel,
    source: &crate::geometry::CameraModel,
) -> StereoGeometry {
    StereoGeometry {
        k_ref: reference.intrinsics,
        k_src: source.intrinsics,
        m_ref2src: crate::geometry::relative_transform(reference, source),
    }
}

/// Everything the engine needs from one source frame.
pub struct SourceView<'a> {
    pub features: &'a FeatureMap,
    pub geometry: StereoGeometry,
    pub offsets: &'a OffsetField,
    /// Source-frame mono depth, used by the fusion weight map.
    pub mono_mu: &'a Grid2<f64>,
}

/// The unnormalized Gaussian mass of Eq.-style emission: depth `d` against a
/// window centered at `mu` with variance `sigma` (m^2). Maximal (1.0) at
/// `d == mu`; `exp(-1/2)` at one standard deviation.
#[inline]
pub fn gaussian_mass(d: f64, mu: f64, sigma: f64) -> f64 {
    let t = (d - mu) / sigma.sqrt();
    (-0.5 * t * t).exp()
}

/// Splits [d_min, d_max] into R sub-ranges and initializes each split's state
/// from the mono prediction: mu is the globally clamped mono depth when it
/// falls inside the split, the split midpoint otherwise; sigma is the mono
/// variance clamped into [sigma_min, sigma_max].
pub fn init_states(
    mono_mu: &Grid2<f64>,
    mono_sigma: &Grid2<f64>,
    cfg: &StereoConfig,
) -> Result<Vec<DepthState>> {
    cfg.validate()?;
    if !mono_mu.same_shape(mono_sigma) {
        return Err(Error::ShapeMismatch("mono mu/sigma shapes differ".into()));
    }
    for (&m, &s) in mono_mu.as_slice().iter().zip(mono_sigma.as_slice()) {
        if !(m.is_finite() && m > 0.0) || !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "mono prediction must be finite and positive, got mu={m} sigma={s}"
            )));
        }
    }
    let mut states = Vec::with_capacity(cfg.num_splits);
    for r in 0..cfg.num_splits {
        let (lo, hi) = cfg.split_range(r);
        let mid = 0.5 * (lo + hi);
        let mu = mono_mu.map(|m| {
            let m = m.clamp(cfg.d_min, cfg.d_max);
            if (lo..=hi).contains(&m) {
                m
            } else {
                mid
            }
        });
        let sigma = mono_sigma.map(|s| s.clamp(cfg.sigma_min, cfg.sigma_max));
        states.push(DepthState { mu, sigma, split_index: r });
    }
    Ok(states)
}

/// Split that owns each pixel's mono prior (the split its clamped depth lands
/// in). Used to break ties when no split carries stereo evidence.
pub fn owner_splits(mono_mu: &Grid2<f64>, cfg: &StereoConfig) -> Grid2<u16> {
    mono_mu.map(|m| cfg.split_of(m.clamp(cfg.d_min, cfg.d_max)) as u16)
}

/// N equally spaced depths spanning the window `mu +/- k*sqrt(sigma)`
/// intersected with the split range. The half-span shrinks symmetrically at
/// the split borders so the candidate set stays centered on mu; a pixel whose
/// window collapses entirely yields N copies of the clamp point and a
/// degeneracy flag.
pub fn generate_candidates(state: &DepthState, cfg: &StereoConfig) -> CandidateDepths {
    let (lo, hi) = cfg.split_range(state.split_index);
    let h = state.mu.h();
    let w = state.mu.w();
    let n = cfg.candidates_per_pixel;
    let mut depths = Grid3::new(h, w, n, 0.0f64);
    let mut degenerate = Grid2::new(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let mu = state.mu.get(y, x);
            let half = (cfg.span_factor * state.sigma.get(y, x).sqrt())
                .min(mu - lo)
                .min(hi - mu);
            let row = depths.pixel_mut(y, x);
            if half > 0.0 {
                let step = 2.0 * half / (n - 1) as f64;
                for (i, d) in row.iter_mut().enumerate() {
                    *d = mu - half + i as f64 * step;
                }
            } else {
                let point = mu.clamp(lo, hi);
                row.fill(point);
                degenerate.set(y, x, true);
            }
        }
    }
    CandidateDepths { depths, degenerate }
}

fn check_feature_shapes(ref_feat: &FeatureMap, sources: &[SourceView<'_>]) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("at least one source view required".into()));
    }
    for s in sources {
        if s.features.channels != ref_feat.channels {
            return Err(Error::ShapeMismatch(format!(
                "channel mismatch: reference has {}, source has {}",
                ref_feat.channels, s.features.channels
            )));
        }
        if s.offsets.du.h() != ref_feat.height || s.offsets.du.w() != ref_feat.width {
            return Err(Error::ShapeMismatch("offset field shape differs from reference".into()));
        }
    }
    Ok(())
}

/// Scores candidates against several source views; per-candidate scores are
/// averaged over the sources in which the warp is valid, then softened into
/// per-pixel probabilities. Pixels with no valid candidate anywhere get
/// uniform probabilities and all-false validity.
pub fn score_candidates_multi(
    ref_feat: &FeatureMap,
    sources: &[SourceView<'_>],
    depths: &Grid3<f64>,
    cfg: &StereoConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    check_feature_shapes(ref_feat, sources)?;
    let (h, w, n) = (ref_feat.height, ref_feat.width, depths.n());
    if depths.h() != h || depths.w() != w {
        return Err(Error::ShapeMismatch("candidate grid shape differs from reference".into()));
    }
    for s in sources {
        s.offsets.validate(cfg.offset_max)?;
    }

    let c = ref_feat.channels;
    let inv_tau = 1.0 / cfg.tau_similarity;
    let mut probs = Grid3::new(h, w, n, 0.0f64);
    let mut valid = Grid3::new(h, w, n, false);
    let mut peak = Grid2::new(h, w, f64::NEG_INFINITY);

    probs
        .as_mut_slice()
        .par_chunks_mut(w * n)
        .zip(valid.as_mut_slice().par_chunks_mut(w * n))
        .zip(peak.as_mut_slice().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((prow, vrow), krow))| {
            let mut sample = vec![0.0f32; c];
            let mut scores = vec![0.0f64; n];
            let mut hits = vec![0u32; n];
            for x in 0..w {
                scores.fill(0.0);
                hits.fill(0);
                if ref_feat.is_valid(y, x) {
                    let refv = ref_feat.pixel(y, x);
                    let cand = depths.pixel(y, x);
                    for src in sources {
                        let du = src.offsets.du.get(y, x);
                        let dv = src.offsets.dv.get(y, x);
                        for (i, &d) in cand.iter().enumerate() {
                            let hyp = PixelDepthHypothesis { u: x as f64, v: y as f64, depth: d };
                            let Some((us, vs, _)) = warp_to_source(
                                &hyp,
                                &src.geometry.k_ref,
                                &src.geometry.k_src,
                                &src.geometry.m_ref2src,
                            ) else {
                                continue;
                            };
                            if !bilinear_sample_into(src.features, us + du, vs + dv, &mut sample) {
                                continue;
                            }
                            let mut dot = 0.0f64;
                            for ch in 0..c {
                                dot += refv[ch] as f64 * sample[ch] as f64;
                            }
                            scores[i] += dot * inv_tau;
                            hits[i] += 1;
                        }
                    }
                }
                let pr = &mut prow[x * n..(x + 1) * n];
                let vr = &mut vrow[x * n..(x + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for i in 0..n {
                    if hits[i] > 0 {
                        scores[i] /= hits[i] as f64;
                        vr[i] = true;
                        max = max.max(scores[i]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    pr.fill(1.0 / n as f64);
                    vr.fill(false);
                    continue;
                }
                krow[x] = max;
                let mut sum = 0.0f64;
                for i in 0..n {
                    if vr[i] {
                        pr[i] = (scores[i] - max).exp();
                        sum += pr[i];
                    }
                }
                for p in pr.iter_mut() {
                    *p /= sum;
                }
            }
        });

    Ok(CandidateSet { depths: depths.clone(), probs, valid, peak_score: peak })
}

/// Single-source candidate scoring: warp each candidate into the source frame
/// (plus the per-pixel sampling offset), bilinearly sample the source feature,
/// score by inner product with the reference feature, and normalize with a
/// softened exponential per pixel.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    ref_feat: &FeatureMap,
    src_feat: &FeatureMap,
    depths: &Grid3<f64>,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    m_ref2src: &RigidTransform,
    offsets: &OffsetField,
    cfg: &StereoConfig,
) -> Result<CandidateSet> {
    let mono = Grid2::new(ref_feat.height, ref_feat.width, 1.0);
    let view = SourceView {
        features: src_feat,
        geometry: StereoGeometry { k_ref: *k_ref, k_src: *k_src, m_ref2src: *m_ref2src },
        offsets,
        mono_mu: &mono,
    };
    score_candidates_multi(ref_feat, std::slice::from_ref(&view), depths, cfg)
}

/// Probability-weighted candidate mean per pixel; invalid pixels keep the
/// caller-supplied prior.
pub fn update_mu(cands: &CandidateSet, prior: &Grid2<f64>) -> Grid2<f64> {
    let (h, w, n) = (cands.depths.h(), cands.depths.w(), cands.depths.n());
    Grid2::from_fn(h, w, |y, x| {
        if !cands.pixel_valid(y, x) {
            return prior.get(y, x);
        }
        let d = cands.depths.pixel(y, x);
        let p = cands.probs.pixel(y, x);
        (0..n).map(|i| d[i] * p[i]).sum()
    })
}

/// Linear interpolation of the candidate probabilities at depth `mu`, clamped
/// to the end candidates outside the span.
fn prob_at_mu(cands: &CandidateSet, y: usize, x: usize, mu: f64) -> f64 {
    let d = cands.depths.pixel(y, x);
    let p = cands.probs.pixel(y, x);
    let n = d.len();
    if mu <= d[0] {
        return p[0];
    }
    if mu >= d[n - 1] {
        return p[n - 1];
    }
    for i in 0..n - 1 {
        if mu < d[i + 1] {
            let span = d[i + 1] - d[i];
            if span <= 0.0 {
                return p[i];
            }
            let t = (mu - d[i]) / span;
            return (1.0 - t) * p[i] + t * p[i + 1];
        }
    }
    p[n - 1]
}

/// Halves or widens the search window from the confidence of the updated
/// center: `sigma_new = sigma_old / (2 * P_mu)`, clamped into
/// [sigma_min, sigma_max]. Invalid pixels keep sigma_old.
pub fn update_sigma(
    state: &DepthState,
    cands: &CandidateSet,
    mu_new: &Grid2<f64>,
    cfg: &StereoConfig,
) -> Grid2<f64> {
    Grid2::from_fn(state.sigma.h(), state.sigma.w(), |y, x| {
        let old = state.sigma.get(y, x);
        if !cands.pixel_valid(y, x) {
            return old;
        }
        let pmu = prob_at_mu(cands, y, x, mu_new.get(y, x));
        if pmu <= 0.0 {
            return cfg.sigma_max;
        }
        (old / (2.0 * pmu)).clamp(cfg.sigma_min, cfg.sigma_max)
    })
}

/// Outcome of the iterative refinement: the refined states plus the evidence
/// masks needed to emit a final distribution.
pub struct StereoOutcome {
    pub states: Vec<DepthState>,
    /// P_mu per split from the last scoring round; `None` when iterations = 0.
    pub confidence: Option<Vec<Grid2<f64>>>,
    /// Best raw similarity per split from the last scoring round.
    pub peak_score: Option<Vec<Grid2<f64>>>,
    /// Second moment of the final candidate probabilities around the refined
    /// mu, per split. The state sigma steers the search window; this measures
    /// how concentrated the evidence actually ended up, which is what the
    /// emitted belief should carry.
    pub posterior_var: Option<Vec<Grid2<f64>>>,
    /// Pixels whose candidate scores carried information, per split.
    pub informative: Option<Vec<Grid2<bool>>>,
    /// Pixels with at least one valid candidate in some split (last round).
    pub matchable: Grid2<bool>,
    /// Split owning each pixel's mono prior.
    pub owner: Grid2<u16>,
}

/// Reference self-similarity per pixel on the similarity-score scale, the
/// yardstick [`MATCH_FLOOR`] is applied against.
fn self_similarity(feat: &FeatureMap, cfg: &StereoConfig) -> Grid2<f64> {
    let inv_tau = 1.0 / cfg.tau_similarity;
    Grid2::from_fn(feat.height, feat.width, |y, x| {
        feat.pixel(y, x).iter().map(|&v| v as f64 * v as f64).sum::<f64>() * inv_tau
    })
}

/// Pixels whose scores both vary across candidates and reach the match floor.
fn informative_mask(cands: &CandidateSet, self_sim: &Grid2<f64>) -> Grid2<bool> {
    let (h, w) = (cands.probs.h(), cands.probs.w());
    Grid2::from_fn(h, w, |y, x| {
        if !cands.pixel_valid(y, x) {
            return false;
        }
        if cands.peak_score.get(y, x) < MATCH_FLOOR * self_sim.get(y, x) {
            return false;
        }
        let p = cands.probs.pixel(y, x);
        let v = cands.valid.pixel(y, x);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..p.len() {
            if v[i] {
                lo = lo.min(p[i]);
                hi = hi.max(p[i]);
            }
        }
        hi - lo > UNIFORM_SPREAD_EPS
    })
}

/// Runs generate -> score -> update_mu -> update_sigma per split,
/// `cfg.iterations` times, against several source views at once.
///
/// Pixels whose candidates score exactly uniformly carry no stereo evidence
/// and keep their (mu, sigma) frozen; this is what protects the mono prior in
/// the zero-parallax (static ego) regime, where every candidate warps to the
/// same source sample by construction.
pub fn iterate_multi(
    ref_feat: &FeatureMap,
    sources: &[SourceView<'_>],
    states: Vec<DepthState>,
    owner: Grid2<u16>,
    cfg: &StereoConfig,
) -> Result<StereoOutcome> {
    cfg.validate()?;
    check_feature_shapes(ref_feat, sources)?;
    if states.len() != cfg.num_splits {
        return Err(Error::InvalidConfig(format!(
            "expected {} states, got {}",
            cfg.num_splits,
            states.len()
        )));
    }
    let (h, w) = (ref_feat.height, ref_feat.width);
    let mut states = states;
    let mut confidence = None;
    let mut peak_score = None;
    let mut informative = None;
    let mut matchable = Grid2::new(h, w, true);

    let self_sim = self_similarity(ref_feat, cfg);
    let mut posterior_var = None;
    for _ in 0..cfg.iterations {
        let mut conf_round = Vec::with_capacity(states.len());
        let mut peak_round = Vec::with_capacity(states.len());
        let mut post_round = Vec::with_capacity(states.len());
        let mut info_round = Vec::with_capacity(states.len());
        let mut match_round = Grid2::new(h, w, false);
        for state in states.iter_mut() {
            let cand = generate_candidates(state, cfg);
            let scored = score_candidates_multi(ref_feat, sources, &cand.depths, cfg)?;
            let info = informative_mask(&scored, &self_sim);
            let mut mu_new = update_mu(&scored, &state.mu);
            let mut sigma_new = update_sigma(state, &scored, &mu_new, cfg);
            for y in 0..h {
                for x in 0..w {
                    if !info.get(y, x) {
                        mu_new.set(y, x, state.mu.get(y, x));
                        sigma_new.set(y, x, state.sigma.get(y, x));
                    }
                    if scored.pixel_valid(y, x) {
                        match_round.set(y, x, true);
                    }
                }
            }
            let conf = Grid2::from_fn(h, w, |y, x| prob_at_mu(&scored, y, x, mu_new.get(y, x)));
            let post = Grid2::from_fn(h, w, |y, x| {
                let mu = mu_new.get(y, x);
                let d = scored.depths.pixel(y, x);
                let p = scored.probs.pixel(y, x);
                let var: f64 = (0..d.len()).map(|i| p[i] * (d[i] - mu) * (d[i] - mu)).sum();
                var.clamp(cfg.sigma_min, cfg.sigma_max)
            });
            state.mu = mu_new;
            state.sigma = sigma_new;
            conf_round.push(conf);
            peak_round.push(scored.peak_score);
            post_round.push(post);
            info_round.push(info);
        }
        confidence = Some(conf_round);
        peak_score = Some(peak_round);
        posterior_var = Some(post_round);
        informative = Some(info_round);
        matchable = match_round;
    }

    Ok(StereoOutcome {
        states,
        confidence,
        peak_score,
        posterior_var,
        informative,
        matchable,
        owner,
    })
}

/// Single-source refinement, the per-group entry point.
#[allow(clippy::too_many_arguments)]
pub fn iterate(
    ref_feat: &FeatureMap,
    src_feat: &FeatureMap,
    states: Vec<DepthState>,
    owner: Grid2<u16>,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    m_ref2src: &RigidTransform,
    offsets: &OffsetField,
    cfg: &StereoConfig,
) -> Result<StereoOutcome> {
    let mono = Grid2::new(ref_feat.height, ref_feat.width, 1.0);
    let view = SourceView {
        features: src_feat,
        geometry: StereoGeometry { k_ref: *k_ref, k_src: *k_src, m_ref2src: *m_ref2src },
        offsets,
        mono_mu: &mono,
    };
    iterate_multi(ref_feat, std::slice::from_ref(&view), states, owner, cfg)
}

/// Which split a pixel's emitted distribution comes from.
enum Selection {
    /// No stereo evidence at all: emit the uniform distribution.
    Unmatchable,
    /// No informative scores (or no iterations ran): emit the owner split's
    /// prior over the full bin range.
    Prior(usize),
    /// Stereo evidence: emit the winning split restricted to its bins.
    Split(usize),
}

impl StereoOutcome {
    fn select(&self, y: usize, x: usize) -> Selection {
        let owner = self.owner.get(y, x) as usize;
        let (Some(peak), Some(info)) = (&self.peak_score, &self.informative) else {
            return Selection::Prior(owner);
        };
        if !self.matchable.get(y, x) {
            return Selection::Unmatchable;
        }
        if !info.iter().any(|g| g.get(y, x)) {
            return Selection::Prior(owner);
        }
        // Among the splits carrying real evidence, the one whose best
        // candidate matched the source hardest wins; the owner split takes
        // ties.
        let mut best: Option<(usize, f64)> = None;
        if info[owner].get(y, x) {
            best = Some((owner, peak[owner].get(y, x)));
        }
        for (r, g) in peak.iter().enumerate() {
            if r == owner || !info[r].get(y, x) {
                continue;
            }
            let v = g.get(y, x);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((r, v));
            }
        }
        match best {
            Some((r, _)) => Selection::Split(r),
            None => Selection::Prior(owner),
        }
    }

    /// The per-pixel depth center of the emitting split (the refined mu where
    /// stereo evidence exists, the mono prior otherwise).
    pub fn selected_mu(&self) -> Grid2<f64> {
        let h = self.states[0].mu.h();
        let w = self.states[0].mu.w();
        Grid2::from_fn(h, w, |y, x| match self.select(y, x) {
            Selection::Unmatchable | Selection::Prior(_) => {
                self.states[self.owner.get(y, x) as usize].mu.get(y, x)
            }
            Selection::Split(r) => self.states[r].mu.get(y, x),
        })
    }

    /// Emits the stereo depth distribution. Pixels backed by stereo evidence
    /// get the winning split's Gaussian over that split's bins; pixels with no
    /// information fall back to the prior Gaussian over the full range, and
    /// pixels with no valid candidate at all contribute uniform mass (fusion
    /// then falls back to mono via the weight map).
    pub fn emit_distribution(&self, cfg: &StereoConfig) -> DepthDistribution {
        let bins = cfg.bin_centers();
        let bin_split: Vec<usize> = bins.iter().map(|&d| cfg.split_of(d)).collect();
        let h = self.states[0].mu.h();
        let w = self.states[0].mu.w();
        let b = bins.len();
        let mut probs = Grid3::new(h, w, b, 0.0f64);
        for y in 0..h {
            for x in 0..w {
                let row = probs.pixel_mut(y, x);
                match self.select(y, x) {
                    Selection::Unmatchable => row.fill(1.0 / b as f64),
                    Selection::Prior(r) => {
                        let mu = self.states[r].mu.get(y, x);
                        let sg = self.states[r].sigma.get(y, x);
                        for (i, &d) in bins.iter().enumerate() {
                            row[i] = gaussian_mass(d, mu, sg);
                        }
                        normalize_row(row);
                    }
                    Selection::Split(r) => {
                        let mu = self.states[r].mu.get(y, x);
                        // Emit the measured evidence concentration, floored at
                        // one bin so the mass interpolates between neighbors.
                        let floor = cfg.bin_width() * cfg.bin_width();
                        let sg = match &self.posterior_var {
                            Some(post) => post[r].get(y, x).max(floor),
                            None => self.states[r].sigma.get(y, x),
                        };
                        for (i, &d) in bins.iter().enumerate() {
                            row[i] = if bin_split[i] == r { gaussian_mass(d, mu, sg) } else { 0.0 };
                        }
                        normalize_row(row);
                    }
                }
            }
        }
        DepthDistribution { bins, probs }
    }
}

fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    } else {
        row.fill(1.0 / row.len() as f64);
    }
}

/// Literal per-split emission: every global bin receives the Gaussian mass of
/// the split it falls in, then each pixel is normalized jointly over all bins.
/// The production pipeline uses [`StereoOutcome::emit_distribution`], which
/// additionally weighs in the per-split evidence.
pub fn emit_stereo_distribution(states: &[DepthState], cfg: &StereoConfig) -> DepthDistribution {
    let bins = cfg.bin_centers();
    let bin_split: Vec<usize> = bins.iter().map(|&d| cfg.split_of(d)).collect();
    let h = states[0].mu.h();
    let w = states[0].mu.w();
    let b = bins.len();
    let mut probs = Grid3::new(h, w, b, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let row = probs.pixel_mut(y, x);
            for (i, &d) in bins.iter().enumerate() {
                let s = &states[bin_split[i]];
                row[i] = gaussian_mass(d, s.mu.get(y, x), s.sigma.get(y, x));
            }
            normalize_row(row);
        }
    }
    DepthDistribution { bins, probs }
}

/// Per-pixel Gaussian distribution over the full bin range, the mono-depth
/// counterpart of the stereo emission.
pub fn gaussian_distribution(
    mu: &Grid2<f64>,
    sigma: &Grid2<f64>,
    cfg: &StereoConfig,
) -> DepthDistribution {
    let bins = cfg.bin_centers();
    let h = mu.h();
    let w = mu.w();
    let b = bins.len();
    let mut probs = Grid3::new(h, w, b, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let m = mu.get(y, x);
            let s = sigma.get(y, x).max(1e-12);
            let row = probs.pixel_mut(y, x);
            for (i, &d) in bins.iter().enumerate() {
                row[i] = gaussian_mass(d, m, s);
            }
            normalize_row(row);
        }
    }
    DepthDistribution { bins, probs }
}

/// Blends mono and weighted stereo mass per pixel and renormalizes:
/// `fused = normalize(mono + weight * stereo)`.
pub fn fuse_mono_stereo(
    mono: &DepthDistribution,
    stereo: &DepthDistribution,
    weight: &Grid2<f64>,
) -> Result<DepthDistribution> {
    if mono.bins != stereo.bins
        || mono.probs.h() != stereo.probs.h()
        || mono.probs.w() != stereo.probs.w()
    {
        return Err(Error::ShapeMismatch("mono/stereo distributions differ in shape".into()));
    }
    if weight.h() != mono.probs.h() || weight.w() != mono.probs.w() {
        return Err(Error::ShapeMismatch("weight map shape differs".into()));
    }
    if weight.as_slice().iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::InvalidInput("weights must lie in [0, 1]".into()));
    }
    let (h, w, b) = (mono.probs.h(), mono.probs.w(), mono.probs.n());
    let mut probs = Grid3::new(h, w, b, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let g = weight.get(y, x);
            let m = mono.probs.pixel(y, x);
            let s = stereo.probs.pixel(y, x);
            let row = probs.pixel_mut(y, x);
            for i in 0..b {
                row[i] = m[i] + g * s[i];
            }
            normalize_row(row);
        }
    }
    Ok(DepthDistribution { bins: mono.bins.clone(), probs })
}

/// Consistency weight map gating the stereo distribution: each reference pixel
/// is warped into the source at its final depth estimate, the source mono
/// depth is sampled there, and the weight decays exponentially with the depth
/// residual. Invalid warps and out-of-bounds samples get weight zero.
pub fn compute_weight_map(
    mu_final: &Grid2<f64>,
    mono_src: &Grid2<f64>,
    geom: &StereoGeometry,
    cfg: &StereoConfig,
) -> Grid2<f64> {
    Grid2::from_fn(mu_final.h(), mu_final.w(), |y, x| {
        let hyp = PixelDepthHypothesis { u: x as f64, v: y as f64, depth: mu_final.get(y, x) };
        let Some((us, vs, z_expected)) = warp_to_source(&hyp, &geom.k_ref, &geom.k_src, &geom.m_ref2src)
        else {
            return 0.0;
        };
        let Some(sampled) = bilinear_sample_scalar(mono_src, us, vs) else {
            return 0.0;
        };
        (-(z_expected - sampled).abs() / cfg.tau_weight).exp()
    })
}

/// Per-pixel mean depth of a distribution.
pub fn expected_depth(dist: &DepthDistribution) -> Grid2<f64> {
    let b = dist.bins.len();
    Grid2::from_fn(dist.probs.h(), dist.probs.w(), |y, x| {
        let p = dist.probs.pixel(y, x);
        (0..b).map(|i| dist.bins[i] * p[i]).sum()
    })
}

/// Full mono+stereo pipeline for one reference frame against its sources.
pub struct StereoPipelineOutput {
    pub outcome: StereoOutcome,
    pub mono: DepthDistribution,
    pub stereo: DepthDistribution,
    pub weight: Grid2<f64>,
    pub fused: DepthDistribution,
    pub mu_final: Grid2<f64>,
}

/// Initializes from the mono prior, refines against the sources, emits the
/// stereo distribution, and fuses it with the mono distribution under the
/// consistency weight map (averaged over sources).
pub fn stereo_pipeline(
    ref_feat: &FeatureMap,
    mono_mu: &Grid2<f64>,
    mono_sigma: &Grid2<f64>,
    sources: &[SourceView<'_>],
    cfg: &StereoConfig,
) -> Result<StereoPipelineOutput> {
    let states = init_states(mono_mu, mono_sigma, cfg)?;
    let owner = owner_splits(mono_mu, cfg);
    let outcome = iterate_multi(ref_feat, sources, states, owner, cfg)?;
    let stereo = outcome.emit_distribution(cfg);
    let mono = gaussian_distribution(mono_mu, mono_sigma, cfg);
    let mu_final = outcome.selected_mu();

    // The best-visible source vouches for a pixel: sources whose view the
    // pixel has left contribute weight zero and must not drag the gate down.
    let (h, w) = (mu_final.h(), mu_final.w());
    let mut weight = Grid2::new(h, w, 0.0f64);
    for src in sources {
        let per_src = compute_weight_map(&mu_final, src.mono_mu, &src.geometry, cfg);
        for (acc, v) in weight.as_mut_slice().iter_mut().zip(per_src.as_slice()) {
            *acc = acc.max(*v);
        }
    }

    let fused = fuse_mono_stereo(&mono, &stereo, &weight)?;
    Ok(StereoPipelineOutput { outcome, mono, stereo, weight, fused, mu_final })
}
