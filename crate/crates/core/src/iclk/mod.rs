//! Coarse-to-fine six-DoF inverse compositional Lucas-Kanade alignment with
//! Levenberg-Marquardt damping.
//!
//! The estimated transform `T` maps query-camera coordinates into the
//! reference camera frame. A reference point `p` is observed in the query
//! image at `π(T⁻¹·p)`. Jacobians are evaluated once on the reference for the
//! left increment `exp(Δξ)·p`, and each solved increment is folded into the
//! estimate as `T ← exp(Δξ)·T`.

mod features;
mod solver;
mod weights;

use std::path::PathBuf;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use features::{
    build_depth_pyramid, build_pyramid, color_normalize, color_normalize_masked, encode_features, DepthPyramid,
    FeaturePyramid, PYRAMID_LEVELS,
};
pub use solver::{lm_step, NormalEquations};
pub use weights::{huber_weights, robust_weights, WeightPolicy, WeightPyramid, HUBER_DEFAULT, MAD_SCALE};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::raster::{DepthMap, FloatRaster, Image8};
use crate::se3::PoseSE3;

/// Points closer than this to the query camera plane are treated as behind it.
const MIN_DEPTH: f64 = 1e-6;
const PIXEL_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    /// Smoothed intensity plus x/y gradients.
    Handcrafted,
    /// Precomputed `FEAT` pyramids for the reference and the query image.
    Files { reference: PathBuf, query: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    /// Total iteration budget across all levels.
    pub max_iterations: usize,
    pub lambda: f64,
    /// A level stops once `‖Δξ‖` falls below this.
    pub step_tolerance: f64,
    /// The result is flagged converged when the last finest-level step is
    /// below this norm or the finest level stopped on a step that raised
    /// the energy.
    pub converged_tolerance: f64,
    pub weighting: WeightPolicy,
    pub encoder: Encoder,
    /// Reference pixels closer than this to the border are ignored.
    pub border_margin: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            max_iterations: 20,
            lambda: 1e-6,
            step_tolerance: 1e-8,
            converged_tolerance: 1e-3,
            weighting: WeightPolicy::Uniform,
            encoder: Encoder::Handcrafted,
            border_margin: 2,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("iteration budget must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("damping must be >= 0, got {}", self.lambda)));
        }
        if !(self.step_tolerance >= 0.0) || !(self.converged_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be >= 0".into()));
        }
        if let WeightPolicy::Huber { c } = self.weighting {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("Huber threshold must be > 0, got {c}")));
            }
        }
        if self.border_margin < 1 {
            return Err(Error::InvalidArgument("border margin must be at least 1 pixel".into()));
        }
        Ok(())
    }

    /// Iterations per level, index 0 = finest; the remainder of an uneven
    /// split goes to the coarsest levels.
    pub fn level_budget(&self) -> [usize; PYRAMID_LEVELS] {
        let base = self.max_iterations / PYRAMID_LEVELS;
        let extra = self.max_iterations % PYRAMID_LEVELS;
        std::array::from_fn(|k| base + usize::from(PYRAMID_LEVELS - 1 - k < extra))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub level: usize,
    pub iteration: usize,
    /// `Σ w r² / rows` before the step.
    pub energy: f64,
    pub step_norm: f64,
    /// False when the level stopped on a degenerate system or the step
    /// raised the energy and was reverted.
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Estimated `T^{C_ref}_{C_1}`.
    pub pose: PoseSE3,
    pub trace: Vec<TraceEntry>,
    /// See [`AlignConfig::converged_tolerance`].
    pub converged: bool,
    /// Valid reference pixels at the finest level.
    pub valid_pixels: usize,
}

/// Precomputed reference data for one pyramid level.
#[derive(Clone, Debug)]
pub struct ReferenceLevel {
    pub cam: CameraModel,
    pub channels: usize,
    /// Raster index `y*width + x` of every usable reference pixel.
    pub pixels: Vec<usize>,
    /// Back-projected reference points, one per pixel.
    pub points: Vec<Vector3<f64>>,
    /// Reference feature values, `channels` per pixel.
    pub values: Vec<f32>,
    /// Jacobian rows, `channels` per pixel.
    pub jacobians: Vec<[f64; 6]>,
}

impl ReferenceLevel {
    pub fn rows(&self) -> usize {
        self.values.len()
    }
}

/// Jacobian of a feature value with image gradient `grad` at the projection
/// of camera point `p`, with respect to the twist `(rho | phi)` of the left
/// increment `exp(ξ)·p`.
#[inline]
pub fn jacobian_row(grad: [f64; 2], p: &Vector3<f64>, fx: f64, fy: f64) -> [f64; 6] {
    let iz = 1.0 / p.z;
    let gx = grad[0] * fx * iz;
    let gy = grad[1] * fy * iz;
    let a = Vector3::new(gx, gy, -(gx * p.x + gy * p.y) * iz);
    let rot = p.cross(&a);
    [a.x, a.y, a.z, rot.x, rot.y, rot.z]
}

/// Central-difference gradient of channel `c` at an interior pixel.
#[inline]
fn gradient(f: &FloatRaster, x: usize, y: usize, c: usize) -> [f64; 2] {
    [
        0.5 * (f.at(x + 1, y, c) as f64 - f.at(x - 1, y, c) as f64),
        0.5 * (f.at(x, y + 1, c) as f64 - f.at(x, y - 1, c) as f64),
    ]
}

/// Builds Jacobian rows for every valid reference pixel at every level.
/// `cam` is the finest-level camera; its distortion is ignored.
pub fn precompute_reference(
    features: &FeaturePyramid,
    depth: &DepthPyramid,
    cam: &CameraModel,
    border_margin: usize,
) -> Result<Vec<ReferenceLevel>> {
    features.check_dimensions(cam.width, cam.height)?;
    if depth.levels.len() != PYRAMID_LEVELS {
        return Err(Error::Dimension("depth pyramid level count mismatch".into()));
    }
    let margin = border_margin.max(1);
    let channels = features.channels();
    let mut out = Vec::with_capacity(PYRAMID_LEVELS);
    for (k, (f, d)) in features.levels.iter().zip(&depth.levels).enumerate() {
        if d.width != f.width || d.height != f.height {
            return Err(Error::Dimension(format!("depth level {k} does not match features")));
        }
        let lcam = cam.level(k).undistorted();
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        let mut values = Vec::new();
        let mut jacobians = Vec::new();
        if f.width > 2 * margin && f.height > 2 * margin {
            for y in margin..f.height - margin {
                for x in margin..f.width - margin {
                    if !d.is_valid(x, y) {
                        continue;
                    }
                    let p = lcam.unproject_pinhole(x as f64, y as f64, d.get(x, y) as f64);
                    pixels.push(y * f.width + x);
                    points.push(p);
                    for c in 0..channels {
                        values.push(f.at(x, y, c));
                        jacobians.push(jacobian_row(gradient(f, x, y, c), &p, lcam.fx, lcam.fy));
                    }
                }
            }
        }
        if values.len() < 6 * channels.max(1) {
            return Err(Error::TooFewRows {
                level: k,
                rows: values.len(),
                required: 6 * channels.max(1),
            });
        }
        out.push(ReferenceLevel {
            cam: lcam,
            channels,
            pixels,
            points,
            values,
            jacobians,
        });
    }
    Ok(out)
}

/// Samples `query` at the projection of `T⁻¹·p` for every valid pixel of
/// `ref_depth`. Invalid output pixels are zero with a false mask.
pub fn warp(query: &FloatRaster, t: &PoseSE3, ref_depth: &DepthMap, cam: &CameraModel) -> (FloatRaster, Vec<bool>) {
    let (w, h) = (ref_depth.width, ref_depth.height);
    let c = query.channels;
    let inv = t.inverse();
    let mut out = FloatRaster::new(w, h, c);
    let mut mask = vec![false; w * h];
    out.data
        .par_chunks_mut(w * c)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mrow))| {
            for x in 0..w {
                if !ref_depth.is_valid(x, y) {
                    continue;
                }
                let p = cam.unproject_pinhole(x as f64, y as f64, ref_depth.get(x, y) as f64);
                if let Some((u, v)) = project_into(&inv.transform_point(&p), cam, query) {
                    query.sample_bilinear(u, v, &mut row[x * c..(x + 1) * c]);
                    mrow[x] = true;
                }
            }
        });
    (out, mask)
}

#[inline]
fn project_into(p: &Vector3<f64>, cam: &CameraModel, raster: &FloatRaster) -> Option<(f64, f64)> {
    if p.z <= MIN_DEPTH {
        return None;
    }
    let u = cam.fx * p.x / p.z + cam.cx;
    let v = cam.fy * p.y / p.z + cam.cy;
    (u >= 0.0 && v >= 0.0 && u <= (raster.width - 1) as f64 && v <= (raster.height - 1) as f64).then_some((u, v))
}

/// Residual rows `F_query(π(T⁻¹p)) − F_ref` for one level; rows of pixels
/// that leave the query image get `valid = false`.
fn level_residuals(level: &ReferenceLevel, query: &FloatRaster, t: &PoseSE3) -> (Vec<f64>, Vec<bool>) {
    let c = level.channels;
    let inv = t.inverse();
    let mut residuals = vec![0.0; level.rows()];
    let mut valid = vec![false; level.rows()];
    residuals
        .par_chunks_mut(PIXEL_CHUNK * c)
        .zip(valid.par_chunks_mut(PIXEL_CHUNK * c))
        .enumerate()
        .for_each(|(chunk, (res, ok))| {
            let mut sample = vec![0.0f32; c];
            let first = chunk * PIXEL_CHUNK;
            for i in 0..res.len() / c {
                let p = inv.transform_point(&level.points[first + i]);
                if let Some((u, v)) = project_into(&p, &level.cam, query) {
                    query.sample_bilinear(u, v, &mut sample);
                    for k in 0..c {
                        res[i * c + k] = sample[k] as f64 - level.values[(first + i) * c + k] as f64;
                        ok[i * c + k] = true;
                    }
                }
            }
        });
    (residuals, valid)
}

fn row_weights(
    residuals: &[f64],
    valid: &[bool],
    policy: &WeightPolicy,
    external: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let mut w = vec![0.0; residuals.len()];
    match (policy, external) {
        (WeightPolicy::External(_), Some(ext)) => {
            for (i, wi) in w.iter_mut().enumerate() {
                if valid[i] {
                    *wi = ext[i];
                }
            }
        }
        _ => {
            let idx: Vec<usize> = (0..residuals.len()).filter(|i| valid[*i]).collect();
            let r: Vec<f64> = idx.iter().map(|i| residuals[*i]).collect();
            let rw = robust_weights(&r, policy)?;
            for (i, x) in idx.into_iter().zip(rw) {
                w[i] = x;
            }
        }
    }
    if w.iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(w)
}

/// Expands per-pixel weight rasters into per-row weights for each level.
fn external_row_weights(weights: &WeightPyramid, reference: &[ReferenceLevel]) -> Vec<Vec<f64>> {
    reference
        .iter()
        .zip(&weights.levels)
        .map(|(level, raster)| {
            level
                .pixels
                .iter()
                .flat_map(|&i| std::iter::repeat_n(raster.data[i] as f64, level.channels))
                .collect()
        })
        .collect()
}

/// Aligns `query_image` to the reference rendering `(ref_image, ref_depth)`
/// starting from `init`. Images are assumed rectified: the pinhole part of
/// `cam` is used at every level.
pub fn align(
    ref_image: &Image8,
    ref_depth: &DepthMap,
    query_image: &Image8,
    cam: &CameraModel,
    init: &PoseSE3,
    config: &AlignConfig,
) -> Result<AlignmentResult> {
    config.validate()?;
    cam.validate()?;
    for (name, w, h) in [
        ("reference image", ref_image.width, ref_image.height),
        ("reference depth", ref_depth.width, ref_depth.height),
        ("query image", query_image.width, query_image.height),
    ] {
        if (w, h) != (cam.width, cam.height) {
            return Err(Error::Dimension(format!(
                "{name} is {w}x{h}, camera is {}x{}",
                cam.width, cam.height
            )));
        }
    }
    if !init.is_finite() {
        return Err(Error::InvalidArgument("initial pose is not finite".into()));
    }

    let (ref_features, query_features) = match &config.encoder {
        Encoder::Handcrafted => {
            let mask: Vec<bool> = ref_depth.data.iter().map(|d| d.is_finite() && *d > 0.0).collect();
            let r = color_normalize_masked(ref_image, Some(&mask));
            let q = color_normalize(query_image);
            if r.data.iter().all(|v| *v == 0.0) || q.data.iter().all(|v| *v == 0.0) {
                return Ok(degenerate_result(init, 0));
            }
            (encode_features(&r)?, encode_features(&q)?)
        }
        Encoder::Files { reference, query } => {
            let r = FeaturePyramid::load(reference)?;
            let q = FeaturePyramid::load(query)?;
            if r.channels() != q.channels() {
                return Err(Error::Dimension("reference and query feature channel counts differ".into()));
            }
            (r, q)
        }
    };
    query_features.check_dimensions(cam.width, cam.height)?;
    let depth = build_depth_pyramid(ref_depth, PYRAMID_LEVELS)?;
    let external = match &config.weighting {
        WeightPolicy::External(path) => {
            let w = WeightPyramid::load(path)?;
            w.check_dimensions(cam.width, cam.height)?;
            Some(w)
        }
        _ => None,
    };
    align_features(&ref_features, &depth, &query_features, cam, init, config, external.as_ref())
}

fn degenerate_result(init: &PoseSE3, valid_pixels: usize) -> AlignmentResult {
    AlignmentResult {
        pose: *init,
        trace: vec![TraceEntry {
            level: PYRAMID_LEVELS - 1,
            iteration: 0,
            energy: f64::NAN,
            step_norm: 0.0,
            accepted: false,
        }],
        converged: false,
        valid_pixels,
    }
}

/// One damped Gauss-Newton increment at `pose`; returns the energy before
/// the step and the increment.
fn solve_increment(
    level: &ReferenceLevel,
    query: &FloatRaster,
    pose: &PoseSE3,
    config: &AlignConfig,
    external: Option<&[f64]>,
) -> Result<(f64, crate::se3::TwistSE3)> {
    let (residuals, valid) = level_residuals(level, query, pose);
    let w = row_weights(&residuals, &valid, &config.weighting, external)?;
    let ne = NormalEquations::accumulate(&level.jacobians, &residuals, &w);
    let required = 6 * level.channels;
    if ne.rows < required {
        return Err(Error::Degenerate(format!("{} usable rows, need {required}", ne.rows)));
    }
    let energy = ne.weighted_sq / ne.rows as f64;
    Ok((energy, lm_step(&ne, config.lambda)?))
}

/// Alignment on precomputed feature and depth pyramids. Levels run
/// coarsest first; a level ends when its budget is spent, the step norm
/// drops below the step tolerance, the system degenerates, or the energy
/// rises, in which case the last step is reverted.
pub fn align_features(
    ref_features: &FeaturePyramid,
    ref_depth: &DepthPyramid,
    query_features: &FeaturePyramid,
    cam: &CameraModel,
    init: &PoseSE3,
    config: &AlignConfig,
    external: Option<&WeightPyramid>,
) -> Result<AlignmentResult> {
    config.validate()?;
    if matches!(config.weighting, WeightPolicy::External(_)) && external.is_none() {
        return Err(Error::InvalidArgument("external weighting needs a weight pyramid".into()));
    }
    let reference = match precompute_reference(ref_features, ref_depth, cam, config.border_margin) {
        Ok(r) => r,
        Err(Error::TooFewRows { .. }) => return Ok(degenerate_result(init, 0)),
        Err(e) => return Err(e),
    };
    let valid_pixels = reference[0].pixels.len();
    let ext_rows = external.map(|w| external_row_weights(w, &reference));
    let budget = config.level_budget();

    let mut pose = *init;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut any_step = false;
    let mut last_level0_step: Option<f64> = None;
    let mut level0_stalled = false;
    for k in (0..PYRAMID_LEVELS).rev() {
        let level = &reference[k];
        let query = &query_features.levels[k];
        // Energy and pose before the most recent step of this level.
        let mut previous: Option<(f64, PoseSE3)> = None;
        for it in 0..budget[k] {
            let outcome = solve_increment(level, query, &pose, config, ext_rows.as_ref().map(|e| &e[k][..]));
            match outcome {
                Ok((energy, _)) if previous.is_some_and(|(e, _)| energy > e) => {
                    let (_, before) = previous.expect("checked above");
                    pose = before;
                    if let Some(last) = trace.last_mut() {
                        last.accepted = false;
                    }
                    if k == 0 {
                        level0_stalled = true;
                    }
                    break;
                }
                Ok((energy, dx)) => {
                    let step = dx.norm();
                    previous = Some((energy, pose));
                    pose = dx.exp().compose(&pose);
                    any_step = true;
                    trace.push(TraceEntry {
                        level: k,
                        iteration: it,
                        energy,
                        step_norm: step,
                        accepted: true,
                    });
                    if k == 0 {
                        last_level0_step = Some(step);
                    }
                    if step < config.step_tolerance {
                        break;
                    }
                }
                Err(_) => {
                    trace.push(TraceEntry {
                        level: k,
                        iteration: it,
                        energy: f64::NAN,
                        step_norm: 0.0,
                        accepted: false,
                    });
                    if k == 0 {
                        last_level0_step = None;
                    }
                    break;
                }
            }
        }
    }
    if !any_step {
        let mut r = degenerate_result(init, valid_pixels);
        r.trace = trace;
        return Ok(r);
    }
    let converged = pose.is_finite() && (level0_stalled || last_level0_step.is_some_and(|s| s < config.converged_tolerance));
    Ok(AlignmentResult {
        pose,
        trace,
        converged,
        valid_pixels,
    })
}
