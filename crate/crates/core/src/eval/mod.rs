//! Error metrics, summary statistics, pose perturbations, synthetic maps,
//! dataset generation, overlays and the benchmark harness.

mod bench;
mod dataset;
mod overlay;
mod synth;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use bench::{run_benchmark, variant_by_name, BenchReport, SampleOutcome, VariantReport, METRICS, VARIANT_NAMES};
pub use dataset::MANIFEST_FILE;
pub use dataset::{generate_dataset, DatasetConfig, DatasetSample, Manifest, PairMode};
pub use overlay::overlay;
pub use synth::{augment, synth_elevation, synth_map, synth_texture, AugmentConfig, SynthConfig};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::raster::DepthMap;
use crate::se3::{rotation_angle, PoseSE3, TwistSE3};

/// Mean 3D end-point error over every valid reference pixel:
/// `mean ‖T_est·p − T_gt·p‖` with `p = unproject(u, v, d_ref)`.
pub fn epe(ref_depth: &DepthMap, cam: &CameraModel, t_est: &PoseSE3, t_gt: &PoseSE3) -> Result<f64> {
    let dr = t_est.rotation - t_gt.rotation;
    let dt = t_est.translation - t_gt.translation;
    let mut first: Option<f64> = None;
    let mut shifted_sum = 0.0;
    let mut n = 0usize;
    for y in 0..ref_depth.height {
        for x in 0..ref_depth.width {
            if !ref_depth.is_valid(x, y) {
                continue;
            }
            let p: Vector3<f64> = cam.unproject(x as f64, y as f64, ref_depth.get(x, y) as f64)?;
            let d = (dr * p + dt).norm();
            let base = *first.get_or_insert(d);
            shifted_sum += d - base;
            n += 1;
        }
    }
    match first {
        // Mean of the offsets from the first displacement.
        Some(base) => Ok(base + shifted_sum / n as f64),
        None => Err(Error::InvalidArgument("end-point error needs at least one valid depth pixel".into())),
    }
}

/// Geodesic angle between the two rotations, in radians.
pub fn angular_error(t_est: &PoseSE3, t_gt: &PoseSE3) -> f64 {
    rotation_angle(t_est, t_gt)
}

pub fn translational_error(t_est: &PoseSE3, t_gt: &PoseSE3) -> f64 {
    (t_est.translation - t_gt.translation).norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation (n−1 denominator, 0 for a single value).
    pub stdev: f64,
    /// Lower middle element for even lengths.
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn stats(series: &[f64]) -> Result<ErrorStats> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("statistics of an empty series".into()));
    }
    if series.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("statistics of a series containing NaN".into()));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    // Order-independent sum over the sorted series.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let stdev = if n > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ErrorStats {
        mean,
        stdev,
        median: sorted[(n - 1) / 2],
        min: sorted[0],
        max: sorted[n - 1],
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationConfig {
    /// Per-axis translation standard deviation in meters.
    pub sigma_translation: [f64; 3],
    /// Per-axis rotation standard deviation in radians.
    pub sigma_rotation: [f64; 3],
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            sigma_translation: [10.0, 10.0, 2.5],
            sigma_rotation: [0.04; 3],
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .sigma_translation
            .iter()
            .chain(&self.sigma_rotation)
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::InvalidArgument("perturbation sigmas must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Translation `~ N(0, σ_t²)` per axis and rotation `exp(φ)` with
/// `φ ~ N(0, σ_r²)` per axis.
pub fn sample_perturbation<R: Rng + ?Sized>(config: &PerturbationConfig, rng: &mut R) -> PoseSE3 {
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
        sigma * z
    };
    let t = Vector3::new(
        draw(config.sigma_translation[0]),
        draw(config.sigma_translation[1]),
        draw(config.sigma_translation[2]),
    );
    let phi = Vector3::new(
        draw(config.sigma_rotation[0]),
        draw(config.sigma_rotation[1]),
        draw(config.sigma_rotation[2]),
    );
    let rotation = TwistSE3::new(Vector3::zeros(), phi).exp().rotation;
    PoseSE3::new(rotation, t)
}
