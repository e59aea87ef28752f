//! Per-residual weighting policies for the normal equations.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::FloatRaster;

use super::features::{check_levels, load_pyramid_file, save_pyramid_file, WGHT_MAGIC};

pub const HUBER_DEFAULT: f64 = 1.345;
/// Converts a median absolute residual into a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Clone, Debug, PartialEq)]
pub enum WeightPolicy {
    Uniform,
    Huber { c: f64 },
    /// Per reference pixel weight pyramid loaded from a `WGHT` file.
    External(PathBuf),
}

/// Single-channel per-pixel weight rasters, one per pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPyramid {
    pub levels: Vec<FloatRaster>,
}

impl WeightPyramid {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_pyramid_file(path, WGHT_MAGIC, &self.levels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let levels = load_pyramid_file(path, WGHT_MAGIC)?;
        if levels.iter().any(|l| l.channels != 1) {
            return Err(Error::format(path, "weight rasters must have one channel"));
        }
        if levels.iter().any(|l| l.data.iter().any(|w| !w.is_finite() || *w < 0.0)) {
            return Err(Error::format(path, "weights must be finite and non-negative"));
        }
        Ok(WeightPyramid { levels })
    }

    pub fn check_dimensions(&self, width: usize, height: usize) -> Result<()> {
        check_levels(&self.levels, width, height)
    }
}

/// Huber weights `min(1, c*s/|r|)` with the robust scale
/// `s = 1.4826 * median(|r|)`. A zero scale yields all-one weights.
pub fn huber_weights(residuals: &[f64], c: f64) -> Vec<f64> {
    let s = MAD_SCALE * median_abs(residuals);
    if s <= f64::MIN_POSITIVE {
        return vec![1.0; residuals.len()];
    }
    let k = c * s;
    residuals
        .iter()
        .map(|r| if r.abs() <= k { 1.0 } else { k / r.abs() })
        .collect()
}

/// Weights for `residuals` under a non-external policy.
pub fn robust_weights(residuals: &[f64], policy: &WeightPolicy) -> Result<Vec<f64>> {
    let w = match policy {
        WeightPolicy::Uniform => vec![1.0; residuals.len()],
        WeightPolicy::Huber { c } => huber_weights(residuals, *c),
        WeightPolicy::External(path) => {
            return Err(Error::InvalidArgument(format!(
                "external weights from {} are per pixel and need the reference geometry",
                path.display()
            )))
        }
    };
    if !w.is_empty() && w.iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(w)
}

/// Lower median of `|r|`.
pub(crate) fn median_abs(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let mid = (a.len() - 1) / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    *m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_one() {
        let w = robust_weights(&[3.0, -1.0, 0.0], &WeightPolicy::Uniform).unwrap();
        assert_eq!(w, vec![1.0; 3]);
    }

    #[test]
    fn huber_equal_magnitudes() {
        let w = huber_weights(&[0.7, -0.7, 0.7, -0.7], HUBER_DEFAULT);
        assert_eq!(w, vec![1.0; 4]);
    }

    #[test]
    fn huber_outlier() {
        let mut r: Vec<f64> = (0..101).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        r[50] = 100.0 * MAD_SCALE;
        let w = huber_weights(&r, HUBER_DEFAULT);
        // scale s = 1.4826, outlier weight = 1.345 * 1.4826 / 148.26
        assert!((w[50] - 0.01345).abs() < 1e-12);
        assert!(w[50] < 0.02);
        assert!(w.iter().enumerate().all(|(i, x)| i == 50 || *x == 1.0));
    }

    #[test]
    fn zero_residuals_give_unit_weights() {
        assert_eq!(huber_weights(&[0.0; 5], 1.345), vec![1.0; 5]);
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.wght");
        let levels = (0..4)
            .map(|k| FloatRaster::from_fn(40 >> k, 24 >> k, |x, y| (x * y) as f32 * 0.01))
            .collect();
        let p = WeightPyramid { levels };
        p.save(&path).unwrap();
        let q = WeightPyramid::load(&path).unwrap();
        assert_eq!(p, q);
        assert!(q.check_dimensions(40, 24).is_ok());
        assert!(q.check_dimensions(40, 26).is_err());
    }
}
