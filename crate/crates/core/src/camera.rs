//! Pinhole camera with 5-coefficient radial-tangential distortion.
//!
//! Convention: +z is the optical axis, +x points right, +y points down, and
//! pixel `(i, j)` has its center at image coordinates `(i, j)`.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};

/// Minimum depth accepted by [`CameraModel::project`].
pub const MIN_DEPTH: f64 = 1e-6;

const UNDISTORT_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-12;
const UNDISTORT_LIMIT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// `(k1, k2, p1, p2, k3)`
    pub dist: [f64; 5],
}

impl Default for CameraModel {
    /// 752×480, f = 400 px, centered principal point, no distortion.
    fn default() -> Self {
        CameraModel::pinhole(400.0, 400.0, 376.0, 240.0, 752, 480)
    }
}

impl CameraModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            dist: [0.0; 5],
        }
    }

    pub fn with_distortion(mut self, dist: [f64; 5]) -> Self {
        self.dist = dist;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Camera(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        if ![self.cx, self.cy].iter().chain(self.dist.iter()).all(|v| v.is_finite()) {
            return Err(Error::Camera("non-finite principal point or distortion".into()));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&d| d != 0.0)
    }

    /// Same intrinsics with the distortion coefficients dropped.
    pub fn undistorted(&self) -> Self {
        CameraModel {
            dist: [0.0; 5],
            ..*self
        }
    }

    /// Intrinsics of pyramid level `level` (block-average halving with pixel
    /// centers at integer coordinates).
    pub fn level(&self, level: usize) -> Self {
        let s = (1usize << level) as f64;
        CameraModel {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
            dist: [0.0; 5],
        }
    }

    /// Applies the radial-tangential model to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        (
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    fn distort_jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        let [k1, k2, p1, p2, k3] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
        let dxdx = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
        let dxdy = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
        let dydx = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
        let dydy = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;
        Matrix2::new(dxdx, dxdy, dydx, dydy)
    }

    /// Inverts [`distort`](Self::distort) iteratively (Newton steps on the
    /// 2-D distortion map, started at the distorted point).
    pub fn undistort(&self, xd: f64, yd: f64) -> Result<(f64, f64)> {
        if !self.has_distortion() {
            return Ok((xd, yd));
        }
        let target = Vector2::new(xd, yd);
        let mut p = target;
        for _ in 0..UNDISTORT_ITERS {
            let (dx, dy) = self.distort(p.x, p.y);
            let err = Vector2::new(dx, dy) - target;
            if err.amax() <= UNDISTORT_TOL {
                break;
            }
            let j = self.distort_jacobian(p.x, p.y);
            let step = j
                .try_inverse()
                .filter(|_| j.determinant() > 0.0)
                .map(|inv| inv * err)
                .ok_or(Error::Undistortion { x: xd, y: yd })?;
            p -= step;
            if !(p.x.abs() <= UNDISTORT_LIMIT && p.y.abs() <= UNDISTORT_LIMIT) {
                return Err(Error::Undistortion { x: xd, y: yd });
            }
        }
        let (dx, dy) = self.distort(p.x, p.y);
        // Past the fold of the radial polynomial there is no physical
        // preimage; reject solutions on the wrong branch or unconverged ones.
        if (Vector2::new(dx, dy) - target).amax() > 1e-9 || self.distort_jacobian(p.x, p.y).determinant() <= 0.0 {
            return Err(Error::Undistortion { x: xd, y: yd });
        }
        Ok((p.x, p.y))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if !(p.z > MIN_DEPTH) {
            return Err(Error::BehindCamera(p.z));
        }
        let (x, y) = self.distort(p.x / p.z, p.y / p.z);
        Ok((self.fx * x + self.cx, self.fy * y + self.cy))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::BehindCamera(depth));
        }
        let (x, y) = self.undistort((u - self.cx) / self.fx, (v - self.cy) / self.fy)?;
        Ok(Vector3::new(x * depth, y * depth, depth))
    }

    /// Pinhole projection ignoring distortion; `None` behind the camera.
    #[inline]
    pub fn project_pinhole(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > MIN_DEPTH).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Pinhole backprojection ignoring distortion.
    #[inline]
    pub fn unproject_pinhole(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn in_bounds(&self, u: f64, v: f64, margin: f64) -> bool {
        u >= margin
            && v >= margin
            && u <= self.width as f64 - 1.0 - margin
            && v <= self.height as f64 - 1.0 - margin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn principal_ray() {
        let cam = CameraModel::default();
        assert_eq!(cam.project(&Vector3::new(0.0, 0.0, 10.0)).unwrap(), (376.0, 240.0));
    }

    #[test]
    fn zero_distortion_offset() {
        let cam = CameraModel::default();
        let (u, v) = cam.project(&Vector3::new(1.0, 0.0, 10.0)).unwrap();
        assert_eq!((u, v), (416.0, 240.0));
        let p = cam.unproject(416.0, 240.0, 10.0).unwrap();
        assert_eq!(p, Vector3::new(1.0, 0.0, 10.0));
        assert_eq!(cam.unproject(376.0, 240.0, 5.0).unwrap(), Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn radial_formula_oracle() {
        let cam = CameraModel::default().with_distortion([-0.1, 0.0, 0.0, 0.0, 0.0]);
        let (u, v) = cam.project(&Vector3::new(1.0, 0.0, 10.0)).unwrap();
        let x = 0.1f64;
        let expected = 400.0 * x * (1.0 - 0.1 * x * x) + 376.0;
        assert!((u - expected).abs() < 1e-10);
        assert!((v - 240.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_points_behind() {
        let cam = CameraModel::default();
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_err());
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
        assert!(cam.unproject(10.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn bounds() {
        let cam = CameraModel::default();
        assert!(cam.in_bounds(0.0, 0.0, 0.0));
        assert!(!cam.in_bounds(-0.5, 10.0, 0.0));
        assert!(!cam.in_bounds(749.5, 100.0, 2.0));
        assert!(cam.in_bounds(749.0, 100.0, 2.0));
    }

    #[test]
    fn round_trip_with_barrel_distortion() {
        let cam = CameraModel::default().with_distortion([-0.1, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let u = rng.random_range(0.0..751.0);
            let v = rng.random_range(0.0..479.0);
            let d = rng.random_range(1.0..1e4);
            let p = cam.unproject(u, v, d).unwrap();
            let (u2, v2) = cam.project(&p).unwrap();
            assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6);
        }
    }

    #[test]
    fn full_model_round_trip() {
        let cam = CameraModel::default().with_distortion([0.05, -0.01, 1e-3, -2e-3, 1e-3]);
        for &(u, v) in &[(0.0, 0.0), (751.0, 479.0), (10.0, 400.0), (376.0, 240.0)] {
            let p = cam.unproject(u, v, 3.0).unwrap();
            let (u2, v2) = cam.project(&p).unwrap();
            assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6);
        }
    }

    #[test]
    fn folded_barrel_corner_has_no_preimage() {
        // x - 0.3 x^3 never exceeds ~0.70, so the corner at r ~ 1.1 is unreachable.
        let cam = CameraModel::default().with_distortion([-0.3, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(cam.unproject(751.0, 479.0, 1.0), Err(Error::Undistortion { .. })));
    }

    #[test]
    fn zero_distortion_paths_agree() {
        let cam = CameraModel::default();
        let p = Vector3::new(3.0, -2.0, 17.0);
        let (u, v) = cam.project(&p).unwrap();
        assert_eq!(Some((u, v)), cam.project_pinhole(&p));
        assert_eq!(cam.unproject(u, v, 17.0).unwrap(), cam.unproject_pinhole(u, v, 17.0));
    }

    #[test]
    fn level_intrinsics() {
        let cam = CameraModel::default();
        let l3 = cam.level(3);
        assert_eq!((l3.width, l3.height), (94, 60));
        assert_eq!(l3.fx, 50.0);
        assert_eq!(l3.cx, (376.5 / 8.0) - 0.5);
    }

    #[test]
    fn validation() {
        assert!(CameraModel::pinhole(0.0, 1.0, 0.0, 0.0, 10, 10).validate().is_err());
        assert!(CameraModel::pinhole(1.0, 1.0, 0.0, 0.0, 1, 10).validate().is_err());
        assert!(CameraModel::default().validate().is_ok());
    }
}
