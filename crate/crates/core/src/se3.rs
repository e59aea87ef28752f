//! Rigid-body transforms and their Lie-algebra increments.
//!
//! Twists are ordered `(rho | phi)`: translational part first, rotational
//! part second. The same ordering is used by the Jacobian columns in
//! [`crate::iclk`] and by the normal-equation solve.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotation drift (max abs entry of `RᵀR − I`) that triggers re-orthonormalization.
const ORTHO_DRIFT: f64 = 1e-12;

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Element of se(3): `rho` is the translational part in meters, `phi` the
/// rotation vector in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TwistSE3 {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee_skew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

impl TwistSE3 {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        TwistSE3 { rho, phi }
    }

    pub fn zero() -> Self {
        TwistSE3::default()
    }

    /// `(rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        TwistSE3 {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }

    /// Closed-form exponential (Rodrigues rotation plus the left Jacobian
    /// `V` applied to the translational part).
    pub fn exp(&self) -> PoseSE3 {
        let theta = self.phi.norm();
        let k = hat(&self.phi);
        let k2 = k * k;
        let (a, b, c) = if theta < SMALL_ANGLE {
            (1.0, 0.5, 1.0 / 6.0)
        } else {
            let half = 0.5 * theta;
            let s = half.sin() / half;
            let b = 0.5 * s * s;
            let c = if theta < 1e-3 {
                let t2 = theta * theta;
                1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
            } else {
                (theta - theta.sin()) / (theta * theta * theta)
            };
            (theta.sin() / theta, b, c)
        };
        let rotation = Matrix3::identity() + k * a + k2 * b;
        let v = Matrix3::identity() + k * b + k2 * c;
        PoseSE3 {
            rotation,
            translation: v * self.rho,
        }
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting `rotation` onto SO(3) if it has drifted.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: orthonormalize_if_drifted(rotation),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about a unit axis through the origin.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        TwistSE3::new(Vector3::zeros(), axis.normalize() * angle).exp()
    }

    pub fn log(&self) -> Result<TwistSE3> {
        let r = &self.rotation;
        let skew = vee_skew(r);
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = (0.5 * skew.norm()).min(1.0);
        let theta = sin.atan2(cos);
        if theta >= std::f64::consts::PI - 1e-6 {
            return Err(Error::LogBranch(theta));
        }

        let phi = if theta < SMALL_ANGLE {
            skew * (0.5 * (1.0 + theta * theta / 6.0))
        } else if sin > 1e-3 {
            skew * (theta / (2.0 * sin))
        } else {
            // Near pi: the skew part vanishes, recover the axis from the
            // symmetric part (1 - cos) a aᵀ.
            let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
            let mut col = 0;
            for i in 1..3 {
                if sym[(i, i)] > sym[(col, col)] {
                    col = i;
                }
            }
            let mut axis = sym.column(col).into_owned().normalize();
            if axis.dot(&skew) < 0.0 {
                axis = -axis;
            }
            axis * theta
        };

        let k = hat(&phi);
        // d = (1 - (θ/2)·cot(θ/2)) / θ²
        let d = if theta < 1e-2 {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - k * 0.5 + k * k * d;
        Ok(TwistSE3 {
            rho: v_inv * self.translation,
            phi,
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: orthonormalize_if_drifted(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }

    /// Max abs entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Inverse of [`to_row_major`](Self::to_row_major). The rotation is kept
    /// verbatim so that serialized poses round-trip bit-exactly.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("pose contains non-finite values".into()));
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let pose = PoseSE3 {
            rotation,
            translation: Vector3::new(v[3], v[7], v[11]),
        };
        let det = rotation.determinant();
        if pose.orthonormality_error() > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(
                "pose rotation block is not a proper rotation".into(),
            ));
        }
        Ok(pose)
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        PoseSE3::identity()
    }
}

/// Twelve whitespace-separated numbers, row-major 3×4.
impl fmt::Display for PoseSE3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_row_major();
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x:?}")?;
        }
        Ok(())
    }
}

impl FromStr for PoseSE3 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let nums: Vec<f64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad pose number {t:?}")))
            })
            .collect::<Result<_>>()?;
        let arr: [f64; 12] = nums.as_slice().try_into().map_err(|_| {
            Error::InvalidArgument(format!("pose needs 12 numbers, got {}", nums.len()))
        })?;
        PoseSE3::from_row_major(&arr)
    }
}

/// Geodesic angle between the rotations of `a` and `b`, i.e. the angle of
/// `Ra·Rbᵀ`. Computed from sums of elementwise products so the result is
/// bitwise symmetric in its arguments.
pub fn rotation_angle(a: &PoseSE3, b: &PoseSE3) -> f64 {
    let ra = &a.rotation;
    let rb = &b.rotation;
    let mut m = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = ra[(i, 0)] * rb[(j, 0)] + ra[(i, 1)] * rb[(j, 1)] + ra[(i, 2)] * rb[(j, 2)];
        }
    }
    let cos = ((m[(0, 0)] + m[(1, 1)] + m[(2, 2)] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = vee_skew(&m);
    // |s| is the same for m and mᵀ.
    let sin = 0.5 * (s.x * s.x + s.y * s.y + s.z * s.z).sqrt();
    sin.atan2(cos)
}

fn orthonormalize_if_drifted(r: Matrix3<f64>) -> Matrix3<f64> {
    let drift = (r.transpose() * r - Matrix3::identity()).amax();
    if drift <= ORTHO_DRIFT {
        return r;
    }
    // Polar factor U·Vᵀ of the SVD.
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}
