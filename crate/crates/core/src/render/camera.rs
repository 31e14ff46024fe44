//! Rigid pose (axis-angle) and pinhole projection.

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Points closer to the camera plane than this are treated as invisible.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Focal length 1.2 x image width, principal point at the image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            focal: 1.2 * width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::InvalidInput("focal length must be positive".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidInput("image must be at least 2x2".into()));
        }
        if !(self.cx >= 0.0 && self.cx <= self.width as f64 && self.cy >= 0.0 && self.cy <= self.height as f64) {
            return Err(Error::InvalidInput("principal point lies outside the image".into()));
        }
        Ok(())
    }

    /// Whether `p` lies where bilinear sampling is fully defined
    /// (pixel centers sit at integer coordinates).
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }
}

/// Perspective projection of a camera-space point. Returns `None` when the
/// point is not in front of the camera.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    (p.z > MIN_DEPTH).then(|| project_unchecked(p, k))
}

pub(crate) fn project_unchecked(p: &Vector3<f64>, k: &CameraIntrinsics) -> Vector2<f64> {
    let z = p.z.max(MIN_DEPTH);
    Vector2::new(k.focal * p.x / z + k.cx, k.focal * p.y / z + k.cy)
}

/// d(project)/d(point).
pub(crate) fn project_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let z = p.z.max(MIN_DEPTH);
    let f = k.focal / z;
    Matrix2x3::new(f, 0.0, -f * p.x / z, 0.0, f, -f * p.y / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation (radians times unit axis).
    pub omega: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            omega: Vector3::zeros(),
            t: Vector3::zeros(),
        }
    }
}

impl Pose {
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(&self.omega)
    }

    /// `R(omega) v + t`.
    pub fn transform(&self, v: &Vector3<f64>) -> Result<Vector3<f64>> {
        check_finite("pose", self.omega.as_slice())?;
        check_finite("pose", self.t.as_slice())?;
        check_finite("point", v.as_slice())?;
        Ok(self.rotation() * v + self.t)
    }
}

pub fn rotation_matrix(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    w.cross_matrix()
}

/// dR/d(omega_k) for k = 0..3, using the closed form
/// `(w_k [w]x + [w x (I - R) e_k]x) R / |w|^2`, with the series limit near 0.
pub fn rotation_derivatives(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = omega.norm_squared();
    let r = rotation_matrix(omega);
    let mut out = [Matrix3::zeros(); 3];
    for (k, d) in out.iter_mut().enumerate() {
        let e = Vector3::ith(k, 1.0);
        if theta2 < 1e-12 {
            // first-order expansion around the identity
            let ek = skew(&e);
            let w = skew(omega);
            *d = ek + 0.5 * (ek * w + w * ek);
        } else {
            let ident_minus_r = Matrix3::identity() - r;
            let a = omega[k] * skew(omega) + skew(&omega.cross(&(ident_minus_r * e)));
            *d = a * r / theta2;
        }
    }
    out
}
