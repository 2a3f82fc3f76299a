//! Rigid motions in 3D and the handful of small-matrix helpers the costs need.
//!
//! Rotations are stored as 3x3 matrices. Tangent vectors are ordered
//! rotation first, translation second, and the group update used by the
//! optimizer is left-multiplicative: `pose <- exp(delta) * pose`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this squared angle the trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE_SQ: f64 = 1e-10;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

#[inline]
pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Largest entry of `|m - m^T|` relative to the largest entry of `|m|` (or 1).
pub fn relative_asymmetry(m: &Mat3) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

/// Local tangent vector: rotational part in radians, translational part in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Twist {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rotation: Vec3::new(v[0], v[1], v[2]),
            translation: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (w, t) = (&self.rotation, &self.translation);
        Vector6::new(w.x, w.y, w.z, t.x, t.y, t.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    /// Shrinks the twist uniformly so its norm does not exceed `max_norm`.
    pub fn clamped(&self, max_norm: f64) -> Self {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            let s = max_norm / n;
            Self::new(self.rotation * s, self.translation * s)
        } else {
            *self
        }
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rotation, -self.translation)
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)` for `t^2 = theta_sq`.
fn so3_coefficients(theta_sq: f64) -> (f64, f64, f64) {
    if theta_sq < SMALL_ANGLE_SQ {
        (
            1.0 - theta_sq / 6.0,
            0.5 - theta_sq / 24.0,
            1.0 / 6.0 - theta_sq / 120.0,
        )
    } else {
        let theta = theta_sq.sqrt();
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / theta_sq, (theta - s) / (theta_sq * theta))
    }
}

/// Rotation matrix of the axis-angle vector `w` (Rodrigues).
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let (a, b, _) = so3_coefficients(w.norm_squared());
    let k = hat(w);
    Mat3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, with angle in `[0, pi]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let axis_scaled = vee(r); // sin(theta) * axis
    let theta = axis_scaled.norm().atan2((r.trace() - 1.0) * 0.5);
    if theta < 1e-5 {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return axis_scaled * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return axis_scaled * (theta / theta.sin());
    }
    // Near pi: R ~ 2 a a^T - I, recover the axis from the largest diagonal entry.
    let b = (r + Mat3::identity()) * 0.5;
    let i = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap();
    let mut axis = b.column(i).into_owned() / b[(i, i)].max(0.0).sqrt();
    axis.normalize_mut();
    // Pick the sign consistent with the antisymmetric part.
    if axis.dot(&axis_scaled) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn from_rotation(r: Mat3) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// SE(3) exponential of a twist.
    pub fn exp(xi: &Twist) -> Self {
        let w = &xi.rotation;
        let (a, b, c) = so3_coefficients(w.norm_squared());
        let k = hat(w);
        let k2 = k * k;
        let rotation = Mat3::identity() + k * a + k2 * b;
        let v = Mat3::identity() + k * b + k2 * c;
        Self::new(rotation, v * xi.translation)
    }

    /// SE(3) logarithm; inverse of [`Pose::exp`] for rotation angles below pi.
    pub fn log(&self) -> Twist {
        let w = log_so3(&self.rotation);
        let theta_sq = w.norm_squared();
        let k = hat(&w);
        // V^{-1} = I - K/2 + coef K^2
        // (1 - (theta/2) cot(theta/2)) / theta^2, by series where it cancels
        let coef = if theta_sq < 1e-4 {
            1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
        } else {
            let half = 0.5 * theta_sq.sqrt();
            (1.0 - half / half.tan()) / theta_sq
        };
        let v_inv = Mat3::identity() - k * 0.5 + k * k * coef;
        Twist::new(w, v_inv * self.translation)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Left-multiplicative update `exp(delta) * self`, re-orthonormalized.
    pub fn retract(&self, delta: &Twist) -> Pose {
        let mut out = Pose::exp(delta).compose(self);
        out.rotation = orthonormalize(&out.rotation);
        out
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Pose {
        Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        vee(&self.rotation).norm().atan2((self.rotation.trace() - 1.0) * 0.5)
    }

    /// Deviation of the rotation from orthonormality: `max |R^T R - I|` and `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Mat3::identity()).amax();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Moves a Gaussian through a rigid transform: `(R mean + t, R cov R^T)`.
pub fn transform_gaussian(pose: &Pose, mean: &Vec3, cov: &Mat3) -> Result<(Vec3, Mat3)> {
    let asym = relative_asymmetry(cov);
    if asym > 1e-6 {
        return Err(Error::AsymmetricCovariance(asym));
    }
    let r = &pose.rotation;
    let cov = symmetrize(&(r * symmetrize(cov) * r.transpose()));
    Ok((pose.transform_point(mean), cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(Pose::exp(&Twist::zero()), Pose::identity());
    }

    #[test]
    fn yaw_quarter_turn() {
        let p = Pose::exp(&Twist::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros()));
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((p.rotation - expected).amax() < 1e-15);
        assert_eq!(p.translation, Vec3::zeros());
    }

    #[test]
    fn log_near_pi() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        for theta in [std::f64::consts::PI - 1e-9, std::f64::consts::PI - 1e-4, 3.0] {
            let r = exp_so3(&(axis * theta));
            let w = log_so3(&r);
            assert!((exp_so3(&w) - r).amax() < 1e-8, "theta {theta}");
        }
    }

    #[test]
    fn transform_gaussian_rejects_asymmetric() {
        let mut c = Mat3::identity();
        c[(0, 1)] = 0.1;
        let err = transform_gaussian(&Pose::identity(), &Vec3::zeros(), &c).unwrap_err();
        assert!(matches!(err, Error::AsymmetricCovariance(_)));
    }

    #[test]
    fn yaw_permutes_diagonal_covariance() {
        let pose = Pose::exp(&Twist::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros()));
        let cov = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0));
        let (m, c) = transform_gaussian(&pose, &Vec3::new(1.0, 0.0, 0.0), &cov).unwrap();
        assert!((c - Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 9.0))).amax() < 1e-14);
        assert!((m - Vec3::new(0.0, 1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn orthonormalize_fixes_drift() {
        let r = exp_so3(&Vec3::new(0.3, -0.2, 0.1));
        let noisy = r + Mat3::new(1e-5, 0.0, 2e-5, 0.0, -1e-5, 0.0, 3e-6, 0.0, 0.0);
        let p = Pose::from_rotation(orthonormalize(&noisy));
        assert!(p.orthonormality_error() < 1e-12);
        assert!((p.rotation - r).amax() < 1e-4);
    }
}
