//! Small fixed-size 3-D algebra generic over [`Real`], plus conversions to
//! and from `nalgebra` types for the `f64` case.

use nalgebra::{Matrix3, Vector3};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::math;

pub type V3<T> = [T; 3];
/// Row-major 3x3 matrix.
pub type M3<T> = [[T; 3]; 3];

#[inline]
pub fn v_cst<T: Real>(v: &Vector3<f64>) -> V3<T> {
    [T::cst(v[0]), T::cst(v[1]), T::cst(v[2])]
}

#[inline]
pub fn m_cst<T: Real>(m: &Matrix3<f64>) -> M3<T> {
    core::array::from_fn(|i| core::array::from_fn(|j| T::cst(m[(i, j)])))
}

#[inline]
pub fn v_value<T: Real>(v: &V3<T>) -> Vector3<f64> {
    Vector3::new(v[0].value(), v[1].value(), v[2].value())
}

#[inline]
pub fn m_value<T: Real>(m: &M3<T>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j].value())
}

#[inline]
pub fn add<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: &V3<T>, k: T) -> V3<T> {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn neg<T: Real>(a: &V3<T>) -> V3<T> {
    [-a[0], -a[1], -a[2]]
}

#[inline]
pub fn dot<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn mat_vec<T: Real>(m: &M3<T>, v: &V3<T>) -> V3<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

/// `mᵀ v`.
#[inline]
pub fn mat_t_vec<T: Real>(m: &M3<T>, v: &V3<T>) -> V3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    core::array::from_fn(|i| core::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

#[inline]
pub fn column<T: Real>(m: &M3<T>, j: usize) -> V3<T> {
    [m[0][j], m[1][j], m[2][j]]
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle<T: Real>(axis: &V3<f64>, angle: T) -> M3<T> {
    let (s, c) = (angle.sin(), angle.cos());
    let one_c = T::cst(1.0) - c;
    let [x, y, z] = *axis;
    let k = |v: f64| T::cst(v);
    [
        [
            c + one_c * k(x * x),
            one_c * k(x * y) - s * k(z),
            one_c * k(x * z) + s * k(y),
        ],
        [
            one_c * k(y * x) + s * k(z),
            c + one_c * k(y * y),
            one_c * k(y * z) - s * k(x),
        ],
        [
            one_c * k(z * x) - s * k(y),
            one_c * k(z * y) + s * k(x),
            c + one_c * k(z * z),
        ],
    ]
}

/// Roll-pitch-yaw rotation `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rpy<T: Real>(roll: T, pitch: T, yaw: T) -> M3<T> {
    let (sr, cr) = (roll.sin(), roll.cos());
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let (sy, cy) = (yaw.sin(), yaw.cos());
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rotation-vector logarithm of a rotation matrix.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_angle = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = math::acos(cos_angle);
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-9 {
        return 0.5 * w;
    }
    let s = math::sin(angle);
    if s.abs() < 1e-9 {
        // angle near pi: use the symmetric part
        let b = 0.5 * (r + Matrix3::identity());
        let mut axis = Vector3::new(
            math::sqrt(b[(0, 0)].max(0.0)),
            math::sqrt(b[(1, 1)].max(0.0)),
            math::sqrt(b[(2, 2)].max(0.0)),
        );
        if axis[0] > 1e-6 {
            axis[1] = axis[1].copysign(b[(0, 1)]);
            axis[2] = axis[2].copysign(b[(0, 2)]);
        } else if axis[1] > 1e-6 {
            axis[2] = axis[2].copysign(b[(1, 2)]);
        }
        return angle * axis.normalize();
    }
    w * (angle / (2.0 * s))
}

/// Fixed rigid transform `x ↦ R x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Translation followed by a roll-pitch-yaw rotation, as in URDF origins.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy_angles: [f64; 3]) -> Self {
        Self {
            rotation: m_value(&rpy(rpy_angles[0], rpy_angles[1], rpy_angles[2])),
            translation: Vector3::from(xyz),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        let det = self.rotation.determinant();
        if !(err <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidChain(alloc::format!(
                "rotation is not proper orthonormal (orthogonality error {err:.2e}, det {det})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("transform translation"));
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }
}
