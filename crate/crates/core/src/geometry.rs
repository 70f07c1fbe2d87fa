//! Rigid transforms, rotation encodings and interpolation.
//!
//! A [`Pose`] maps coordinates from a child frame into the frame named by its
//! `frame` tag. Quaternions are kept unit-norm with `w >= 0` after every
//! operation so equality tests never trip over the double cover.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Above this quaternion dot product slerp falls back to normalized lerp.
const SLERP_LERP_THRESHOLD: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameId {
    Vr,
    Camera,
    Wrist,
    Chessboard,
    RobotBase,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameId::Vr => "vr",
            FrameId::Camera => "camera",
            FrameId::Wrist => "wrist",
            FrameId::Chessboard => "chessboard",
            FrameId::RobotBase => "robot_base",
        };
        f.write_str(s)
    }
}

/// Normalizes `q` and flips its sign so that `w >= 0`.
///
/// Quaternions already unit to within 1e-14 in squared norm are left
/// bit-for-bit untouched, which keeps the operation idempotent.
pub fn canonical(q: Quaternion<f64>) -> Quat {
    let q = if q.w < 0.0 { -q } else { q };
    if (q.norm_squared() - 1.0).abs() < 1e-14 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
    pub frame: FrameId,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat, frame: FrameId) -> Self {
        Pose {
            position,
            orientation: canonical(orientation.into_inner()),
            frame,
        }
    }

    pub fn identity(frame: FrameId) -> Self {
        Pose {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
            frame,
        }
    }

    pub fn from_translation(t: Vec3, frame: FrameId) -> Self {
        Pose::new(t, Quat::identity(), frame)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, frame: FrameId) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle);
        Pose::new(Vec3::zeros(), q, frame)
    }

    /// Builds a pose from `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4], frame: FrameId) -> Self {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Pose {
            position: Vec3::from(position),
            orientation: canonical(q),
            frame,
        }
    }

    pub fn with_frame(mut self, frame: FrameId) -> Self {
        self.frame = frame;
        self
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.quat_wxyz().iter().all(|v| v.is_finite())
    }

    pub fn expect_frame(&self, expected: FrameId) -> Result<()> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected,
                actual: self.frame,
            })
        }
    }
}

/// Rigid composition `a ∘ b`; the result carries `a`'s frame tag.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        position: a.orientation * b.position + a.position,
        orientation: canonical(a.orientation.into_inner() * b.orientation.into_inner()),
        frame: a.frame,
    }
}

/// Inverse transform. The frame tag is carried over unchanged; callers retag
/// with [`Pose::with_frame`] when the inverted pose lives in another frame.
pub fn inverse(p: &Pose) -> Pose {
    let q_inv = p.orientation.inverse();
    Pose {
        position: -(q_inv * p.position),
        orientation: canonical(q_inv.into_inner()),
        frame: p.frame,
    }
}

/// `base⁻¹ ∘ target`: the target expressed in the base pose's local frame.
pub fn relative(base: &Pose, target: &Pose) -> Result<Pose> {
    target.expect_frame(base.frame)?;
    Ok(compose(&inverse(base), target).with_frame(FrameId::Wrist))
}

/// Rotation angle in radians between two orientations, in `[0, π]`.
pub fn rotation_angle(a: &Quat, b: &Quat) -> f64 {
    let d = a.inverse() * b;
    let q = d.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Shorter-arc spherical interpolation between unit quaternions.
pub fn slerp_quat(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t == 0.0 {
        return canonical(a.into_inner());
    }
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    let mut dot = qa.coords.dot(&qb.coords);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if t == 1.0 {
        return canonical(qb);
    }
    if dot > SLERP_LERP_THRESHOLD {
        return canonical(qa * (1.0 - t) + qb * t);
    }
    let theta = dot.min(1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    canonical(qa * wa + qb * wb)
}

/// Interpolates position linearly and orientation along the shorter arc.
pub fn slerp(a: &Pose, b: &Pose, t: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation parameter {t} outside [0, 1]"
        )));
    }
    b.expect_frame(a.frame)?;
    let position = if t == 1.0 {
        b.position
    } else {
        a.position * (1.0 - t) + b.position * t
    };
    Ok(Pose {
        position,
        orientation: slerp_quat(&a.orientation, &b.orientation, t),
        frame: a.frame,
    })
}

/// First two rows of a rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

pub fn encode_rot6d(q: &Quat) -> Rot6D {
    let m = q.to_rotation_matrix().into_inner();
    Rot6D([
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
    ])
}

impl Rot6D {
    /// Gram–Schmidt reconstruction of the full rotation matrix.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        let v = &self.0;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("rot6d".into()));
        }
        let r1 = Vec3::new(v[0], v[1], v[2]);
        let r2 = Vec3::new(v[3], v[4], v[5]);
        let n1 = r1.norm();
        if n1 < 1e-12 {
            return Err(Error::DegenerateRotation("first row is zero"));
        }
        let r1 = r1 / n1;
        let r2_orth = r2 - r1 * r1.dot(&r2);
        let n2 = r2_orth.norm();
        if n2 < 1e-9 * r2.norm().max(1e-300) || n2 < 1e-12 {
            return Err(Error::DegenerateRotation("rows are parallel"));
        }
        let r2 = r2_orth / n2;
        let r3 = r1.cross(&r2);
        Ok(Matrix3::from_rows(&[
            r1.transpose(),
            r2.transpose(),
            r3.transpose(),
        ]))
    }
}

pub fn decode_rot6d(v: &Rot6D) -> Result<Quat> {
    let m = v.to_matrix()?;
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Ok(canonical(q.into_inner()))
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `(w, x, y, z)`
    orientation: [f64; 4],
    frame: FrameId,
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;

    fn try_from(r: PoseRepr) -> std::result::Result<Self, Self::Error> {
        let norm = r.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {norm} is not 1"));
        }
        if r.position.iter().any(|v| !v.is_finite()) {
            return Err("non-finite position".into());
        }
        Ok(Pose::from_parts(r.position, r.orientation, r.frame))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: p.quat_wxyz(),
            frame: p.frame,
        }
    }
}
