//! Rigid transforms and spatial velocity / force types.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Rigid transform: a proper rotation plus a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let m = r.rotation;
        Pose {
            rotation: Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vector3::from(r.translation),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: p.translation.into(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Fixed-axis roll/pitch/yaw: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let rot = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Pose {
            rotation: *rot.matrix(),
            translation: Vector3::from(xyz),
        }
    }

    /// Pure rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Pose {
            rotation: axis_angle_matrix(axis, angle),
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Local z axis in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Rodrigues rotation matrix. A zero axis yields the identity.
pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    match Unit::try_new(*axis, 0.0) {
        Some(unit) => *Rotation3::from_axis_angle(&unit, angle).matrix(),
        None => Matrix3::identity(),
    }
}

/// Rotation vector (axis · angle) of a rotation matrix, angle in `[0, π]`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // w = sin θ · axis
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin = w.norm();
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = sin.atan2(cos);
    if angle < 1e-6 {
        // θ/sin θ = 1 + θ²/6 + …
        return w * (1.0 + angle * angle / 6.0);
    }
    if std::f64::consts::PI - angle > 1e-6 {
        return w * (angle / sin);
    }
    // Near π the skew part vanishes; take the axis from R + I = 2 a aᵀ (+ O(π − θ)).
    let b = (r + Matrix3::identity()) * 0.5;
    let k = (0..3)
        .max_by(|i, j| b[(*i, *i)].total_cmp(&b[(*j, *j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = b.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Angle in `[0, π]` between two (not necessarily unit) vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate near 0 and π.
    a.cross(b).norm().atan2(a.dot(b))
}

/// Frame a twist or wrench is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Base,
    Tip,
}

/// Point whose linear velocity (or about which the moment) is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefPoint {
    Tip,
    Flange,
}

/// Spatial velocity: linear velocity of `reference_point` and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
    pub frame: Frame,
    pub reference_point: RefPoint,
}

impl Twist {
    pub fn zero(frame: Frame, reference_point: RefPoint) -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
            frame,
            reference_point,
        }
    }

    pub fn base_at_tip(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist {
            linear,
            angular,
            frame: Frame::Base,
            reference_point: RefPoint::Tip,
        }
    }

    /// Stacked `[linear; angular]`.
    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn is_zero(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| *v == 0.0)
    }

    /// Re-express in another frame. `rotation` maps this twist's frame into `frame`.
    pub fn rotated(&self, rotation: &Matrix3<f64>, frame: Frame) -> Twist {
        Twist {
            linear: rotation * self.linear,
            angular: rotation * self.angular,
            frame,
            reference_point: self.reference_point,
        }
    }

    /// Move the reference point. `offset` is the vector from the current
    /// reference point to the new one, expressed in this twist's frame.
    pub fn shifted(&self, offset: &Vector3<f64>, reference_point: RefPoint) -> Twist {
        Twist {
            linear: self.linear + self.angular.cross(offset),
            angular: self.angular,
            frame: self.frame,
            reference_point,
        }
    }
}

/// Force and moment, the moment taken about `reference_point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    pub reference_point: RefPoint,
}

impl Wrench {
    pub fn zero(reference_point: RefPoint) -> Self {
        Wrench {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
            reference_point,
        }
    }

    pub fn from_vector6(v: &Vector6<f64>, reference_point: RefPoint) -> Self {
        Wrench {
            force: Vector3::new(v[0], v[1], v[2]),
            torque: Vector3::new(v[3], v[4], v[5]),
            reference_point,
        }
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector6().norm()
    }
}
