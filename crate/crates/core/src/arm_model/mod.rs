//! Serial revolute arm: model description, kinematics and rigid-body dynamics.

mod dynamics;
mod kinematics;
mod limits;
mod linalg;
mod pose;

pub use dynamics::{estimate_external_wrench, inverse_dynamics, TorqueFilter};
pub use kinematics::{
    forward_kinematics, geometric_jacobian, link_frame, point_jacobian, solve_ik, IkOptions,
    Jacobian,
};
pub use limits::{clamp_to_limits, LimitEvent};
pub use linalg::{damped_pseudoinverse, dls_gain_bound, pseudoinverse, SINGULAR_CUTOFF};
pub use pose::{angle_between, axis_angle_matrix, rotation_log, Frame, Pose, RefPoint, Twist, Wrench};

use crate::error::{Error, Result};
use nalgebra::{DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Default damping for the damped least-squares pseudoinverse.
pub const DEFAULT_DLS_LAMBDA: f64 = 0.01;

const AXIS_NORM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

macro_rules! joint_space_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                $name(DVector::zeros(n))
            }

            pub fn from_vec(values: Vec<f64>) -> Self {
                $name(DVector::from_vec(values))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn as_dvector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_dvector(self) -> DVector<f64> {
                self.0
            }

            pub fn iter(&self) -> impl Iterator<Item = &f64> {
                self.0.iter()
            }

            pub fn norm(&self) -> f64 {
                self.0.norm()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub(crate) fn check_len(&self, expected: usize, what: &'static str) -> Result<()> {
                if self.len() == expected {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch {
                        what,
                        expected,
                        found: self.len(),
                    })
                }
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                $name(v)
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name::from_vec(v)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(v: $name) -> Self {
                v.0.as_slice().to_vec()
            }
        }

        impl Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl IndexMut<usize> for $name {
            fn index_mut(&mut self, i: usize) -> &mut f64 {
                &mut self.0[i]
            }
        }
    };
}

joint_space_vector!(
    /// Joint positions (rad), velocities (rad/s) or accelerations (rad/s²).
    JointVector
);
joint_space_vector!(
    /// Joint torques in N·m.
    TorqueVector
);

/// One revolute joint: fixed transform from the previous joint frame, then a
/// rotation about `axis` (local, unit norm).
#[derive(Debug, Clone, PartialEq)]
pub struct JointDescriptor {
    pub parent_transform: Pose,
    pub axis: Vector3<f64>,
}

impl JointDescriptor {
    pub fn new(parent_transform: Pose, axis: Vector3<f64>) -> Result<Self> {
        check_axis(&axis).map_err(|r| Error::invalid("joint axis", r))?;
        Ok(JointDescriptor {
            parent_transform,
            axis,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LimitsFile", into = "LimitsFile")]
pub struct JointLimits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub velocity_max: Vec<f64>,
}

impl JointLimits {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, velocity_max: Vec<f64>) -> Result<Self> {
        let limits = JointLimits {
            lower,
            upper,
            velocity_max,
        };
        limits
            .validate()
            .map_err(|r| Error::invalid("joint limits", r))?;
        Ok(limits)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        q.len() == self.len()
            && q
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.lower.len();
        if self.upper.len() != n || self.velocity_max.len() != n {
            return Err(format!(
                "lower/upper/velocity lengths differ ({}, {}, {})",
                n,
                self.upper.len(),
                self.velocity_max.len()
            ));
        }
        for i in 0..n {
            if !(self.lower[i] < self.upper[i]) {
                return Err(format!(
                    "joint {i}: lower {} must be below upper {}",
                    self.lower[i], self.upper[i]
                ));
            }
            if !(self.velocity_max[i] > 0.0) || !self.velocity_max[i].is_finite() {
                return Err(format!(
                    "joint {i}: velocity limit {} must be positive",
                    self.velocity_max[i]
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LimitsFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
    velocity: Vec<f64>,
}

impl TryFrom<LimitsFile> for JointLimits {
    type Error = String;
    fn try_from(f: LimitsFile) -> std::result::Result<Self, String> {
        let limits = JointLimits {
            lower: f.lower,
            upper: f.upper,
            velocity_max: f.velocity,
        };
        limits.validate()?;
        Ok(limits)
    }
}

impl From<JointLimits> for LimitsFile {
    fn from(l: JointLimits) -> Self {
        LimitsFile {
            lower: l.lower,
            upper: l.upper,
            velocity: l.velocity_max,
        }
    }
}

/// Mass properties of one moving link, expressed in the frame after its joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinkFile", into = "LinkFile")]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// About the centre of mass.
    pub inertia: Matrix3<f64>,
}

impl LinkInertia {
    pub fn new(mass: f64, com: Vector3<f64>, inertia: Matrix3<f64>) -> Result<Self> {
        let link = LinkInertia { mass, com, inertia };
        link.validate().map_err(|r| Error::invalid("link inertia", r))?;
        Ok(link)
    }

    /// Point mass: zero rotational inertia is not positive-definite, so a tiny
    /// isotropic term stands in.
    pub fn point_mass(mass: f64, com: Vector3<f64>) -> Result<Self> {
        Self::new(mass, com, Matrix3::identity() * 1e-12)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(format!("mass {} must be positive", self.mass));
        }
        let asym = (self.inertia - self.inertia.transpose()).norm();
        if asym > SYMMETRY_TOL * self.inertia.norm().max(1.0) {
            return Err("inertia tensor must be symmetric".into());
        }
        let eig = SymmetricEigen::new(self.inertia).eigenvalues;
        if eig.iter().any(|e| !(*e > 0.0)) {
            return Err(format!(
                "inertia tensor must be positive-definite (eigenvalues {:?})",
                eig.as_slice()
            ));
        }
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let slack = 1e-12 * (a + b + c);
        if a + b + slack < c || a + c + slack < b || b + c + slack < a {
            return Err("principal moments violate the triangle inequality".into());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LinkFile {
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
}

impl TryFrom<LinkFile> for LinkInertia {
    type Error = String;
    fn try_from(f: LinkFile) -> std::result::Result<Self, String> {
        let i = f.inertia;
        let link = LinkInertia {
            mass: f.mass,
            com: Vector3::from(f.com),
            inertia: Matrix3::new(
                i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2],
            ),
        };
        link.validate()?;
        Ok(link)
    }
}

impl From<LinkInertia> for LinkFile {
    fn from(l: LinkInertia) -> Self {
        let m = &l.inertia;
        LinkFile {
            mass: l.mass,
            com: l.com.into(),
            inertia: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
    }
}

/// Kinematic and inertial description of an N-joint revolute chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ArmModel {
    pub joints: Vec<JointDescriptor>,
    /// Flange → instrument tip.
    pub tool_transform: Pose,
    pub limits: JointLimits,
    pub link_inertias: Vec<LinkInertia>,
    /// m/s²
    pub gravity: Vector3<f64>,
    /// Default seed configuration for inverse kinematics.
    pub home: JointVector,
}

impl ArmModel {
    pub fn new(
        joints: Vec<JointDescriptor>,
        tool_transform: Pose,
        limits: JointLimits,
        link_inertias: Vec<LinkInertia>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        let n = joints.len();
        let model = ArmModel {
            joints,
            tool_transform,
            limits,
            link_inertias,
            gravity,
            home: JointVector::zeros(n),
        };
        model
            .validate()
            .map_err(|r| Error::invalid("arm model", r))?;
        Ok(model)
    }

    pub fn with_home(mut self, home: JointVector) -> Result<Self> {
        home.check_len(self.dof(), "home configuration")?;
        if !self.limits.contains(&home) {
            return Err(Error::invalid("arm model", "home configuration outside joint limits"));
        }
        self.home = home;
        Ok(self)
    }

    /// Number of joints.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// The shipped 7-joint profile approximating a KUKA LBR Med 7 R800 with
    /// the rod-carrying instrument on the flange.
    pub fn default_profile() -> Self {
        Self::from_json(include_str!("../../profiles/lbr_med7_r800.json"))
            .expect("shipped arm profile is valid")
    }

    /// Parse a model file. Diagnostics carry the line and column of the
    /// offending value.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("model file", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub(crate) fn check_q(&self, q: &JointVector) -> Result<()> {
        q.check_len(self.dof(), "joint vector")
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.joints.len();
        if n == 0 {
            return Err("at least one joint is required".into());
        }
        for (i, j) in self.joints.iter().enumerate() {
            check_axis(&j.axis).map_err(|r| format!("joint {i}: {r}"))?;
            if !j.parent_transform.is_proper(1e-9) {
                return Err(format!("joint {i}: origin rotation is not a proper rotation"));
            }
        }
        if !self.tool_transform.is_proper(1e-9) {
            return Err("tool rotation is not a proper rotation".into());
        }
        self.limits.validate()?;
        if self.limits.len() != n {
            return Err(format!(
                "limits cover {} joints, model has {n}",
                self.limits.len()
            ));
        }
        if self.link_inertias.len() != n {
            return Err(format!(
                "{} link inertias given, model has {n} moving links",
                self.link_inertias.len()
            ));
        }
        for (i, l) in self.link_inertias.iter().enumerate() {
            l.validate().map_err(|r| format!("link {i}: {r}"))?;
        }
        if self.home.len() != n {
            return Err(format!("home has {} entries, model has {n}", self.home.len()));
        }
        if !self.limits.contains(&self.home) {
            return Err("home configuration outside joint limits".into());
        }
        Ok(())
    }
}

fn check_axis(axis: &Vector3<f64>) -> std::result::Result<(), String> {
    let norm = axis.norm();
    if (norm - 1.0).abs() > AXIS_NORM_TOL {
        Err(format!("axis must be a unit vector (norm {norm})"))
    } else {
        Ok(())
    }
}

/// `{xyz, rpy}` pair as written in model and scene files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Origin {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl From<Origin> for Pose {
    fn from(o: Origin) -> Self {
        Pose::from_xyz_rpy(o.xyz, o.rpy)
    }
}

impl From<Pose> for Origin {
    fn from(p: Pose) -> Self {
        let (r, pch, y) = nalgebra::Rotation3::from_matrix_unchecked(p.rotation).euler_angles();
        Origin {
            xyz: p.translation.into(),
            rpy: [r, pch, y],
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
struct UnitAxis(Vector3<f64>);

impl TryFrom<[f64; 3]> for UnitAxis {
    type Error = String;
    fn try_from(v: [f64; 3]) -> std::result::Result<Self, String> {
        let axis = Vector3::from(v);
        check_axis(&axis)?;
        Ok(UnitAxis(axis))
    }
}

impl From<UnitAxis> for [f64; 3] {
    fn from(a: UnitAxis) -> Self {
        a.0.into()
    }
}

#[derive(Serialize, Deserialize)]
struct JointFile {
    origin: Origin,
    axis: UnitAxis,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    joints: Vec<JointFile>,
    tool: Origin,
    limits: JointLimits,
    links: Vec<LinkInertia>,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

impl TryFrom<ModelFile> for ArmModel {
    type Error = String;
    fn try_from(f: ModelFile) -> std::result::Result<Self, String> {
        let n = f.joints.len();
        let model = ArmModel {
            joints: f
                .joints
                .into_iter()
                .map(|j| JointDescriptor {
                    parent_transform: j.origin.into(),
                    axis: j.axis.0,
                })
                .collect(),
            tool_transform: f.tool.into(),
            limits: f.limits,
            link_inertias: f.links,
            gravity: Vector3::from(f.gravity),
            home: f
                .home
                .map(JointVector::from_vec)
                .unwrap_or_else(|| JointVector::zeros(n)),
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<ArmModel> for ModelFile {
    fn from(m: ArmModel) -> Self {
        ModelFile {
            joints: m
                .joints
                .into_iter()
                .map(|j| JointFile {
                    origin: j.parent_transform.into(),
                    axis: UnitAxis(j.axis),
                })
                .collect(),
            tool: m.tool_transform.into(),
            limits: m.limits,
            links: m.link_inertias,
            gravity: m.gravity.into(),
            home: Some(m.home.into()),
        }
    }
}
