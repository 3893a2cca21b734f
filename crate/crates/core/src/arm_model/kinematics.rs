use super::linalg::pseudoinverse;
use super::pose::{axis_angle_matrix, rotation_log, Frame, Pose, RefPoint, Twist};
use super::{ArmModel, JointVector};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Vector3, Vector6};

/// 6×N map from joint rates to `[linear; angular]` velocity in the base frame,
/// the linear rows taken at `reference_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub reference_point: RefPoint,
}

impl Jacobian {
    pub fn new(matrix: DMatrix<f64>, reference_point: RefPoint) -> Result<Self> {
        if matrix.nrows() != 6 {
            return Err(Error::DimensionMismatch {
                what: "jacobian rows",
                expected: 6,
                found: matrix.nrows(),
            });
        }
        Ok(Jacobian {
            matrix,
            reference_point,
        })
    }

    pub fn dof(&self) -> usize {
        self.matrix.ncols()
    }

    /// Tip twist produced by joint rates `dq`.
    pub fn apply(&self, dq: &JointVector) -> Result<Twist> {
        dq.check_len(self.dof(), "joint rates")?;
        let v = &self.matrix * dq.as_dvector();
        Ok(Twist {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
            frame: Frame::Base,
            reference_point: self.reference_point,
        })
    }
}

/// Frames after each joint's rotation, `F_1 … F_N`.
fn link_frames(model: &ArmModel, q: &JointVector) -> Vec<Pose> {
    let mut frames = Vec::with_capacity(model.dof());
    let mut current = Pose::identity();
    for (joint, angle) in model.joints.iter().zip(q.iter()) {
        let rot = Pose::new(axis_angle_matrix(&joint.axis, *angle), Vector3::zeros());
        current = current.compose(&joint.parent_transform).compose(&rot);
        frames.push(current);
    }
    frames
}

/// Origin and axis of one joint, base frame.
pub(crate) type JointAxis = (Vector3<f64>, Vector3<f64>);

/// Per-joint origin and axis in the base frame.
pub(crate) fn joint_axes(model: &ArmModel, q: &JointVector) -> (Vec<Pose>, Vec<JointAxis>) {
    let frames = link_frames(model, q);
    let mut axes = Vec::with_capacity(model.dof());
    let mut prev = Pose::identity();
    for (i, joint) in model.joints.iter().enumerate() {
        let g = prev.compose(&joint.parent_transform);
        axes.push((g.translation, g.rotation * joint.axis));
        prev = frames[i];
    }
    (frames, axes)
}

/// Tip pose in the base frame.
pub fn forward_kinematics(model: &ArmModel, q: &JointVector) -> Result<Pose> {
    model.check_q(q)?;
    let frames = link_frames(model, q);
    Ok(frames[model.dof() - 1].compose(&model.tool_transform))
}

/// Pose of the frame after joint `link_index`. Index 0 is the first joint's
/// fixed origin; index N is the flange.
pub fn link_frame(model: &ArmModel, q: &JointVector, link_index: usize) -> Result<Pose> {
    model.check_q(q)?;
    let n = model.dof();
    if link_index > n {
        return Err(Error::IndexOutOfRange {
            what: "link",
            index: link_index,
            max: n,
        });
    }
    if link_index == 0 {
        return Ok(model.joints[0].parent_transform);
    }
    Ok(link_frames(model, q)[link_index - 1])
}

/// Jacobian of a point rigidly attached to link `link` (1..=N), given in
/// that link's frame. Columns of joints beyond `link` are zero.
pub fn point_jacobian(
    model: &ArmModel,
    q: &JointVector,
    link: usize,
    local_point: &Vector3<f64>,
) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    let n = model.dof();
    if link == 0 || link > n {
        return Err(Error::IndexOutOfRange {
            what: "link",
            index: link,
            max: n,
        });
    }
    let (frames, axes) = joint_axes(model, q);
    let p = frames[link - 1].transform_point(local_point);
    let mut j = DMatrix::zeros(6, n);
    for (i, (origin, axis)) in axes.iter().take(link).enumerate() {
        let lin = axis.cross(&(p - origin));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(axis);
    }
    Ok(j)
}

/// Geometric Jacobian at the tip or flange.
pub fn geometric_jacobian(
    model: &ArmModel,
    q: &JointVector,
    reference_point: RefPoint,
) -> Result<Jacobian> {
    let local = match reference_point {
        RefPoint::Tip => model.tool_transform.translation,
        RefPoint::Flange => Vector3::zeros(),
    };
    let matrix = point_jacobian(model, q, model.dof(), &local)?;
    Jacobian::new(matrix, reference_point)
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    pub max_iterations: usize,
    /// Stop once the stacked position (m) / rotation-vector (rad) error norm is below this.
    pub tolerance: f64,
    pub lambda: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            max_iterations: 500,
            tolerance: 1e-10,
            lambda: 1e-4,
        }
    }
}

/// Iterative damped least-squares IK for a full tip pose, clamped to the
/// joint limits at every iteration.
pub fn solve_ik(
    model: &ArmModel,
    target: &Pose,
    seed: &JointVector,
    opts: &IkOptions,
) -> Result<JointVector> {
    model.check_q(seed)?;
    let limits = &model.limits;
    let mut q = seed.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let pose = forward_kinematics(model, &q)?;
        let dp = target.translation - pose.translation;
        let dr = rotation_log(&(target.rotation * pose.rotation.transpose()));
        let err = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
        residual = err.norm();
        if residual < opts.tolerance {
            return Ok(q);
        }
        let j = geometric_jacobian(model, &q, RefPoint::Tip)?;
        let dq: DVector<f64> = pseudoinverse(&j.matrix, opts.lambda) * DVector::from_column_slice(err.as_slice());
        for i in 0..q.len() {
            q[i] = (q[i] + dq[i]).clamp(limits.lower[i], limits.upper[i]);
        }
    }
    Err(Error::IkNoConvergence { residual })
}
