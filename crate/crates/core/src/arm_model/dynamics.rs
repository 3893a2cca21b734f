use super::kinematics::{joint_axes, Jacobian};
use super::linalg::pseudoinverse;
use super::pose::Wrench;
use super::{ArmModel, JointVector, TorqueVector};
use crate::error::{Error, Result};
use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Recursive Newton–Euler inverse dynamics, all quantities in the base frame.
///
/// Gravity enters as an upward acceleration of the base, so with
/// `qd = qdd = 0` the result is the gravity-compensation torque.
pub fn inverse_dynamics(
    model: &ArmModel,
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
    gravity: &Vector3<f64>,
) -> Result<TorqueVector> {
    let n = model.dof();
    model.check_q(q)?;
    qd.check_len(n, "joint velocity")?;
    qdd.check_len(n, "joint acceleration")?;

    let (frames, axes) = joint_axes(model, q);

    let mut com = vec![Vector3::zeros(); n];
    let mut force = vec![Vector3::zeros(); n];
    let mut moment = vec![Vector3::zeros(); n];

    let mut w_prev = Vector3::zeros();
    let mut a_prev = Vector3::zeros();
    let mut acc_prev = -gravity;
    let mut p_prev = axes[0].0;
    for k in 0..n {
        let (p, z) = axes[k];
        let r = p - p_prev;
        let acc = acc_prev + a_prev.cross(&r) + w_prev.cross(&w_prev.cross(&r));
        let w = w_prev + z * qd[k];
        let a = a_prev + z * qdd[k] + w_prev.cross(&(z * qd[k]));

        let link = &model.link_inertias[k];
        let rot = frames[k].rotation;
        let c = frames[k].transform_point(&link.com);
        let inertia = rot * link.inertia * rot.transpose();
        let rc = c - p;
        let acc_c = acc + a.cross(&rc) + w.cross(&w.cross(&rc));

        com[k] = c;
        force[k] = acc_c * link.mass;
        moment[k] = inertia * a + w.cross(&(inertia * w));

        w_prev = w;
        a_prev = a;
        acc_prev = acc;
        p_prev = p;
    }

    let mut tau = TorqueVector::zeros(n);
    let mut f_next = Vector3::zeros();
    let mut n_next = Vector3::zeros();
    let mut p_next = Vector3::zeros();
    for k in (0..n).rev() {
        let (p, z) = axes[k];
        let f = force[k] + f_next;
        let mut nk = moment[k] + (com[k] - p).cross(&force[k]) + n_next;
        if k + 1 < n {
            nk += (p_next - p).cross(&f_next);
        }
        tau[k] = z.dot(&nk);
        f_next = f;
        n_next = nk;
        p_next = p;
    }
    Ok(tau)
}

/// Tip wrench equivalent to the torque residual: `f = (Jᵀ)⁺ (τ_measured − τ_model)`,
/// using the same damped SVD inverse as the resolved-rate law.
pub fn estimate_external_wrench(
    j: &Jacobian,
    tau_measured: &TorqueVector,
    tau_model: &TorqueVector,
    lambda: f64,
) -> Result<Wrench> {
    let n = j.dof();
    tau_measured.check_len(n, "measured torque")?;
    tau_model.check_len(n, "model torque")?;
    let residual: DVector<f64> = tau_measured.as_dvector() - tau_model.as_dvector();
    let jt_pinv = pseudoinverse(&j.matrix.transpose(), lambda);
    let f = jt_pinv * residual;
    if f.len() != 6 {
        return Err(Error::DimensionMismatch {
            what: "wrench",
            expected: 6,
            found: f.len(),
        });
    }
    Ok(Wrench::from_vector6(
        &Vector6::from_column_slice(f.as_slice()),
        j.reference_point,
    ))
}

/// First-order low-pass on a torque signal. `time_constant` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueFilter {
    pub time_constant: f64,
    #[serde(skip)]
    state: Option<TorqueVector>,
}

impl TorqueFilter {
    pub fn new(time_constant: f64) -> Self {
        TorqueFilter {
            time_constant,
            state: None,
        }
    }

    pub fn apply(&mut self, input: &TorqueVector, dt: f64) -> TorqueVector {
        let out = match &self.state {
            Some(prev) if prev.len() == input.len() => {
                let blend = dt / (self.time_constant + dt);
                let v = prev.as_dvector() + (input.as_dvector() - prev.as_dvector()) * blend;
                TorqueVector::from(v)
            }
            _ => input.clone(),
        };
        self.state = Some(out.clone());
        out
    }
}
