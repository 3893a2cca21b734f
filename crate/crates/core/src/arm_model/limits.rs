use super::{JointLimits, JointVector};
use serde::{Deserialize, Serialize};

/// Joints whose command was altered by [`clamp_to_limits`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LimitEvent {
    /// Stopped at a position limit.
    pub position_joints: Vec<usize>,
    /// Rate capped at the velocity limit.
    pub velocity_joints: Vec<usize>,
}

impl LimitEvent {
    pub fn position_limited(&self) -> bool {
        !self.position_joints.is_empty()
    }

    pub fn velocity_capped(&self) -> bool {
        !self.velocity_joints.is_empty()
    }
}

/// Cap joint rates to the velocity limits, then shorten any rate that would
/// carry a joint past a position limit within one Euler step of `dt`.
pub fn clamp_to_limits(
    q: &JointVector,
    dq: &JointVector,
    limits: &JointLimits,
    dt: f64,
) -> (JointVector, Option<LimitEvent>) {
    debug_assert!(dt > 0.0);
    debug_assert_eq!(q.len(), dq.len());
    let mut out = dq.clone();
    let mut event = LimitEvent::default();
    for i in 0..dq.len() {
        let vmax = limits.velocity_max[i];
        let mut v = dq[i];
        if v.abs() > vmax {
            v = vmax.copysign(v);
            event.velocity_joints.push(i);
        }
        let (lo, hi) = (limits.lower[i], limits.upper[i]);
        let next = q[i] + v * dt;
        if next > hi || next < lo {
            let bound = if next > hi { hi } else { lo };
            v = (bound - q[i]) / dt;
            // Rounding can leave q + v·dt one ulp outside; step toward zero until inside.
            while v != 0.0 && !(lo..=hi).contains(&(q[i] + v * dt)) {
                v = if v > 0.0 { v.next_down() } else { v.next_up() };
            }
            event.position_joints.push(i);
        }
        out[i] = v;
    }
    let event = (event.position_limited() || event.velocity_capped()).then_some(event);
    (out, event)
}
