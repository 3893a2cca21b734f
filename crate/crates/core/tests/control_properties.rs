mod common;

use common::maneuver;
use proptest::prelude::*;
use trocar_core::arm_model::{
    estimate_external_wrench, forward_kinematics, geometric_jacobian, inverse_dynamics, ArmModel, JointVector,
    RefPoint,
};
use trocar_core::control::{control_tick, ControlMode, ControllerState, Gains, PedalState, TaskId};
use trocar_core::scene::Scene;
use trocar_core::sim::{sim_step, HumanHandModel, SimConfig, SimState, StepContext};
use trocar_core::trial::TaskSpec;

const DT: f64 = 0.01;



#[test]
fn rotation_about_the_tip_keeps_the_tip_fixed() {
    let (drift, angle) = maneuver(ControlMode::TeleopRotational, 200);
    assert!(drift < 1e-4, "tip drift {drift}");
    assert!((angle - 0.4).abs() < 0.02, "rotated {angle}");
}

#[test]
fn translation_keeps_the_orientation() {
    let (moved, angle) = maneuver(ControlMode::TeleopTranslational, 200);
    assert!(angle < 1e-3, "orientation drift {angle}");
    assert!((moved - 0.01).abs() < 5e-4, "moved {moved}");
}

#[test]
fn model_torques_estimate_zero_wrench_every_tick() {
    let model = ArmModel::default_profile();
    let scene = Scene::default();
    let cfg = SimConfig::default();
    let ctx = StepContext {
        model: &model,
        scene: &scene,
        task: TaskId::HYBRID,
        cfg: &cfg,
    };
    let (_, mut s) = trocar_core::sim::initial_state(&model, &scene, &TaskSpec::for_task(TaskId::HYBRID), 4).unwrap();
    let mut c = ControllerState::new(Gains::default());
    let pedal = PedalState::new([true, false, false, false], [0.3, -0.2], 0.5);
    let zero = JointVector::zeros(7);
    for _ in 0..100 {
        let mut probe = s.clone();
        let tau = trocar_core::sim::simulate_measured_torques(&model, &mut probe, None, &cfg).unwrap();
        let tau_model = inverse_dynamics(&model, &s.q, &s.dq, &zero, &model.gravity).unwrap();
        let j = geometric_jacobian(&model, &s.q, RefPoint::Tip).unwrap();
        let w = estimate_external_wrench(&j, &tau, &tau_model, 0.0).unwrap();
        assert!(w.force.norm() < 1e-9 && w.torque.norm() < 1e-9);
        (s, c) = sim_step(&s, &c, &pedal, None, &ctx).unwrap();
    }
}

#[test]
fn pushing_the_tip_moves_it_along_the_push() {
    let model = ArmModel::default_profile();
    let q = model.home.clone();
    let zero = JointVector::zeros(7);
    let j = geometric_jacobian(&model, &q, RefPoint::Tip).unwrap();
    let tau_model = inverse_dynamics(&model, &q, &zero, &zero, &model.gravity).unwrap();
    let f = nalgebra::DVector::from_vec(vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let tau = trocar_core::arm_model::TorqueVector::from(tau_model.as_dvector() + j.matrix.transpose() * f);
    let ctrl = ControllerState::new(Gains::default());
    let (_, cmd) =
        control_tick(&ctrl, &model, &q, &zero, &PedalState::held(), &tau, TaskId::CO_MANIPULATION, DT).unwrap();
    let v = &j.matrix * cmd.dq.as_dvector();
    assert!(v[0] > 0.0);
    assert!(v[0] > 10.0 * v[1].abs().max(v[2].abs()));
}

fn pedal_strategy() -> impl Strategy<Value = PedalState> {
    (
        prop::array::uniform4(any::<bool>()),
        prop::array::uniform2(-1.5f64..1.5),
        -1.5f64..1.5,
    )
        .prop_map(|(b, j, r)| PedalState::new(b, j, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn released_deadman_means_no_motion(
        trace in prop::collection::vec((pedal_strategy(), any::<bool>()), 1..60),
        task in 1u8..=3,
        seed in any::<u64>(),
    ) {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let task = TaskId::new(task).unwrap();
        let cfg = SimConfig { seed, torque_noise_std: 0.05, ..SimConfig::default() };
        let ctx = StepContext { model: &model, scene: &scene, task, cfg: &cfg };
        let mut s = SimState::at_rest(&model, &scene, model.home.clone(), seed).unwrap();
        let mut c = ControllerState::new(Gains::default());
        let tip = forward_kinematics(&model, &s.q).unwrap();
        let mut target = tip;
        target.translation.x += 0.05;
        let hand = HumanHandModel::at_tip(&model, target, [200.0; 6], [1.0; 6], 20.0);
        for (pedal, with_hand) in trace {
            let before = s.q.clone();
            let h = with_hand.then_some(&hand);
            (s, c) = sim_step(&s, &c, &pedal, h, &ctx).unwrap();
            if !pedal.deadman() {
                prop_assert!(s.dq.iter().all(|v| *v == 0.0));
                prop_assert_eq!(&s.q, &before);
                prop_assert_eq!(s.mode, ControlMode::Hold);
            }
        }
    }
}
