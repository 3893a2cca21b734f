//! Many independent seeded trials of one scenario. Trials share nothing, so
//! with the `parallel` feature they run on the rayon pool; results always come
//! back in seed order.

use crate::error::Result;
use crate::scenario::Scenario;
use crate::sim::{run_trial, SimConfig, TrialRun};

/// Seed of the `index`-th trial of a batch.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// One trial of the batch, numbered from 1.
pub fn run_one(scenario: &Scenario, base_seed: u64, index: usize) -> Result<TrialRun> {
    let cfg = SimConfig {
        seed: trial_seed(base_seed, index),
        ..scenario.sim.clone()
    };
    let mut op = scenario.operator()?;
    let mut run = run_trial(&scenario.model, &scenario.scene, &scenario.gains, &scenario.task, op.as_mut(), &cfg)?;
    run.record.attempt_index = index as u32 + 1;
    Ok(run)
}

pub fn run_trials_sequential(scenario: &Scenario, trials: usize, base_seed: u64) -> Result<Vec<TrialRun>> {
    (0..trials).map(|i| run_one(scenario, base_seed, i)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_trials_parallel(scenario: &Scenario, trials: usize, base_seed: u64) -> Result<Vec<TrialRun>> {
    use rayon::prelude::*;
    (0..trials)
        .into_par_iter()
        .map(|i| run_one(scenario, base_seed, i))
        .collect()
}

/// Parallel when built with `parallel`, sequential otherwise.
pub fn run_trials(scenario: &Scenario, trials: usize, base_seed: u64) -> Result<Vec<TrialRun>> {
    #[cfg(feature = "parallel")]
    {
        run_trials_parallel(scenario, trials, base_seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_trials_sequential(scenario, trials, base_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::TaskId;

    fn short() -> Scenario {
        let mut s = Scenario::default_for_task(TaskId::HYBRID);
        s.task.time_limit = 1.0;
        s
    }

    #[test]
    fn records_are_numbered_and_seeded() {
        let runs = run_trials_sequential(&short(), 3, 40).unwrap();
        let ids: Vec<_> = runs.iter().map(|r| (r.record.attempt_index, r.record.seed)).collect();
        assert_eq!(ids, vec![(1, Some(40)), (2, Some(41)), (3, Some(42))]);
    }

    #[test]
    fn dispatch_matches_sequential() {
        let s = short();
        let a = run_trials(&s, 4, 7).unwrap();
        let b = run_trials_sequential(&s, 4, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.final_state, y.final_state);
        }
    }

    #[test]
    fn zero_trials_is_empty() {
        assert!(run_trials(&short(), 0, 0).unwrap().is_empty());
    }
}
