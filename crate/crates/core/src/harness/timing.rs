use std::time::Instant;

use crate::agents::{am_policy, Policy};
use crate::env::{Environment, SystemState};
use crate::error::{Error, Result};

pub const WARMUP_DECISIONS: usize = 10;
pub const MIN_TIMED_STATES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionTiming {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

/// Wall-clock time of `policy.decide` on each state, environment stepping
/// excluded. The first `WARMUP_DECISIONS` calls are discarded.
pub fn measure_decision_time(
    policy: &mut dyn Policy,
    env: &Environment,
    states: &[SystemState],
) -> Result<DecisionTiming> {
    if states.len() < MIN_TIMED_STATES + WARMUP_DECISIONS {
        return Err(Error::invalid(format!(
            "need at least {} states, got {}",
            MIN_TIMED_STATES + WARMUP_DECISIONS,
            states.len()
        )));
    }
    let mut ms = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let start = Instant::now();
        let d = policy.decide(env, s)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(d);
        if i >= WARMUP_DECISIONS {
            ms.push(elapsed);
        }
    }
    ms.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let idx = ((ms.len() - 1) as f64 * p).round() as usize;
        ms[idx]
    };
    Ok(DecisionTiming {
        median_ms: super::median(&ms),
        p95_ms: q(0.95),
        samples: ms.len(),
    })
}

/// States visited by rolling the environment forward under the follow-me
/// rule, restarting the episode whenever it ends.
pub fn sample_states(env: &mut Environment, count: usize) -> Result<Vec<SystemState>> {
    let mut out = Vec::with_capacity(count);
    let mut state = env.reset();
    while out.len() < count {
        if env.is_done(&state) {
            state = env.reset();
        }
        out.push(state.clone());
        let d = am_policy(&state);
        state = env.step(&state, &d)?.state;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NeverMigrate;
    use crate::env::EnvConfig;
    use crate::topology::{Connectivity, Topology};
    use crate::traces::{synthetic_traces, MobilityModel, SyntheticSpec};

    #[test]
    fn timing_statistics() {
        let topo = Topology::grid(2, 2, 2000.0, Connectivity::High).unwrap();
        let tr = synthetic_traces(&SyntheticSpec {
            model: MobilityModel::RandomWaypoint,
            n_vehicles: 5,
            slots: 30,
            region_side: 2000.0,
            speed: 5.0,
            slot_seconds: 60.0,
            seed: 1,
        })
        .unwrap();
        let mut env = Environment::new(EnvConfig::new(topo, 5, 30, 1), &tr).unwrap();
        let states = sample_states(&mut env, 120).unwrap();
        assert_eq!(states.len(), 120);
        let t = measure_decision_time(&mut NeverMigrate, &env, &states).unwrap();
        assert_eq!(t.samples, 110);
        assert!(t.median_ms <= t.p95_ms);
        assert!(measure_decision_time(&mut NeverMigrate, &env, &states[..50]).is_err());
    }
}
