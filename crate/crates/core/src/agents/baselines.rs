use crate::env::{Environment, SystemState};
use crate::error::Result;
use crate::topology::NodeId;

use super::{Decision, Policy};

/// Follow the vehicle: host each instance on the node the vehicle is
/// attached to.
pub fn am_policy(state: &SystemState) -> Vec<NodeId> {
    state.vehicles.iter().map(|v| v.attached).collect()
}

/// Stay put: keep each instance where it was created.
pub fn nm_policy(state: &SystemState) -> Vec<NodeId> {
    state.vehicles.iter().map(|v| v.hosting).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysMigrate;

impl Policy for AlwaysMigrate {
    fn decide(&mut self, _env: &Environment, state: &SystemState) -> Result<Decision> {
        Ok(Decision::nodes(am_policy(state)))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NeverMigrate;

impl Policy for NeverMigrate {
    fn decide(&mut self, _env: &Environment, state: &SystemState) -> Result<Decision> {
        Ok(Decision::nodes(nm_policy(state)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, EnvConfig};
    use crate::topology::{Connectivity, Position, Topology};
    use crate::traces::{synthetic_traces, MobilityModel, SyntheticSpec, VehicleTrace};

    fn env(traces: &[VehicleTrace], horizon: usize) -> (Environment, SystemState) {
        let topo = Topology::grid(3, 3, 3000.0, Connectivity::High).unwrap();
        reset(EnvConfig::new(topo, traces.len(), horizon, 1), traces).unwrap()
    }

    #[test]
    fn am_follows_attachment() {
        let tr = vec![VehicleTrace {
            vehicle_id: 0,
            positions: vec![Position::new(2500.0, 2500.0); 5],
        }];
        let (mut e, mut s) = env(&tr, 5);
        for _ in 0..5 {
            let d = am_policy(&s);
            assert_eq!(d, vec![NodeId(8)]);
            let out = e.step(&s, &d).unwrap();
            assert_eq!(out.breakdowns()[0].migration, 0.0);
            s = out.state;
        }
    }

    #[test]
    fn nm_never_migrates_and_backhaul_tracks_distance() {
        let tr = vec![VehicleTrace {
            vehicle_id: 0,
            positions: (0..3)
                .map(|c| Position::new(500.0 + 1000.0 * c as f64, 500.0))
                .collect(),
        }];
        let (mut e, mut s) = env(&tr, 3);
        let start = s.vehicles[0].hosting;
        let mut st = Vec::new();
        while !e.is_done(&s) {
            let d = nm_policy(&s);
            assert_eq!(d, vec![start]);
            let out = e.step(&s, &d).unwrap();
            assert_eq!(out.breakdowns()[0].migration, 0.0);
            st.push(out.breakdowns()[0].backhaul);
            s = out.state;
        }
        assert!(st[0] < st[1]);
    }

    #[test]
    fn nm_migration_count_zero_on_random_motion() {
        let tr = synthetic_traces(&SyntheticSpec {
            model: MobilityModel::RandomWaypoint,
            n_vehicles: 6,
            slots: 20,
            region_side: 3000.0,
            speed: 15.0,
            slot_seconds: 60.0,
            seed: 3,
        })
        .unwrap();
        let (mut e, mut s) = env(&tr, 20);
        while !e.is_done(&s) {
            let out = e.step(&s, &nm_policy(&s)).unwrap();
            assert_eq!(out.evaluation.migrations, 0);
            s = out.state;
        }
    }
}
