//! The per-slot decision process.
//!
//! Events inside one slot happen in a fixed order: the controller decides a
//! hosting node per vehicle, instances migrate, vehicles move to their next
//! trace point and re-attach to the nearest base station, the slot's task is
//! uploaded (access link, then backhaul when the instance is not on the
//! attached node), and each server splits its capacity among the instances it
//! hosts. The reward is the negated sum of every vehicle's delay.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{self, AllocationRequest};
use crate::delay::{
    self, mb_to_bits, DelayBreakdown, DelayParams, ServiceProfile, TaskSpec, MIN_LINK_DISTANCE_M,
};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};
use crate::topology::{NodeId, Position, Topology};
use crate::traces::VehicleTrace;

/// Observation features per vehicle: x, y, D, C, S, previous decision.
pub const OBS_PER_VEHICLE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    #[default]
    Optimal,
    Proportional,
}

impl AllocationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::Optimal => "optimal",
            AllocationMode::Proportional => "proportional",
        }
    }
}

impl std::str::FromStr for AllocationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "optimal" => Ok(AllocationMode::Optimal),
            "proportional" => Ok(AllocationMode::Proportional),
            other => Err(Error::invalid(format!("unknown allocation mode `{other}`"))),
        }
    }
}

/// Closed uniform sampling range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    /// Min-max normalisation into `[0, 1]`; degenerate ranges map to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn scaled(&self, k: f64) -> Range {
        Range::new(self.min * k, self.max * k)
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

/// Per-episode and per-slot workload sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadRanges {
    /// Task data per task, MB.
    pub data_mb: Range,
    /// Computational density, cycles/bit.
    pub density: Range,
    /// Transmit power, W.
    pub power_w: Range,
    /// Service state, MB.
    pub service_mb: Range,
}

impl Default for WorkloadRanges {
    fn default() -> Self {
        WorkloadRanges {
            data_mb: Range::new(0.5, 1.5),
            density: Range::new(200.0, 1000.0),
            power_w: Range::new(0.4, 0.6),
            service_mb: Range::new(0.5, 50.0),
        }
    }
}

impl WorkloadRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("data_mb", self.data_mb),
            ("density", self.density),
            ("power_w", self.power_w),
            ("service_mb", self.service_mb),
        ] {
            if !(r.min > 0.0 && r.max >= r.min && r.max.is_finite()) {
                return Err(Error::validation(
                    format!("env.workload.{name}"),
                    "range must satisfy 0 < min <= max",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub topology: Topology,
    pub params: DelayParams,
    pub n_vehicles: usize,
    pub horizon: usize,
    pub workload: WorkloadRanges,
    /// Tasks each vehicle submits per slot; their data amounts add up.
    pub tasks_per_slot: usize,
    pub allocation_mode: AllocationMode,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(topology: Topology, n_vehicles: usize, horizon: usize, seed: u64) -> Self {
        EnvConfig {
            topology,
            params: DelayParams::default(),
            n_vehicles,
            horizon,
            workload: WorkloadRanges::default(),
            tasks_per_slot: 1,
            allocation_mode: AllocationMode::Optimal,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(Error::invalid("need at least one vehicle"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least one slot"));
        }
        if self.tasks_per_slot == 0 {
            return Err(Error::invalid("tasks_per_slot must be at least 1"));
        }
        self.params.validate()?;
        self.workload.validate()
    }

    /// Range of the aggregated per-slot data amount, bits.
    pub fn data_bits_range(&self) -> Range {
        self.workload
            .data_mb
            .scaled(delay::BITS_PER_MB * self.tasks_per_slot as f64)
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.len()
    }

    pub fn observation_len(&self) -> usize {
        self.n_vehicles * OBS_PER_VEHICLE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub position: Position,
    /// Nearest base station.
    pub attached: NodeId,
    /// Node holding the service instance going into this slot.
    pub hosting: NodeId,
    pub task: TaskSpec,
    pub service: ServiceProfile,
    pub previous_decision: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub slot: usize,
    pub vehicles: Vec<VehicleState>,
}

impl SystemState {
    pub fn attached(&self) -> Vec<NodeId> {
        self.vehicles.iter().map(|v| v.attached).collect()
    }

    pub fn hosting(&self) -> Vec<NodeId> {
        self.vehicles.iter().map(|v| v.hosting).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How servers split their capacity in a slot.
#[derive(Clone, Copy, Debug)]
pub enum AllocationSource<'a> {
    Mode(AllocationMode),
    /// Per-vehicle logits; each server normalises the exponentials of the
    /// instances it hosts.
    Logits(&'a [f64]),
}

/// Result of evaluating one slot from a state, without advancing anything.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotEvaluation {
    pub breakdowns: Vec<DelayBreakdown>,
    /// Resource share of each vehicle's instance on its hosting node.
    pub proportions: Vec<f64>,
    pub positions: Vec<Position>,
    pub attached: Vec<NodeId>,
    pub hosting: Vec<NodeId>,
    pub migrations: usize,
}

impl SlotEvaluation {
    pub fn total_delay(&self) -> f64 {
        delay::slot_total(&self.breakdowns)
    }

    pub fn reward(&self) -> f64 {
        -self.total_delay()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: SystemState,
    pub reward: f64,
    pub evaluation: SlotEvaluation,
}

impl StepOutcome {
    pub fn breakdowns(&self) -> &[DelayBreakdown] {
        &self.evaluation.breakdowns
    }
}

#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    traces: Vec<VehicleTrace>,
    rng: SimRng,
}

/// Build an environment and its initial state.
pub fn reset(config: EnvConfig, traces: &[VehicleTrace]) -> Result<(Environment, SystemState)> {
    let mut env = Environment::new(config, traces)?;
    let state = env.reset();
    Ok((env, state))
}

impl Environment {
    pub fn new(config: EnvConfig, traces: &[VehicleTrace]) -> Result<Self> {
        config.validate()?;
        if traces.len() < config.n_vehicles {
            return Err(Error::invalid(format!(
                "{} traces for {} vehicles",
                traces.len(),
                config.n_vehicles
            )));
        }
        if traces.iter().any(VehicleTrace::is_empty) {
            return Err(Error::invalid("every trace needs at least one position"));
        }
        let rng = rng_from_seed(config.seed);
        Ok(Environment {
            traces: traces[..config.n_vehicles].to_vec(),
            config,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.config.topology
    }

    pub fn traces(&self) -> &[VehicleTrace] {
        &self.traces
    }

    /// Reseed and return the slot-0 state: every vehicle attached to and
    /// hosted on its nearest node, per-episode service size and transmit
    /// power drawn, first task drawn.
    pub fn reset(&mut self) -> SystemState {
        self.rng = rng_from_seed(self.config.seed);
        let side = self.config.topology.region_side();
        let mut vehicles = Vec::with_capacity(self.config.n_vehicles);
        for u in 0..self.config.n_vehicles {
            let position = self.traces[u].at(0).clamped(side);
            let attached = self.config.topology.nearest_node(position);
            let service = ServiceProfile {
                service_bits: mb_to_bits(self.config.workload.service_mb.sample(&mut self.rng)),
            };
            let tx_power = self.config.workload.power_w.sample(&mut self.rng);
            let task = self.sample_task(tx_power);
            vehicles.push(VehicleState {
                position,
                attached,
                hosting: attached,
                task,
                service,
                previous_decision: attached,
            });
        }
        SystemState { slot: 0, vehicles }
    }

    fn sample_task(&mut self, tx_power: f64) -> TaskSpec {
        let w = self.config.workload;
        let data_bits = (0..self.config.tasks_per_slot)
            .map(|_| mb_to_bits(w.data_mb.sample(&mut self.rng)))
            .sum();
        let density = w.density.sample(&mut self.rng);
        TaskSpec {
            data_bits,
            density,
            tx_power,
        }
    }

    /// Normalised flat feature vector, `OBS_PER_VEHICLE` entries per vehicle.
    pub fn observe(&self, state: &SystemState) -> Observation {
        let side = self.config.topology.region_side();
        let m = self.config.n_nodes() as f64;
        let data = self.config.data_bits_range();
        let density = self.config.workload.density;
        let service = self.config.workload.service_mb.scaled(delay::BITS_PER_MB);
        let mut out = Vec::with_capacity(state.vehicles.len() * OBS_PER_VEHICLE);
        for v in &state.vehicles {
            out.extend_from_slice(&[
                (v.position.x / side).clamp(0.0, 1.0),
                (v.position.y / side).clamp(0.0, 1.0),
                data.normalize(v.task.data_bits),
                density.normalize(v.task.density),
                service.normalize(v.service.service_bits),
                v.previous_decision.0 as f64 / m,
            ]);
        }
        Observation(out)
    }

    /// Equal split of each base station's bandwidth among attached vehicles.
    pub fn bandwidth_shares(&self, state: &SystemState) -> Vec<f64> {
        equal_shares(
            &state.attached(),
            self.config.n_nodes(),
            self.config.params.bs_bandwidth,
        )
    }

    fn check_decisions(&self, state: &SystemState, decisions: &[NodeId]) -> Result<()> {
        if decisions.len() != state.vehicles.len() {
            return Err(Error::invalid(format!(
                "{} decisions for {} vehicles",
                decisions.len(),
                state.vehicles.len()
            )));
        }
        let m = self.config.n_nodes();
        if let Some(d) = decisions.iter().find(|d| d.0 >= m) {
            return Err(Error::invalid(format!("decision {d} outside 0..{m}")));
        }
        Ok(())
    }

    /// Delays of the slot that `decisions` would produce from `state`, using
    /// the configured allocation mode. Pure: nothing advances.
    pub fn evaluate(&self, state: &SystemState, decisions: &[NodeId]) -> Result<SlotEvaluation> {
        self.evaluate_with(
            state,
            decisions,
            AllocationSource::Mode(self.config.allocation_mode),
        )
    }

    pub fn evaluate_with(
        &self,
        state: &SystemState,
        decisions: &[NodeId],
        allocation: AllocationSource<'_>,
    ) -> Result<SlotEvaluation> {
        if state.slot >= self.config.horizon {
            return Err(Error::EpisodeFinished(state.slot));
        }
        self.check_decisions(state, decisions)?;
        let topo = &self.config.topology;
        let params = &self.config.params;
        let n = state.vehicles.len();

        // Migrate.
        let mut migration = Vec::with_capacity(n);
        let mut migrations = 0;
        for (v, &d) in state.vehicles.iter().zip(decisions) {
            let hops = topo.hops_unchecked(v.hosting, d);
            if hops > 0 {
                migrations += 1;
            }
            migration.push(delay::migration_delay(&v.service, hops, params));
        }

        // Move and re-attach.
        let side = topo.region_side();
        let positions: Vec<Position> = self
            .traces
            .iter()
            .map(|t| t.at(state.slot + 1).clamped(side))
            .collect();
        let attached: Vec<NodeId> = positions.iter().map(|p| topo.nearest_node(*p)).collect();

        // Transmit.
        let shares = equal_shares(&attached, topo.len(), params.bs_bandwidth);
        let mut access = Vec::with_capacity(n);
        let mut backhaul = Vec::with_capacity(n);
        for u in 0..n {
            let task = &state.vehicles[u].task;
            let dist = positions[u]
                .distance(&topo.position(attached[u]))
                .max(MIN_LINK_DISTANCE_M);
            let snr = delay::snr(task, dist, params)?;
            access.push(delay::access_delay(task, shares[u], snr)?);
            let hops = topo.hops_unchecked(attached[u], decisions[u]);
            backhaul.push(delay::backhaul_delay(task, hops, params));
        }

        // Compute.
        let cycles: Vec<f64> = state
            .vehicles
            .iter()
            .map(|v| delay::required_cycles(&v.task))
            .collect();
        let proportions = allocate_per_node(decisions, &cycles, topo.len(), allocation)?;
        let mut breakdowns = Vec::with_capacity(n);
        for u in 0..n {
            breakdowns.push(DelayBreakdown {
                migration: migration[u],
                access: access[u],
                backhaul: backhaul[u],
                computation: delay::computation_delay(cycles[u], proportions[u], params)?,
            });
        }

        Ok(SlotEvaluation {
            breakdowns,
            proportions,
            positions,
            attached,
            hosting: decisions.to_vec(),
            migrations,
        })
    }

    pub fn step(&mut self, state: &SystemState, decisions: &[NodeId]) -> Result<StepOutcome> {
        self.step_with(
            state,
            decisions,
            AllocationSource::Mode(self.config.allocation_mode),
        )
    }

    /// Apply one slot and draw the next slot's tasks.
    pub fn step_with(
        &mut self,
        state: &SystemState,
        decisions: &[NodeId],
        allocation: AllocationSource<'_>,
    ) -> Result<StepOutcome> {
        let evaluation = self.evaluate_with(state, decisions, allocation)?;
        let reward = evaluation.reward();
        let mut vehicles = Vec::with_capacity(state.vehicles.len());
        for (u, v) in state.vehicles.iter().enumerate() {
            let task = self.sample_task(v.task.tx_power);
            vehicles.push(VehicleState {
                position: evaluation.positions[u],
                attached: evaluation.attached[u],
                hosting: decisions[u],
                task,
                service: v.service,
                previous_decision: decisions[u],
            });
        }
        Ok(StepOutcome {
            state: SystemState {
                slot: state.slot + 1,
                vehicles,
            },
            reward,
            evaluation,
        })
    }

    pub fn is_done(&self, state: &SystemState) -> bool {
        state.slot >= self.config.horizon
    }
}

fn equal_shares(attached: &[NodeId], n_nodes: usize, bandwidth: f64) -> Vec<f64> {
    let mut counts = vec![0usize; n_nodes];
    for a in attached {
        counts[a.0] += 1;
    }
    attached
        .iter()
        .map(|a| bandwidth / counts[a.0] as f64)
        .collect()
}

/// Resource share per vehicle on its hosting node. Idle nodes are skipped.
pub fn allocate_per_node(
    hosting: &[NodeId],
    cycles: &[f64],
    n_nodes: usize,
    allocation: AllocationSource<'_>,
) -> Result<Vec<f64>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (u, h) in hosting.iter().enumerate() {
        members[h.0].push(u);
    }
    let mut out = vec![0.0; hosting.len()];
    for group in members.iter().filter(|g| !g.is_empty()) {
        let shares = match allocation {
            AllocationSource::Mode(mode) => {
                let req = AllocationRequest::new(group.iter().map(|&u| cycles[u]).collect())?;
                match mode {
                    AllocationMode::Optimal => allocator::optimal_allocation(&req)?,
                    AllocationMode::Proportional => allocator::proportional_allocation(&req)?,
                }
                .proportions
            }
            AllocationSource::Logits(logits) => {
                if logits.len() != hosting.len() {
                    return Err(Error::invalid("one allocation logit per vehicle required"));
                }
                softmax(&group.iter().map(|&u| logits[u]).collect::<Vec<_>>())
            }
        };
        for (&u, e) in group.iter().zip(shares) {
            out[u] = e;
        }
    }
    Ok(out)
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

pub const EPISODE_LOG_HEADER: &str = "slot,vehicle,decision,MT,PT,ST,CT";

/// Episode log: one row per vehicle per slot, then a `total` row per slot
/// with the component sums (decision column holds the migration count).
pub struct EpisodeLog<W: Write> {
    out: W,
}

impl<W: Write> EpisodeLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{EPISODE_LOG_HEADER}")?;
        Ok(EpisodeLog { out })
    }

    pub fn record(&mut self, slot: usize, decisions: &[NodeId], eval: &SlotEvaluation) -> Result<()> {
        let mut sum = DelayBreakdown::default();
        for (u, (d, b)) in decisions.iter().zip(&eval.breakdowns).enumerate() {
            writeln!(
                self.out,
                "{slot},{u},{d},{},{},{},{}",
                b.migration, b.access, b.backhaul, b.computation
            )?;
            sum.migration += b.migration;
            sum.access += b.access;
            sum.backhaul += b.backhaul;
            sum.computation += b.computation;
        }
        writeln!(
            self.out,
            "{slot},total,{},{},{},{},{}",
            eval.migrations, sum.migration, sum.access, sum.backhaul, sum.computation
        )?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
