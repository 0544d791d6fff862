//! Decision policies: the delayed-update actor-critic and its one-step and
//! joint-allocation variants, plus rule-based and evolutionary baselines.

mod actor_critic;
mod baselines;
mod ga;
mod replay;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{AllocationMode, AllocationSource, Environment, SystemState};
use crate::error::{Error, Result};
use crate::topology::NodeId;

pub use actor_critic::{
    actor_step, critic_step, noise_sigma, select_action, train, ActionLayout, ActionScores, Agent,
    AgentCheckpoint, CurvePoint, FrozenActor, TrainOutput, TrainStats, AGENT_CHECKPOINT_FORMAT,
    CURVE_CSV_HEADER,
};
pub use baselines::{am_policy, nm_policy, AlwaysMigrate, NeverMigrate};
pub use ga::{ga_policy, GaConfig, GaPolicy, GaTrace};
pub use replay::{ReplayMemory, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Srcl,
    Ddpg,
    Jsr,
    Am,
    Nm,
    Ga,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Srcl,
        PolicyKind::Ddpg,
        PolicyKind::Jsr,
        PolicyKind::Am,
        PolicyKind::Nm,
        PolicyKind::Ga,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Srcl => "srcl",
            PolicyKind::Ddpg => "ddpg",
            PolicyKind::Jsr => "jsr",
            PolicyKind::Am => "am",
            PolicyKind::Nm => "nm",
            PolicyKind::Ga => "ga",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, PolicyKind::Srcl | PolicyKind::Ddpg | PolicyKind::Jsr)
    }

    /// Allocation each policy runs with unless overridden: the closed form
    /// for the actor-critic, demand-proportional shares for the rest. The
    /// joint variant replaces this with its own logits.
    pub fn default_allocation(self) -> AllocationMode {
        match self {
            PolicyKind::Srcl => AllocationMode::Optimal,
            _ => AllocationMode::Proportional,
        }
    }

    /// Critic updates per actor update.
    pub fn actor_delay(self, configured: usize) -> usize {
        match self {
            PolicyKind::Ddpg => 1,
            _ => configured,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower || (lower == "sr-cl" && *k == PolicyKind::Srcl))
            .ok_or_else(|| Error::invalid(format!("unknown policy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    /// Soft target update rate.
    pub tau: f64,
    /// Critic updates per actor update.
    pub delay: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Initial exploration noise standard deviation.
    pub noise_sigma: f64,
    /// Lower bound of the noise schedule as a fraction of the initial value.
    pub noise_floor: f64,
    pub clip_norm: f64,
    pub episodes: usize,
    pub hidden: Vec<usize>,
    /// Multiplier applied to rewards before they enter the replay memory.
    pub reward_scale: f64,
    /// Range of the joint variant's allocation logits.
    pub alloc_logit_scale: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            lr_actor: 1e-5,
            lr_critic: 1e-4,
            gamma: 0.95,
            tau: 1e-2,
            delay: 5,
            batch_size: 512,
            replay_capacity: 10_000,
            noise_sigma: 0.15,
            noise_floor: 0.05,
            clip_norm: 2.0,
            episodes: 200,
            hidden: crate::nn::DEFAULT_HIDDEN.to_vec(),
            reward_scale: 1.0,
            alloc_logit_scale: 3.0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("agent.{name}"), format!("must be positive, got {v}")))
            }
        };
        pos("lr_actor", self.lr_actor)?;
        pos("lr_critic", self.lr_critic)?;
        pos("clip_norm", self.clip_norm)?;
        pos("reward_scale", self.reward_scale)?;
        pos("alloc_logit_scale", self.alloc_logit_scale)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::validation("agent.gamma", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::validation("agent.tau", "must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("agent.noise_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.noise_floor) {
            return Err(Error::validation("agent.noise_floor", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("delay", self.delay),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("episodes", self.episodes),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("agent.{name}"), "must be at least 1"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("agent.hidden", "layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Migration decisions for one slot, with optional per-vehicle allocation
/// logits for the joint variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub nodes: Vec<NodeId>,
    pub alloc_logits: Option<Vec<f64>>,
}

impl Decision {
    pub fn nodes(nodes: Vec<NodeId>) -> Self {
        Decision {
            nodes,
            alloc_logits: None,
        }
    }

    pub fn allocation(&self, mode: AllocationMode) -> AllocationSource<'_> {
        match &self.alloc_logits {
            Some(l) => AllocationSource::Logits(l),
            None => AllocationSource::Mode(mode),
        }
    }
}

/// Anything that maps a state to per-vehicle hosting decisions.
pub trait Policy {
    fn decide(&mut self, env: &Environment, state: &SystemState) -> Result<Decision>;

    /// Called at the start of every episode.
    fn reset(&mut self) {}
}
