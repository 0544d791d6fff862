use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{AllocationSource, Environment, SystemState};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, init_params, soft_update, AdamConfig, NetworkSpec, OptimizerState,
    OutputActivation, ParameterSet,
};
use crate::rng::{derive_seed, rng_from_seed, SimRng, Stream};
use crate::topology::NodeId;

use super::{AgentConfig, Decision, Policy, PolicyKind, ReplayMemory, Transition};

pub const CURVE_CSV_HEADER: &str = "episode,mean_reward,migration_frequency";
pub const AGENT_CHECKPOINT_FORMAT: &str = "edgemig-agent";
const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// Shape of the actor output: a `vehicles x nodes` score block, followed by
/// one allocation logit per vehicle for the joint variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLayout {
    pub n_vehicles: usize,
    pub n_nodes: usize,
    pub alloc_logits: bool,
}

impl ActionLayout {
    pub fn scores_len(&self) -> usize {
        self.n_vehicles * self.n_nodes
    }

    pub fn action_dim(&self) -> usize {
        self.scores_len() + if self.alloc_logits { self.n_vehicles } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionScores {
    pub values: Vec<f64>,
    pub layout: ActionLayout,
}

impl ActionScores {
    pub fn row(&self, vehicle: usize) -> &[f64] {
        let m = self.layout.n_nodes;
        &self.values[vehicle * m..(vehicle + 1) * m]
    }

    /// Per-row argmax, lowest index on ties.
    pub fn decisions(&self) -> Vec<NodeId> {
        (0..self.layout.n_vehicles)
            .map(|u| {
                let row = self.row(u);
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                NodeId(best)
            })
            .collect()
    }

    /// Allocation logits scaled into `[-scale, scale]`, if present.
    pub fn alloc_logits(&self, scale: f64) -> Option<Vec<f64>> {
        self.layout.alloc_logits.then(|| {
            self.values[self.layout.scores_len()..]
                .iter()
                .map(|v| v * scale)
                .collect()
        })
    }
}

/// Bounded actor output plus clamped Gaussian noise, and the discrete
/// decisions it induces. No randomness is drawn when `sigma` is zero.
pub fn select_action(
    actor: &ParameterSet,
    obs: &[f64],
    sigma: f64,
    rng: &mut SimRng,
    layout: ActionLayout,
) -> Result<(ActionScores, Vec<NodeId>)> {
    if actor.spec().output_size() != layout.action_dim() {
        return Err(Error::invalid(format!(
            "actor emits {} values, layout needs {}",
            actor.spec().output_size(),
            layout.action_dim()
        )));
    }
    let mut values = actor.forward(obs)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in &mut values {
            *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    let scores = ActionScores { values, layout };
    let d = scores.decisions();
    Ok((scores, d))
}

/// Exploration noise for an episode: linear decay to a floor.
pub fn noise_sigma(cfg: &AgentConfig, episode: usize) -> f64 {
    let frac = 1.0 - episode as f64 / cfg.episodes as f64;
    cfg.noise_sigma * frac.max(cfg.noise_floor)
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a Vec<f64>>, width: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::invalid("transition width mismatch"));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::Internal(e.to_string()))
}

/// One critic regression step towards `r + gamma * Q'(s', mu'(s'))`.
/// Returns the loss before the step.
pub fn critic_step(
    batch: &[&Transition],
    critic: &mut ParameterSet,
    opt: &mut OptimizerState,
    target_actor: &ParameterSet,
    target_critic: &ParameterSet,
    gamma: f64,
    clip_norm: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let obs_dim = target_actor.spec().input_size();
    let act_dim = target_actor.spec().output_size();
    let n = batch.len() as f64;
    let s = stack(batch.iter().map(|t| &t.obs), obs_dim)?;
    let a = stack(batch.iter().map(|t| &t.action), act_dim)?;
    let s2 = stack(batch.iter().map(|t| &t.next_obs), obs_dim)?;

    let a2 = target_actor.forward_batch(s2.view())?;
    let q2 = target_critic.forward_batch(concatenate![Axis(1), s2, a2].view())?;
    let y: Vec<f64> = batch
        .iter()
        .zip(q2.column(0))
        .map(|(t, q)| t.reward + gamma * q)
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite critic target".into()));
    }

    let cache = critic.forward_cached(concatenate![Axis(1), s, a].view())?;
    let q = cache.output();
    let mut grad = Array2::zeros((batch.len(), 1));
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let d = q[[i, 0]] - y[i];
        loss += d * d;
        grad[[i, 0]] = 2.0 * d / n;
    }
    let (g, _) = critic.backward(&cache, grad.view())?;
    adam_step(critic, &g, opt, clip_norm)?;
    Ok(loss / n)
}

/// One actor ascent step on the mean critic value of its own actions.
/// Returns the policy-gradient norm before clipping.
pub fn actor_step(
    batch: &[&Transition],
    actor: &mut ParameterSet,
    opt: &mut OptimizerState,
    critic: &ParameterSet,
    clip_norm: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let obs_dim = actor.spec().input_size();
    let n = batch.len();
    let s = stack(batch.iter().map(|t| &t.obs), obs_dim)?;
    let cache_a = actor.forward_cached(s.view())?;
    let a = cache_a.output().clone();
    let cache_c = critic.forward_cached(concatenate![Axis(1), s, a].view())?;
    // Minimise -mean(Q).
    let grad_q = Array2::from_elem((n, 1), -1.0 / n as f64);
    let (_, gx) = critic.backward(&cache_c, grad_q.view())?;
    let ga = gx.slice(s![.., obs_dim..]).to_owned();
    let (g, _) = actor.backward(&cache_a, ga.view())?;
    adam_step(actor, &g, opt, clip_norm)
}

/// Online and target networks with their optimisers and the update
/// schedule: the critic learns every call, the actor and both targets only
/// once per `delay` critic updates.
#[derive(Clone, Debug)]
pub struct Agent {
    pub kind: PolicyKind,
    pub config: AgentConfig,
    pub layout: ActionLayout,
    pub actor: ParameterSet,
    pub critic: ParameterSet,
    pub target_actor: ParameterSet,
    pub target_critic: ParameterSet,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    delay: usize,
    critic_updates: u64,
    actor_updates: u64,
    last_actor_at: Option<u64>,
}

impl Agent {
    pub fn new(kind: PolicyKind, config: AgentConfig, obs_dim: usize, layout: ActionLayout) -> Result<Self> {
        if !kind.is_learning() {
            return Err(Error::invalid(format!("{kind} is not a learning policy")));
        }
        config.validate()?;
        let actor_spec = NetworkSpec::mlp(
            obs_dim,
            &config.hidden,
            layout.action_dim(),
            OutputActivation::Bounded,
        )?;
        let critic_spec = NetworkSpec::mlp(
            obs_dim + layout.action_dim(),
            &config.hidden,
            1,
            OutputActivation::Identity,
        )?;
        let actor = init_params(&actor_spec, derive_seed(config.seed, Stream::NetworkInit, 0))?;
        let critic = init_params(&critic_spec, derive_seed(config.seed, Stream::NetworkInit, 1))?;
        Ok(Agent {
            kind,
            layout,
            actor_opt: OptimizerState::new(&actor, AdamConfig::with_lr(config.lr_actor)),
            critic_opt: OptimizerState::new(&critic, AdamConfig::with_lr(config.lr_critic)),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            delay: kind.actor_delay(config.delay),
            config,
            critic_updates: 0,
            actor_updates: 0,
            last_actor_at: None,
        })
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let loss = critic_step(
            batch,
            &mut self.critic,
            &mut self.critic_opt,
            &self.target_actor,
            &self.target_critic,
            self.config.gamma,
            self.config.clip_norm,
        )?;
        self.critic_updates += 1;
        Ok(loss)
    }

    /// Whether the schedule allows an actor update now.
    pub fn actor_due(&self) -> bool {
        self.critic_updates > 0
            && self.critic_updates.is_multiple_of(self.delay as u64)
            && self.last_actor_at != Some(self.critic_updates)
    }

    /// Actor step followed by soft updates of both targets. Fails with a
    /// contract violation when the schedule does not allow it.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        if !self.actor_due() {
            return Err(Error::ContractViolation(format!(
                "actor update after {} critic updates with delay {}",
                self.critic_updates, self.delay
            )));
        }
        let norm = actor_step(
            batch,
            &mut self.actor,
            &mut self.actor_opt,
            &self.critic,
            self.config.clip_norm,
        )?;
        soft_update(&mut self.target_actor, &self.actor, self.config.tau)?;
        soft_update(&mut self.target_critic, &self.critic, self.config.tau)?;
        self.last_actor_at = Some(self.critic_updates);
        self.actor_updates += 1;
        Ok(norm)
    }

    pub fn frozen(&self) -> FrozenActor {
        FrozenActor::new(
            self.actor.clone(),
            self.layout,
            self.config.alloc_logit_scale,
        )
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: AGENT_CHECKPOINT_FORMAT.into(),
            version: AGENT_CHECKPOINT_VERSION,
            kind: self.kind,
            seed: self.config.seed,
            layout: self.layout,
            alloc_logit_scale: self.config.alloc_logit_scale,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        }
    }
}

/// Saved trained agent (JSON). The actor is what evaluation needs; the
/// critic is kept for inspection.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub kind: PolicyKind,
    pub seed: u64,
    pub layout: ActionLayout,
    pub alloc_logit_scale: f64,
    pub actor: ParameterSet,
    pub critic: ParameterSet,
}

impl AgentCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut f, self).map_err(|e| Error::Internal(e.to_string()))?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        let c: AgentCheckpoint =
            serde_json::from_reader(f).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if c.format != AGENT_CHECKPOINT_FORMAT || c.version != AGENT_CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        if c.actor.spec().output_size() != c.layout.action_dim() {
            return Err(Error::Parse("actor output does not match layout".into()));
        }
        Ok(c)
    }

    pub fn frozen(&self) -> FrozenActor {
        FrozenActor::new(self.actor.clone(), self.layout, self.alloc_logit_scale)
    }
}

/// A trained actor acting greedily (no exploration noise).
#[derive(Clone, Debug)]
pub struct FrozenActor {
    actor: ParameterSet,
    layout: ActionLayout,
    alloc_logit_scale: f64,
    rng: SimRng,
}

impl FrozenActor {
    pub fn new(actor: ParameterSet, layout: ActionLayout, alloc_logit_scale: f64) -> Self {
        FrozenActor {
            actor,
            layout,
            alloc_logit_scale,
            rng: rng_from_seed(0),
        }
    }
}

impl Policy for FrozenActor {
    fn decide(&mut self, env: &Environment, state: &SystemState) -> Result<Decision> {
        let obs = env.observe(state);
        let (scores, nodes) = select_action(&self.actor, obs.as_slice(), 0.0, &mut self.rng, self.layout)?;
        Ok(Decision {
            nodes,
            alloc_logits: scores.alloc_logits(self.alloc_logit_scale),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Mean per-slot reward over the episode.
    pub mean_reward: f64,
    /// Migrations in the episode.
    pub migration_frequency: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub transitions: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    pub stats: TrainStats,
}

impl TrainOutput {
    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CURVE_CSV_HEADER}")?;
        for p in &self.curve {
            writeln!(out, "{},{},{}", p.episode, p.mean_reward, p.migration_frequency)?;
        }
        Ok(())
    }
}

/// Full training loop. `make_env(e)` supplies the environment for episode
/// `e`; learning starts once the replay memory holds a full batch.
pub fn train<F>(kind: PolicyKind, config: &AgentConfig, mut make_env: F) -> Result<TrainOutput>
where
    F: FnMut(usize) -> Result<Environment>,
{
    config.validate()?;
    let mut env = make_env(0)?;
    let layout = ActionLayout {
        n_vehicles: env.config().n_vehicles,
        n_nodes: env.config().n_nodes(),
        alloc_logits: kind == PolicyKind::Jsr,
    };
    let mut agent = Agent::new(kind, config.clone(), env.config().observation_len(), layout)?;
    let mut replay = ReplayMemory::new(config.replay_capacity)?;
    let mut explore = rng_from_seed(derive_seed(config.seed, Stream::Exploration, 0));
    let mut sampler = rng_from_seed(derive_seed(config.seed, Stream::Replay, 0));
    let mut curve = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        if episode > 0 {
            env = make_env(episode)?;
        }
        let c = env.config();
        if c.n_vehicles != layout.n_vehicles || c.n_nodes() != layout.n_nodes {
            return Err(Error::invalid("episode environments must share their dimensions"));
        }
        let mode = c.allocation_mode;
        let sigma = noise_sigma(config, episode);
        let mut state = env.reset();
        let mut obs = env.observe(&state).0;
        let (mut total, mut migrations, mut slots) = (0.0, 0usize, 0usize);
        while !env.is_done(&state) {
            let (scores, nodes) = select_action(&agent.actor, &obs, sigma, &mut explore, layout)?;
            let logits = scores.alloc_logits(config.alloc_logit_scale);
            let source = match &logits {
                Some(l) => AllocationSource::Logits(l),
                None => AllocationSource::Mode(mode),
            };
            let out = env.step_with(&state, &nodes, source)?;
            let next_obs = env.observe(&out.state).0;
            replay.push(Transition {
                obs,
                action: scores.values,
                reward: out.reward * config.reward_scale,
                next_obs: next_obs.clone(),
            });
            if replay.len() >= config.batch_size {
                let batch = replay.sample(config.batch_size, &mut sampler)?;
                agent.critic_update(&batch)?;
                if agent.actor_due() {
                    agent.actor_update(&batch)?;
                }
            }
            total += out.reward;
            migrations += out.evaluation.migrations;
            slots += 1;
            state = out.state;
            obs = next_obs;
        }
        curve.push(CurvePoint {
            episode,
            mean_reward: total / slots.max(1) as f64,
            migration_frequency: migrations as f64,
        });
    }
    let stats = TrainStats {
        transitions: replay.inserted(),
        critic_updates: agent.critic_updates(),
        actor_updates: agent.actor_updates(),
    };
    Ok(TrainOutput { agent, curve, stats })
}
