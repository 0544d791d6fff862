use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, SystemState};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng, Stream};
use crate::topology::NodeId;

use super::{Decision, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `1 / vehicles` when unset.
    pub mutation_rate: Option<f64>,
    pub tournament: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 40,
            generations: 30,
            crossover_rate: 0.9,
            mutation_rate: None,
            tournament: 2,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::validation("ga.population", "must be at least 2"));
        }
        if self.tournament == 0 {
            return Err(Error::validation("ga.tournament", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::validation("ga.crossover_rate", "must lie in [0, 1]"));
        }
        if let Some(m) = self.mutation_rate {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::validation("ga.mutation_rate", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Outcome of one GA search: the best individual and the best fitness after
/// initialisation and after every generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaTrace {
    pub best: Vec<NodeId>,
    pub best_fitness: f64,
    pub history: Vec<f64>,
}

/// Search decision vectors whose fitness is the reward of a hypothetical
/// step from `state`. `seeds` are placed in the initial population ahead of
/// random individuals.
pub fn ga_policy(
    state: &SystemState,
    env: &Environment,
    cfg: &GaConfig,
    rng: &mut SimRng,
    seeds: &[Vec<NodeId>],
) -> Result<GaTrace> {
    cfg.validate()?;
    let u = state.vehicles.len();
    let m = env.topology().len();
    let pm = cfg.mutation_rate.unwrap_or(1.0 / u as f64);
    let fitness = |ind: &[NodeId]| env.evaluate(state, ind).map(|e| e.reward());

    let mut pop: Vec<Vec<NodeId>> = seeds.iter().take(cfg.population).cloned().collect();
    while pop.len() < cfg.population {
        pop.push((0..u).map(|_| NodeId(rng.random_range(0..m))).collect());
    }
    let mut fit = pop.iter().map(|p| fitness(p)).collect::<Result<Vec<f64>>>()?;
    let mut history = Vec::with_capacity(cfg.generations + 1);
    let mut best = argmax(&fit);
    history.push(fit[best]);

    for _ in 0..cfg.generations {
        let mut next = Vec::with_capacity(cfg.population);
        let mut next_fit = Vec::with_capacity(cfg.population);
        next.push(pop[best].clone());
        next_fit.push(fit[best]);
        while next.len() < cfg.population {
            let a = tournament(&fit, cfg.tournament, rng);
            let b = tournament(&fit, cfg.tournament, rng);
            let mut child = if rng.random_bool(cfg.crossover_rate) {
                pop[a]
                    .iter()
                    .zip(&pop[b])
                    .map(|(x, y)| if rng.random_bool(0.5) { *x } else { *y })
                    .collect()
            } else {
                pop[a].clone()
            };
            for g in &mut child {
                if rng.random_bool(pm) {
                    *g = NodeId(rng.random_range(0..m));
                }
            }
            next_fit.push(fitness(&child)?);
            next.push(child);
        }
        pop = next;
        fit = next_fit;
        best = argmax(&fit);
        history.push(fit[best]);
    }
    Ok(GaTrace {
        best: pop.swap_remove(best),
        best_fitness: fit[best],
        history,
    })
}

/// Index of the highest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn tournament(fit: &[f64], k: usize, rng: &mut SimRng) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..k {
        let c = rng.random_range(0..fit.len());
        if fit[c] > fit[best] {
            best = c;
        }
    }
    best
}

/// GA as a slot-by-slot policy with its own seeded stream.
#[derive(Clone, Debug)]
pub struct GaPolicy {
    pub config: GaConfig,
    rng: SimRng,
    seed: u64,
    episode: u64,
    /// When set, every search's fitness history is appended here.
    pub histories: Option<Vec<Vec<f64>>>,
}

impl GaPolicy {
    pub fn new(config: GaConfig, seed: u64) -> Self {
        GaPolicy {
            config,
            rng: rng_from_seed(derive_seed(seed, Stream::Genetic, 0)),
            seed,
            episode: 0,
            histories: None,
        }
    }

    pub fn recording(mut self) -> Self {
        self.histories = Some(Vec::new());
        self
    }
}

impl Policy for GaPolicy {
    fn decide(&mut self, env: &Environment, state: &SystemState) -> Result<Decision> {
        let trace = ga_policy(state, env, &self.config, &mut self.rng, &[])?;
        if let Some(h) = &mut self.histories {
            h.push(trace.history);
        }
        Ok(Decision::nodes(trace.best))
    }

    fn reset(&mut self) {
        self.episode += 1;
        self.rng = rng_from_seed(derive_seed(self.seed, Stream::Genetic, self.episode));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, EnvConfig};
    use crate::topology::{Connectivity, Position, Topology};
    use crate::traces::VehicleTrace;

    fn one_vehicle(p: Position, rows: usize, cols: usize) -> (Environment, SystemState) {
        let topo = Topology::grid(rows, cols, 2000.0, Connectivity::High).unwrap();
        let tr = vec![VehicleTrace {
            vehicle_id: 0,
            positions: vec![p; 4],
        }];
        reset(EnvConfig::new(topo, 1, 4, 5), &tr).unwrap()
    }

    #[test]
    fn finds_brute_force_optimum_on_two_nodes() {
        let (env, s) = one_vehicle(Position::new(1500.0, 300.0), 1, 2);
        let brute = (0..2)
            .map(|m| env.evaluate(&s, &[NodeId(m)]).unwrap().reward())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        let mut rng = rng_from_seed(1);
        let cfg = GaConfig {
            population: 4,
            generations: 5,
            ..GaConfig::default()
        };
        let t = ga_policy(&s, &env, &cfg, &mut rng, &[]).unwrap();
        assert_eq!(t.best, vec![NodeId(brute.0)]);
        assert_eq!(t.best_fitness, brute.1);
    }

    #[test]
    fn elitism_keeps_seeded_stay_vector() {
        let (env, s) = one_vehicle(Position::new(500.0, 500.0), 2, 2);
        let stay = s.hosting();
        let mut rng = rng_from_seed(2);
        let t = ga_policy(&s, &env, &GaConfig::default(), &mut rng, &[stay.clone()]).unwrap();
        assert_eq!(t.best, stay);
        assert!(t.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(t.history.len(), 31);
    }

    #[test]
    fn rejects_tiny_population() {
        let (env, s) = one_vehicle(Position::new(500.0, 500.0), 2, 2);
        let cfg = GaConfig {
            population: 1,
            ..GaConfig::default()
        };
        assert!(ga_policy(&s, &env, &cfg, &mut rng_from_seed(0), &[]).is_err());
    }
}
