use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flate2::read::GzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    train, AgentCheckpoint, AlwaysMigrate, GaPolicy, NeverMigrate, Policy, PolicyKind, TrainOutput,
};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::traces::{
    most_active_vehicles, parse_trace_stream, read_slot_csv, resample_to_slots, synthetic_traces,
    SlotWindow, SyntheticSpec, VehicleTrace,
};

use super::config::{EnvSection, ExperimentConfig, MobilitySource, SweepValue};

pub const METRICS_CSV_HEADER: &str = "scenario,policy,sweep_axis,sweep_value,seed,total_delay_s,mt_s,ht_s,ct_s,migration_frequency,response_delay_s";
pub const TIMING_CSV_HEADER: &str = "policy,sweep_value,seed,decision_ms_mean";

/// Offset separating evaluation mobility seeds from training ones.
const EVAL_MOBILITY_OFFSET: u64 = 1 << 32;

/// Per-cell evaluation summary. Delays are per-slot means over the held-out
/// episodes, summed over vehicles; `ht_s` is access plus backhaul.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub policy: PolicyKind,
    pub sweep_axis: String,
    pub sweep_value: String,
    pub seed: u64,
    pub total_delay_s: f64,
    pub mt_s: f64,
    pub ht_s: f64,
    pub ct_s: f64,
    /// Migrations per episode.
    pub migration_frequency: f64,
    /// Mean delay of a single vehicle's task.
    pub response_delay_s: f64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub metrics: MetricsRow,
    pub decision_ms_mean: f64,
    pub training: Option<TrainOutput>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub rows: Vec<MetricsRow>,
}

/// Where the vehicles of one cell come from.
#[derive(Clone, Debug)]
pub enum MobilityPlan {
    Synthetic(SyntheticSpec),
    Fixed(Vec<VehicleTrace>),
}

impl MobilityPlan {
    pub fn traces(&self, seed: u64, index: u64) -> Result<Vec<VehicleTrace>> {
        match self {
            MobilityPlan::Synthetic(spec) => synthetic_traces(&SyntheticSpec {
                seed: derive_seed(seed, Stream::Mobility, index),
                ..*spec
            }),
            MobilityPlan::Fixed(t) => Ok(t.clone()),
        }
    }
}

/// Read a raw GPS trace (gzip when the name ends in `.gz`) or a slot CSV.
pub fn load_trace_file(
    path: &Path,
    env: &EnvSection,
    cfg: &ExperimentConfig,
) -> Result<Vec<VehicleTrace>> {
    let name = path.to_string_lossy();
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if name.ends_with(".gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let reader = BufReader::new(reader);
    let stripped = name.trim_end_matches(".gz");
    let traces = if stripped.ends_with(".csv") {
        read_slot_csv(reader)?
    } else {
        let parsed = parse_trace_stream(reader)?;
        let start = cfg
            .mobility
            .trace_start
            .unwrap_or_else(|| parsed.records.iter().map(|r| r.timestamp).fold(f64::INFINITY, f64::min));
        let window = SlotWindow {
            start,
            slot_seconds: cfg.mobility.slot_seconds,
            slots: env.horizon,
        };
        let keep = most_active_vehicles(&parsed.records, window, env.n_vehicles);
        let records: Vec<_> = parsed
            .records
            .into_iter()
            .filter(|r| keep.contains(&r.vehicle_id))
            .collect();
        resample_to_slots(&records, &cfg.mobility.bbox, env.region_side, window)?
    };
    if traces.len() < env.n_vehicles {
        return Err(Error::invalid(format!(
            "{} has {} usable vehicles, {} required",
            path.display(),
            traces.len(),
            env.n_vehicles
        )));
    }
    Ok(traces)
}

pub fn mobility_plan(cfg: &ExperimentConfig, env: &EnvSection) -> Result<MobilityPlan> {
    match cfg.mobility.source {
        MobilitySource::Synthetic => Ok(MobilityPlan::Synthetic(SyntheticSpec {
            model: cfg.mobility.model,
            n_vehicles: env.n_vehicles,
            slots: env.horizon,
            region_side: env.region_side,
            speed: cfg.mobility.speed,
            slot_seconds: cfg.mobility.slot_seconds,
            seed: 0,
        })),
        MobilitySource::Trace => {
            let path = cfg
                .mobility
                .trace_path
                .as_ref()
                .ok_or_else(|| Error::validation("mobility.trace_path", "missing"))?;
            Ok(MobilityPlan::Fixed(load_trace_file(path, env, cfg)?))
        }
    }
}

/// Environment of training episode `episode` for a cell seed.
pub fn train_env(
    cfg: &ExperimentConfig,
    env: &EnvSection,
    plan: &MobilityPlan,
    seed: u64,
    episode: usize,
) -> Result<Environment> {
    let traces = plan.traces(seed, episode as u64)?;
    let c = env.env_config(cfg.policy, derive_seed(seed, Stream::TrainEpisode, episode as u64))?;
    Environment::new(c, &traces)
}

/// Environment of held-out evaluation episode `k`. It depends only on the
/// seed and the environment section, so every policy sees the same ones.
pub fn eval_env(
    cfg: &ExperimentConfig,
    env: &EnvSection,
    plan: &MobilityPlan,
    seed: u64,
    k: usize,
) -> Result<Environment> {
    let traces = plan.traces(seed, EVAL_MOBILITY_OFFSET + k as u64)?;
    let c = env.env_config(cfg.policy, derive_seed(seed, Stream::EvalEpisode, k as u64))?;
    Environment::new(c, &traces)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeTotals {
    pub slots: usize,
    pub mt: f64,
    pub ht: f64,
    pub ct: f64,
    pub total: f64,
    pub migrations: usize,
    pub decision_secs: f64,
    pub decisions: usize,
}

/// Roll one episode with `policy`, timing only the decisions.
pub fn run_episode(env: &mut Environment, policy: &mut dyn Policy) -> Result<EpisodeTotals> {
    policy.reset();
    let mode = env.config().allocation_mode;
    let mut state = env.reset();
    let mut t = EpisodeTotals::default();
    while !env.is_done(&state) {
        let start = Instant::now();
        let d = policy.decide(env, &state)?;
        t.decision_secs += start.elapsed().as_secs_f64();
        t.decisions += 1;
        let out = env.step_with(&state, &d.nodes, d.allocation(mode))?;
        for b in out.breakdowns() {
            t.mt += b.migration;
            t.ht += b.communication();
            t.ct += b.computation;
        }
        t.total += -out.reward;
        t.migrations += out.evaluation.migrations;
        t.slots += 1;
        state = out.state;
    }
    Ok(t)
}

/// Evaluate a policy over the held-out episodes of one cell.
pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    env: &EnvSection,
    plan: &MobilityPlan,
    seed: u64,
    policy: &mut dyn Policy,
) -> Result<(Vec<EpisodeTotals>, f64)> {
    let mut all = Vec::with_capacity(cfg.eval.episodes);
    let (mut secs, mut n) = (0.0, 0usize);
    for k in 0..cfg.eval.episodes {
        let mut e = eval_env(cfg, env, plan, seed, k)?;
        let t = run_episode(&mut e, policy)?;
        secs += t.decision_secs;
        n += t.decisions;
        all.push(t);
    }
    Ok((all, 1e3 * secs / n.max(1) as f64))
}

fn summarise(
    cfg: &ExperimentConfig,
    value: Option<&SweepValue>,
    seed: u64,
    n_vehicles: usize,
    episodes: &[EpisodeTotals],
) -> MetricsRow {
    let k = episodes.len() as f64;
    let per_slot = |f: fn(&EpisodeTotals) -> f64| {
        episodes.iter().map(|e| f(e) / e.slots as f64).sum::<f64>() / k
    };
    let mt = per_slot(|e| e.mt);
    let ht = per_slot(|e| e.ht);
    let ct = per_slot(|e| e.ct);
    let total = mt + ht + ct;
    MetricsRow {
        scenario: cfg.scenario.clone(),
        policy: cfg.policy,
        sweep_axis: cfg.sweep_axis_name().into(),
        sweep_value: value.map_or_else(|| "-".into(), |v| v.to_string()),
        seed,
        total_delay_s: total,
        mt_s: mt,
        ht_s: ht,
        ct_s: ct,
        migration_frequency: episodes.iter().map(|e| e.migrations as f64).sum::<f64>() / k,
        response_delay_s: total / n_vehicles as f64,
    }
}

/// Train (or load) and evaluate one (sweep value, seed) cell.
pub fn run_cell(cfg: &ExperimentConfig, value: Option<&SweepValue>, seed: u64) -> Result<CellResult> {
    let env = cfg.env_for(value)?;
    let plan = mobility_plan(cfg, &env)?;
    let mut training = None;
    let mut policy: Box<dyn Policy> = match cfg.policy {
        PolicyKind::Am => Box::new(AlwaysMigrate),
        PolicyKind::Nm => Box::new(NeverMigrate),
        PolicyKind::Ga => Box::new(GaPolicy::new(cfg.ga.clone(), seed)),
        kind => {
            if let Some(path) = &cfg.eval.checkpoint {
                let ck = AgentCheckpoint::load(path)?;
                if ck.kind != kind {
                    return Err(Error::invalid(format!(
                        "checkpoint holds a {} agent, config asks for {kind}",
                        ck.kind
                    )));
                }
                Box::new(ck.frozen())
            } else {
                let agent_cfg = crate::agents::AgentConfig {
                    seed,
                    ..cfg.agent.clone()
                };
                let out = train(kind, &agent_cfg, |e| train_env(cfg, &env, &plan, seed, e))?;
                let frozen = out.agent.frozen();
                training = Some(out);
                Box::new(frozen)
            }
        }
    };
    let (episodes, decision_ms_mean) = evaluate_policy(cfg, &env, &plan, seed, policy.as_mut())?;
    Ok(CellResult {
        metrics: summarise(cfg, value, seed, env.n_vehicles, &episodes),
        decision_ms_mean,
        training,
    })
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    for col in METRICS_CSV_HEADER.split(',') {
        if !header.iter().any(|h| h == col) {
            return Err(Error::validation(
                path.display().to_string(),
                format!("missing column `{col}`"),
            ));
        }
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

fn cell_tag(policy: PolicyKind, cell: usize, seed: u64) -> String {
    format!("{policy}_v{cell}_s{seed}")
}

/// Run every (sweep value, seed) cell and write the run directory:
/// `metrics.csv`, `timing.csv`, `manifest.toml`, plus `curves/` and
/// `checkpoints/` for learning policies. Cells run in parallel; rows are
/// written in (sweep value, seed) order.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let cells: Vec<(usize, Option<SweepValue>, u64)> = cfg
        .sweep_cells()
        .into_iter()
        .enumerate()
        .flat_map(|(i, v)| cfg.seeds.iter().map(move |&s| (i, v.clone(), s)))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|(_, v, s)| run_cell(cfg, v.as_ref(), *s))
        .collect::<Result<_>>()?;

    write_manifest(cfg, &out_dir.join("manifest.toml"))?;
    let metrics_path = out_dir.join("metrics.csv");
    let rows: Vec<MetricsRow> = results.iter().map(|r| r.metrics.clone()).collect();
    write_metrics_csv(&rows, BufWriter::new(File::create(&metrics_path)?))?;

    let mut timing = BufWriter::new(File::create(out_dir.join("timing.csv"))?);
    writeln!(timing, "{TIMING_CSV_HEADER}")?;
    for r in &results {
        let m = &r.metrics;
        writeln!(timing, "{},{},{},{}", m.policy, m.sweep_value, m.seed, r.decision_ms_mean)?;
    }
    timing.flush()?;

    for ((cell, _, seed), r) in cells.iter().zip(&results) {
        if let Some(t) = &r.training {
            let tag = cell_tag(cfg.policy, *cell, *seed);
            let curves = out_dir.join("curves");
            let ckpts = out_dir.join("checkpoints");
            fs::create_dir_all(&curves)?;
            fs::create_dir_all(&ckpts)?;
            let mut f = BufWriter::new(File::create(curves.join(format!("{tag}.csv")))?);
            t.write_curve_csv(&mut f)?;
            f.flush()?;
            t.agent.checkpoint().save(&ckpts.join(format!("{tag}.json")))?;
        }
    }
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        metrics_path,
        rows,
    })
}

/// The fully resolved configuration, preceded by comments recording the
/// fixed choices it does not expose. Loading it reproduces the run.
pub fn write_manifest(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# edgemig {} run manifest", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "# adam: beta1 = 0.9, beta2 = 0.999, eps = 1e-8")?;
    writeln!(
        f,
        "# exploration: sigma_e = noise_sigma * max(noise_floor, 1 - e / episodes)"
    )?;
    writeln!(f, "# init: uniform(+-sqrt(6 / fan_in)), zero bias")?;
    writeln!(
        f,
        "# trace vehicles: the n_vehicles with most records inside the window"
    )?;
    writeln!(f, "# evaluation: {} held-out episodes, no exploration noise", cfg.eval.episodes)?;
    f.write_all(cfg.to_toml_string()?.as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    const SMALL: &str = r#"
scenario = "small"
policy = "nm"
seeds = [1]
[env]
rows = 2
cols = 2
region_side = 2000.0
n_vehicles = 4
horizon = 8
[eval]
episodes = 2
"#;

    #[test]
    fn nm_single_cell() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg(SMALL), dir.path()).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].migration_frequency, 0.0);
        assert_eq!(s.rows[0].mt_s, 0.0);
        let back = read_metrics_csv(&s.metrics_path).unwrap();
        assert_eq!(back, s.rows);
        let text = fs::read_to_string(&s.metrics_path).unwrap();
        assert!(text.starts_with(METRICS_CSV_HEADER));
        assert!(dir.path().join("manifest.toml").exists());
    }

    #[test]
    fn sweep_cardinality_and_component_sums() {
        let text = format!(
            "{SMALL}\n[sweep]\naxis = \"server_capacity\"\nvalues = [3e10, 6e10, 9e10]\n"
        )
        .replace("seeds = [1]", "seeds = [1, 2]");
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg(&text), dir.path()).unwrap();
        assert_eq!(s.rows.len(), 6);
        for r in &s.rows {
            assert!((r.total_delay_s - (r.mt_s + r.ht_s + r.ct_s)).abs() < 1e-9);
        }
        assert_eq!(s.rows[0].sweep_value, "30000000000");
        assert_eq!(s.rows[1].seed, 2);
        assert!(s.rows[0].ct_s > s.rows[4].ct_s);
    }

    #[test]
    fn manifest_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&SMALL.replace("\"nm\"", "\"ga\""));
        let a = run_experiment(&c, &dir.path().join("a")).unwrap();
        let m = ExperimentConfig::load(&dir.path().join("a/manifest.toml")).unwrap();
        assert_eq!(m, c);
        let b = run_experiment(&m, &dir.path().join("b")).unwrap();
        assert_eq!(
            fs::read(&a.metrics_path).unwrap(),
            fs::read(&b.metrics_path).unwrap()
        );
    }

    #[test]
    fn learning_cell_writes_curves_and_checkpoint() {
        let text = SMALL.replace("\"nm\"", "\"srcl\"")
            + "[agent]\nepisodes = 2\nbatch_size = 4\nhidden = [8]\n";
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg(&text), dir.path()).unwrap();
        let curve = fs::read_to_string(dir.path().join("curves/srcl_v0_s1.csv")).unwrap();
        assert_eq!(curve.lines().count(), 3);
        let ck = dir.path().join("checkpoints/srcl_v0_s1.json");
        let mut eval_cfg = cfg(&text);
        eval_cfg.eval.checkpoint = Some(ck);
        let a = run_cell(&eval_cfg, None, 1).unwrap();
        assert!(a.training.is_none());
        let b = run_cell(&cfg(&text), None, 1).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
}
